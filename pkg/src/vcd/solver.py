"""Box-constrained least squares for the prefiltered light field.

Minimizes ``||I - P L||^2`` subject to ``0 <= L <= 1`` with projected
gradient descent. Nesterov momentum is optional; when an accelerated step
raises the residual, momentum is reset and a plain projected step from the
last accepted iterate is taken instead, so the recorded residual never goes
up.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .forward import PrefilterMatrix
from .imaging import as_channels, resample
from .optics import LightField4D, LightFieldGrid

__all__ = [
    "SolverOptions",
    "PrefilterResult",
    "initial_guess",
    "solve_prefilter",
    "spectral_norm",
    "projected_gradient_norm",
    "write_residual_csv",
]


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 500
    relative_residual_tolerance: float = 1e-4
    power_iterations: int = 50
    step_safety: float = 0.95
    momentum: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.relative_residual_tolerance > 0:
            raise ValueError("relative_residual_tolerance must be positive")
        if not 0 < self.step_safety <= 1:
            raise ValueError("step_safety must be in (0, 1]")


@dataclass(frozen=True, eq=False)
class PrefilterResult:
    L_d: LightField4D
    residual_history: list = field(repr=False)
    iterations_used: int
    converged: bool

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1]


def initial_guess(I_target, grid: LightFieldGrid) -> LightField4D:
    """Target resampled to the spatial grid and copied into every angular sample."""
    img = np.clip(resample(as_channels(I_target), (grid.n_x, grid.n_y)), 0.0, 1.0)
    rad = np.broadcast_to(img[:, :, None, None, :], grid.shape + (img.shape[2],))
    return LightField4D(grid, rad)


def spectral_norm(P: PrefilterMatrix, iterations: int = 50) -> float:
    """Largest singular value of ``P`` by power iteration on ``P^T P``."""
    m = P.matrix
    v = np.ones(m.shape[1]) / math.sqrt(m.shape[1])
    sigma2 = 0.0
    for _ in range(iterations):
        w = m.T @ (m @ v)
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0
        sigma2 = norm
        v = w / norm
    return math.sqrt(sigma2)


def projected_gradient_norm(P: PrefilterMatrix, target: np.ndarray, x: np.ndarray) -> float:
    """``||x - clip(x - grad)||`` for one channel; zero exactly at a KKT point."""
    grad = P.matrix.T @ (P.matrix @ x - target)
    return float(np.linalg.norm(x - np.clip(x - grad, 0.0, 1.0)))


def _solve_channel(m, b, x0, step, opts, callback, channel):
    def residual(x):
        return float(np.linalg.norm(b - m @ x))

    def pg_step(z):
        return np.clip(z - step * (m.T @ (m @ z - b)), 0.0, 1.0)

    x = np.clip(x0, 0.0, 1.0)
    r = residual(x)
    history = [r]
    y, t = x, 1.0
    scale = max(float(np.linalg.norm(b)), 1e-300)
    converged = False
    for k in range(opts.max_iterations):
        plain = not opts.momentum or y is x
        x_new = pg_step(x if plain else y)
        r_new = residual(x_new)
        if not plain and r_new > r:
            t = 1.0
            x_new = pg_step(x)
            r_new = residual(x_new)
            plain = True
        if opts.momentum:
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            y = x_new + ((t - 1.0) / t_next) * (x_new - x)
            t = t_next
        change = abs(r - r_new) / max(r, 1e-300)
        x, r = x_new, r_new
        history.append(r)
        if callback is not None:
            callback(channel, k + 1, x)
        if change < opts.relative_residual_tolerance or r <= opts.relative_residual_tolerance * scale:
            if not plain:
                # an extrapolated step can stall against the box; confirm with a plain one
                y, t = x, 1.0
                continue
            converged = True
            break
    return x, history, converged


def solve_prefilter(P: PrefilterMatrix, I_target, opts: SolverOptions = SolverOptions(),
                    x0: LightField4D | None = None, callback=None) -> PrefilterResult:
    """Prefiltered light field for a retinal target image.

    Channels are solved independently with a shared step size
    ``step_safety / sigma_max(P)**2``. ``residual_history`` holds the
    root-sum-square over channels of ``||I - P L||`` per iteration, starting
    with the initial guess. ``callback(channel, iteration, x)`` sees every
    accepted iterate.
    """
    target = as_channels(I_target)
    if target.shape[:2] != P.retina_shape:
        raise ValueError(f"target shape {target.shape[:2]} does not match retina {P.retina_shape}")
    if not np.all(np.isfinite(target)):
        raise ValueError("target contains non-finite values")
    if not np.all(np.isfinite(P.matrix.data)):
        raise ValueError("prefilter matrix contains non-finite weights")
    channels = target.shape[2]
    if x0 is None:
        x0 = initial_guess(target, P.grid)
    if x0.grid.shape != P.grid.shape:
        raise ValueError(f"initial guess {x0.grid.shape} does not match operator {P.grid.shape}")
    if x0.channels != channels:
        x0 = LightField4D(P.grid, np.broadcast_to(x0.radiance[..., :1], P.grid.shape + (channels,)))

    sigma = spectral_norm(P, opts.power_iterations)
    if sigma == 0.0:
        raise ValueError("prefilter matrix is zero")
    step = opts.step_safety / sigma**2

    solutions, histories, flags = [], [], []
    for c in range(channels):
        b = target[..., c].reshape(-1)
        x, hist, ok = _solve_channel(P.matrix, b, x0.flat(c), step, opts, callback, c)
        solutions.append(x)
        histories.append(hist)
        flags.append(ok)

    n_hist = max(len(h) for h in histories)
    padded = np.array([h + [h[-1]] * (n_hist - len(h)) for h in histories])
    combined = np.sqrt((padded**2).sum(axis=0)).tolist()
    rad = np.stack(solutions, axis=-1).reshape(P.grid.shape + (channels,))
    return PrefilterResult(LightField4D(P.grid, rad), combined, n_hist - 1, all(flags))


def write_residual_csv(path, history) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "residual"])
        for k, r in enumerate(history):
            writer.writerow([k, repr(float(r))])
