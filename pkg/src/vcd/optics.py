"""Two-plane light fields and paraxial ray-transfer algebra.

Rays are described per axis by a column ``(x, u)``. On the display side
``u`` is a ray slope; after :func:`reparam` the second coordinate is the
intercept on the pupil plane in meters. The 4D transport is separable, so
the same 2x2 matrix acts on ``(x, u)`` and ``(y, v)``.

Sign convention for stored light fields: the angular axis of a
:class:`LightField4D` holds the slope ``s = dx/dz`` of a ray measured with
``z`` pointing from the eye into the display. That is the negative of the
display-to-eye slope used by :func:`translate` and :func:`eye_transport`,
and it is the convention in which a pixel sitting at offset ``+o`` behind a
pinhole or a focal-gap lenslet is seen along slope ``+o / gap``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "InvalidFocalLengthError",
    "SingularMatrixError",
    "RayTransferMatrix",
    "RayCoord",
    "LightFieldGrid",
    "LightField4D",
    "IDENTITY",
    "translate",
    "refract",
    "reparam",
    "compose",
    "eye_transport",
    "invert",
    "apply",
    "centered_coords",
]

SINGULAR_TOL = 1e-15


class InvalidFocalLengthError(ValueError):
    """Raised for a zero (or non-numeric) focal length."""


class SingularMatrixError(ValueError):
    """Raised when inverting a ray-transfer matrix with ``|det| <= 1e-15``."""

    def __init__(self, det):
        super().__init__(f"ray-transfer matrix is singular (det={det!r})")
        self.det = det


@dataclass(frozen=True)
class RayTransferMatrix:
    """The 2x2 matrix ``[[a, b], [c, d]]`` acting on a column ``(x, u)``."""

    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        for name in "abcd":
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"non-finite matrix entry {name}={getattr(self, name)!r}")

    @property
    def det(self) -> float:
        return self.a * self.d - self.b * self.c

    def as_array(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]], dtype=float)

    @classmethod
    def from_array(cls, m) -> "RayTransferMatrix":
        m = np.asarray(m, dtype=float)
        if m.shape != (2, 2):
            raise ValueError(f"expected a 2x2 array, got shape {m.shape}")
        return cls(float(m[0, 0]), float(m[0, 1]), float(m[1, 0]), float(m[1, 1]))

    def __matmul__(self, other: "RayTransferMatrix") -> "RayTransferMatrix":
        return compose(self, other)

    def allclose(self, other: "RayTransferMatrix", atol: float = 1e-12) -> bool:
        return bool(np.allclose(self.as_array(), other.as_array(), rtol=0.0, atol=atol))


IDENTITY = RayTransferMatrix(1.0, 0.0, 0.0, 1.0)


@dataclass(frozen=True)
class RayCoord:
    """Per-axis ray coordinate: position ``x`` and second coordinate ``u`` (m)."""

    x: float
    u: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.u)):
            raise ValueError(f"non-finite ray coordinate ({self.x!r}, {self.u!r})")


def translate(d: float) -> RayTransferMatrix:
    """Free propagation over distance ``d``: ``[[1, d], [0, 1]]``."""
    return RayTransferMatrix(1.0, float(d), 0.0, 1.0)


def refract(f: float) -> RayTransferMatrix:
    """Thin-lens refraction ``[[1, 0], [-1/f, 1]]``.

    ``f = inf`` (or the string ``"flat"``) is a surface without optical power.
    """
    if isinstance(f, str):
        if f != "flat":
            raise InvalidFocalLengthError(f"unknown focal length sentinel {f!r}")
        f = math.inf
    f = float(f)
    if f == 0.0 or math.isnan(f):
        raise InvalidFocalLengthError(f"focal length must be non-zero, got {f!r}")
    return RayTransferMatrix(1.0, 0.0, -1.0 / f, 1.0)


def reparam(d: float) -> RayTransferMatrix:
    """Move the angular plane back onto the pupil: ``[[1, 0], [1, -d]]``."""
    return RayTransferMatrix(1.0, 0.0, 1.0, -float(d))


def compose(m2: RayTransferMatrix, m1: RayTransferMatrix) -> RayTransferMatrix:
    """Matrix product ``m2 @ m1``: ``m1`` acts first."""
    return RayTransferMatrix(
        m2.a * m1.a + m2.b * m1.c,
        m2.a * m1.b + m2.b * m1.d,
        m2.c * m1.a + m2.d * m1.c,
        m2.c * m1.b + m2.d * m1.d,
    )


def eye_transport(d_o: float, f: float, d_e: float) -> RayTransferMatrix:
    """Display-to-retina transport ``Q(d_e) T(d_e) R(f) T(d_o)``.

    Maps display coordinates (position, slope) to (retinal position, pupil
    intercept). The determinant is ``-d_e`` so the result is invertible for
    any positive eye depth.
    """
    if not d_o > 0 or not d_e > 0:
        raise ValueError(f"distances must be positive (d_o={d_o!r}, d_e={d_e!r})")
    m = compose(translate(d_e), compose(refract(f), translate(d_o)))
    return compose(reparam(d_e), m)


def invert(m: RayTransferMatrix) -> RayTransferMatrix:
    det = m.det
    if abs(det) <= SINGULAR_TOL:
        raise SingularMatrixError(det)
    return RayTransferMatrix(m.d / det, -m.b / det, -m.c / det, m.a / det)


def apply(m: RayTransferMatrix, r):
    """Apply ``m`` to a :class:`RayCoord`, or to an ``(x, u)`` pair of arrays."""
    if isinstance(r, RayCoord):
        return RayCoord(m.a * r.x + m.b * r.u, m.c * r.x + m.d * r.u)
    x, u = r
    return m.a * x + m.b * u, m.c * x + m.d * u


def centered_coords(n: int, step: float) -> np.ndarray:
    """``n`` sample centers spaced by ``step`` and symmetric about zero."""
    return (np.arange(n) - (n - 1) / 2.0) * step


@dataclass(frozen=True)
class LightFieldGrid:
    """Sampling lattice of a light field.

    Spatial samples sit on a centered lattice with spacing ``spatial_pitch``
    (meters). The ``n_u`` angular samples split the slope window
    ``angular_extent`` into equal cells and sit at the cell centers, so the
    angular spacing is ``angular_extent / n_u``. Each sample owns the cell
    around it; the union of cells is the domain of the light field.
    """

    n_x: int
    n_y: int
    n_u: int
    n_v: int
    spatial_pitch: float
    angular_extent: float

    def __post_init__(self):
        for name in ("n_x", "n_y", "n_u", "n_v"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.spatial_pitch > 0 or not self.angular_extent > 0:
            raise ValueError("spatial_pitch and angular_extent must be positive")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.n_x, self.n_y, self.n_u, self.n_v)

    @property
    def size(self) -> int:
        return self.n_x * self.n_y * self.n_u * self.n_v

    @property
    def angular_pitch(self) -> float:
        return self.angular_extent / self.n_u

    @property
    def angular_pitch_v(self) -> float:
        return self.angular_extent / self.n_v

    def x_coords(self) -> np.ndarray:
        return centered_coords(self.n_x, self.spatial_pitch)

    def y_coords(self) -> np.ndarray:
        return centered_coords(self.n_y, self.spatial_pitch)

    def u_coords(self) -> np.ndarray:
        return centered_coords(self.n_u, self.angular_pitch)

    def v_coords(self) -> np.ndarray:
        return centered_coords(self.n_v, self.angular_pitch_v)


@dataclass(frozen=True, eq=False)
class LightField4D:
    """Discretized radiance ``L(x, y, u, v)`` with values in [0, 1].

    ``radiance`` has shape ``(n_x, n_y, n_u, n_v, channels)``; the first
    index is the horizontal coordinate. The array is copied and made
    read-only on construction.
    """

    grid: LightFieldGrid
    radiance: np.ndarray = field(repr=False)

    def __post_init__(self):
        rad = np.array(self.radiance, dtype=float)
        if rad.ndim == 4:
            rad = rad[..., np.newaxis]
        if rad.ndim != 5 or rad.shape[:4] != self.grid.shape:
            raise ValueError(f"radiance shape {rad.shape} does not match grid {self.grid.shape}")
        if rad.shape[4] not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {rad.shape[4]}")
        if not np.all(np.isfinite(rad)):
            raise ValueError("radiance contains non-finite values")
        if rad.size and (rad.min() < 0.0 or rad.max() > 1.0):
            raise ValueError(f"radiance outside [0, 1]: [{rad.min()}, {rad.max()}]")
        rad.setflags(write=False)
        object.__setattr__(self, "radiance", rad)

    @property
    def channels(self) -> int:
        return self.radiance.shape[4]

    @property
    def shape(self):
        return self.radiance.shape

    @classmethod
    def constant(cls, grid: LightFieldGrid, value: float = 0.0, channels: int = 1):
        return cls(grid, np.full(grid.shape + (channels,), float(value)))

    def flat(self, channel: int = 0) -> np.ndarray:
        """Column vector of one channel in C order over ``(x, y, u, v)``."""
        return self.radiance[..., channel].reshape(-1)
