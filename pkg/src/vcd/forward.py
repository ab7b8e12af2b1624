"""Discrete forward model: display light field -> retinal image.

Each retinal pixel integrates the display light field over a sampled pupil.
For a retinal point ``x`` and pupil point ``u`` the display ray is found with
the inverse eye transport, and the radiance there is read with quadrilinear
interpolation. Stacking those weights gives a sparse matrix ``P`` with
``I_r = P @ L_d``.

Retinal images are arrays of shape ``(r_x, r_y, channels)`` stored upright:
pixel index ``i`` increases in the same direction as the display's ``x``
axis, which undoes the inversion by the eye lens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .optics import (
    LightField4D,
    LightFieldGrid,
    centered_coords,
    eye_transport,
    invert,
)

__all__ = [
    "DegenerateGeometryError",
    "EyeModel",
    "SceneGeometry",
    "PrefilterMatrix",
    "pupil_grid",
    "retina_coords",
    "axis_weights",
    "build_prefilter_matrix",
    "build_masked_prefilter_matrix",
    "simulate_retina",
    "psnr",
    "PSNR_CAP",
]

PSNR_CAP = 99.0


class DegenerateGeometryError(ValueError):
    """No pupil ray of any retinal pixel reaches the light-field domain."""


@dataclass(frozen=True)
class EyeModel:
    """Thin-lens eye with a fixed focus.

    The lens focal length follows from the thin-lens law
    ``1/f = 1/focus_distance + 1/retina_depth``.
    """

    focus_distance: float
    retina_depth: float = 0.025
    pupil_diameter: float = 0.006

    def __post_init__(self):
        if not (self.focus_distance > 0 and self.retina_depth > 0 and self.pupil_diameter > 0):
            raise ValueError(
                "focus_distance, retina_depth and pupil_diameter must be positive, got "
                f"{self.focus_distance!r}, {self.retina_depth!r}, {self.pupil_diameter!r}"
            )

    @property
    def focal_length(self) -> float:
        return 1.0 / (1.0 / self.focus_distance + 1.0 / self.retina_depth)

    @property
    def pupil_radius(self) -> float:
        return 0.5 * self.pupil_diameter

    def magnification(self, distance: float) -> float:
        """Chief-ray magnification ``retina_depth / distance`` (unsigned)."""
        return self.retina_depth / distance


@dataclass(frozen=True)
class SceneGeometry:
    display_distance: float
    retina_resolution: tuple[int, int]
    retina_extent: float
    aperture_samples: tuple[int, int] = (3, 3)

    def __post_init__(self):
        r_x, r_y = self.retina_resolution
        s_u, s_v = self.aperture_samples
        if not self.display_distance > 0:
            raise ValueError(f"display_distance must be positive, got {self.display_distance!r}")
        if min(r_x, r_y) < 1 or min(s_u, s_v) < 1:
            raise ValueError("retina_resolution and aperture_samples must be >= 1")
        if not self.retina_extent > 0:
            raise ValueError(f"retina_extent must be positive, got {self.retina_extent!r}")
        object.__setattr__(self, "retina_resolution", (int(r_x), int(r_y)))
        object.__setattr__(self, "aperture_samples", (int(s_u), int(s_v)))

    @property
    def retina_pitch(self) -> float:
        return self.retina_extent / self.retina_resolution[0]

    @classmethod
    def matched(cls, eye: EyeModel, display_distance: float, grid: LightFieldGrid,
                retina_resolution=None, aperture_samples=(3, 3)) -> "SceneGeometry":
        """Geometry whose retinal window is the chief-ray image of the grid.

        With ``retina_resolution`` equal to the spatial grid (the default),
        retinal pixel ``i`` looks straight at spatial sample ``i``.
        """
        if retina_resolution is None:
            retina_resolution = (grid.n_x, grid.n_y)
        width = grid.n_x * grid.spatial_pitch
        extent = width * eye.magnification(display_distance)
        return cls(display_distance, tuple(retina_resolution), extent, tuple(aperture_samples))


def retina_coords(geom: SceneGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Physical retinal positions of the pixel centers along x and y.

    The sign flip stores images upright (see module docstring).
    """
    r_x, r_y = geom.retina_resolution
    pitch = geom.retina_pitch
    return -centered_coords(r_x, pitch), -centered_coords(r_y, pitch)


def pupil_grid(eye: EyeModel, samples: tuple[int, int]) -> np.ndarray:
    """Pupil sample points, shape ``(n, 2)`` in meters.

    Cell centers of a uniform ``s_u x s_v`` grid over the pupil's bounding
    square, keeping those inside the inscribed circle.
    """
    s_u, s_v = samples
    r = eye.pupil_radius
    pu = centered_coords(s_u, 2.0 * r / s_u)
    pv = centered_coords(s_v, 2.0 * r / s_v)
    uu, vv = np.meshgrid(pu, pv, indexing="ij")
    inside = uu**2 + vv**2 <= r * r * (1.0 + 1e-12)
    return np.column_stack([uu[inside], vv[inside]])


def axis_weights(coord: np.ndarray, n: int, step: float, nearest: bool = False):
    """Linear interpolation onto ``n`` centered samples spaced by ``step``.

    Returns ``(idx, w, valid)`` where ``idx`` and ``w`` have a trailing axis
    of length 2. Points in the half-cell margin beyond the outer samples
    take the edge value; points outside the cells are flagged invalid.
    """
    pos = np.asarray(coord, dtype=float) / step + (n - 1) / 2.0
    valid = (pos >= -0.5 - 1e-9) & (pos <= n - 0.5 + 1e-9)
    if n == 1 or nearest:
        idx = np.zeros(pos.shape + (2,), dtype=np.int64)
        idx[..., 0] = np.clip(np.floor(pos + 0.5), 0, n - 1).astype(np.int64)
        w = np.zeros(pos.shape + (2,))
        w[..., 0] = 1.0
        return idx, w, valid
    pos = np.clip(pos, 0.0, n - 1.0)
    i0 = np.minimum(np.floor(pos).astype(np.int64), n - 2)
    t = pos - i0
    idx = np.stack([i0, i0 + 1], axis=-1)
    w = np.stack([1.0 - t, t], axis=-1)
    return idx, w, valid


@dataclass(frozen=True, eq=False)
class PrefilterMatrix:
    """Sparse ``P`` mapping a flattened light field to a flattened retina.

    Rows are ordered C-style over ``(r_x, r_y)``, columns over
    ``(x, y, u, v)``. ``coverage[row]`` counts pupil samples whose ray landed
    inside the light-field domain; ``full_coverage`` is the number of pupil
    samples, so a row is fully covered when the two agree.
    """

    matrix: sp.csr_matrix
    retina_shape: tuple[int, int]
    grid: LightFieldGrid
    coverage: np.ndarray
    full_coverage: int

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_cols(self) -> int:
        return self.matrix.shape[1]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    @property
    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    def scaled(self, factor: float) -> "PrefilterMatrix":
        """Same operator times a radiometric factor (e.g. gain x fill factor)."""
        return PrefilterMatrix((self.matrix * float(factor)).tocsr(), self.retina_shape,
                               self.grid, self.coverage, self.full_coverage)

    def dump(self, path) -> None:
        """Write ``rows cols nnz`` then one ``row col weight`` triple per line."""
        coo = self.matrix.tocoo()
        with open(path, "w") as fh:
            fh.write(f"{self.n_rows} {self.n_cols} {coo.nnz}\n")
            for r, c, w in zip(coo.row, coo.col, coo.data):
                fh.write(f"{r} {c} {w:.17g}\n")

    @staticmethod
    def load_triples(path) -> sp.csr_matrix:
        with open(path) as fh:
            rows, cols, nnz = (int(t) for t in fh.readline().split())
            data = np.loadtxt(fh, ndmin=2) if nnz else np.zeros((0, 3))
        if data.shape[0] != nnz:
            raise ValueError(f"{path}: header announces {nnz} entries, found {data.shape[0]}")
        return sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))),
                             shape=(rows, cols))


def build_prefilter_matrix(eye: EyeModel, geom: SceneGeometry, grid: LightFieldGrid,
                           spatial: str = "linear", boundary: str = "coverage") -> PrefilterMatrix:
    """Assemble ``P`` for one eye, viewing geometry and light-field lattice.

    ``spatial="nearest"`` reads the spatial axes with nearest-sample weights
    instead of linear ones (angular axes stay linear). That is the exact
    expectation for displays whose spatial samples are finite cells, such
    as a lenslet sheet or a pinhole mask.

    With ``boundary="coverage"`` rows are normalized by the number of pupil
    rays that hit the light-field domain. ``boundary="dark"`` treats misses
    as black and normalizes by the full pupil sample count, which is what a
    physical display in a dark surround does.
    """
    if spatial not in ("linear", "nearest"):
        raise ValueError(f"spatial must be 'linear' or 'nearest', got {spatial!r}")
    if boundary not in ("coverage", "dark"):
        raise ValueError(f"boundary must be 'coverage' or 'dark', got {boundary!r}")
    minv = invert(eye_transport(geom.display_distance, eye.focal_length, eye.retina_depth))
    pupil = pupil_grid(eye, geom.aperture_samples)
    n_p = len(pupil)
    xr, yr = retina_coords(geom)

    def per_axis(ret, pup, n_s, n_a, ang_step):
        # (retina, pupil) -> display position and eye-to-display slope
        xd = minv.a * ret[:, None] + minv.b * pup[None, :]
        slope = -(minv.c * ret[:, None] + minv.d * pup[None, :])
        si, sw, sv = axis_weights(xd, n_s, grid.spatial_pitch, spatial == "nearest")
        ai, aw, av = axis_weights(slope, n_a, ang_step)
        # 4 corner combinations per axis: (spatial, angular)
        idx_s = np.repeat(si, 2, axis=-1)
        idx_a = np.tile(ai, 2)
        w = (sw[..., :, None] * aw[..., None, :]).reshape(sw.shape[:-1] + (4,))
        return idx_s, idx_a, w, sv & av

    ix, iu, wx, vx = per_axis(xr, pupil[:, 0], grid.n_x, grid.n_u, grid.angular_pitch)
    iy, iv, wy, vy = per_axis(yr, pupil[:, 1], grid.n_y, grid.n_v, grid.angular_pitch_v)
    r_x, r_y = geom.retina_resolution

    # broadcast to (r_x, r_y, n_p, 4, 4)
    col = (((ix[:, None, :, :, None] * grid.n_y + iy[None, :, :, None, :]) * grid.n_u
            + iu[:, None, :, :, None]) * grid.n_v + iv[None, :, :, None, :])
    w = wx[:, None, :, :, None] * wy[None, :, :, None, :]
    valid = vx[:, None, :] & vy[None, :, :]
    coverage = valid.sum(axis=2).reshape(-1)
    if not coverage.any():
        raise DegenerateGeometryError(
            "no pupil ray of any retinal pixel lands inside the light-field domain"
        )
    norm = coverage if boundary == "coverage" else np.full_like(coverage, n_p)
    scale = np.where(coverage > 0, 1.0 / np.maximum(norm, 1), 0.0).reshape(r_x, r_y, 1, 1, 1)
    w = w * valid[..., None, None] * scale
    rows = np.broadcast_to(np.arange(r_x * r_y).reshape(r_x, r_y, 1, 1, 1), w.shape)
    keep = w.reshape(-1) > 0
    mat = sp.csr_matrix(
        (w.reshape(-1)[keep], (rows.reshape(-1)[keep], np.broadcast_to(col, w.shape).reshape(-1)[keep])),
        shape=(r_x * r_y, grid.size),
    )
    mat.sum_duplicates()
    return PrefilterMatrix(mat, (r_x, r_y), grid, coverage, n_p)


def _aperture_strata(minv, ret, radius, centers, aperture):
    """Pupil intervals (per retinal coordinate) whose rays pass each aperture.

    Returns padded arrays over ``(n_ret, K)``: cell index, interval start,
    interval length and a validity mask.
    """
    half = 0.5 * aperture
    h0 = minv.a * ret[:, None]  # display hit through the pupil center
    if abs(minv.b) * radius < 1e-15:
        inside = np.abs(h0 - centers[None, :]) <= half
        lo = np.where(inside, -radius, 0.0)
        hi = np.where(inside, radius, 0.0)
    else:
        e0 = (centers[None, :] - half - h0) / minv.b
        e1 = (centers[None, :] + half - h0) / minv.b
        lo = np.maximum(np.minimum(e0, e1), -radius)
        hi = np.minimum(np.maximum(e0, e1), radius)
    ok = hi > lo
    k = max(1, int(ok.sum(axis=1).max()))
    order = np.argsort(~ok, axis=1, kind="stable")[:, :k]
    take = lambda a: np.take_along_axis(a, order, axis=1)  # noqa: E731
    return take(np.broadcast_to(np.arange(len(centers)), ok.shape)), take(lo), \
        take(np.where(ok, hi - lo, 0.0)), take(ok)


def build_masked_prefilter_matrix(eye: EyeModel, geom: SceneGeometry, grid: LightFieldGrid,
                                  aperture: float, gap: float, strata: int = 4,
                                  element: str = "pinhole") -> PrefilterMatrix:
    """``P`` for a light field emitted through an array of square elements.

    Spatial sample ``j`` is a square element of side ``aperture`` centered on
    the sample, ``gap`` in front of the emitting plane. Each retinal pixel
    integrates only over the parts of the pupil whose rays pass an element;
    every such part is a rectangle, split into at least ``strata x strata``
    midpoint cells. Rows are normalized by the pupil area, so blocked light
    is black. ``geom.aperture_samples`` is not used.

    For ``element="pinhole"`` a ray crossing the opening at offset ``o`` from
    its center with slope ``s`` reads the angular coordinate ``s + o / gap``
    (the point it hits behind the opening). For ``element="lenslet"`` (use
    ``aperture = pitch`` and ``gap = focal``) the lens bends that ray onto
    the point at ``s * gap`` behind the cell center, so it reads ``s``.
    Angular coordinates are interpolated linearly.
    """
    if not 0 < aperture <= grid.spatial_pitch * (1 + 1e-12):
        raise ValueError(f"aperture must be in (0, spatial_pitch], got {aperture!r}")
    if element not in ("pinhole", "lenslet"):
        raise ValueError(f"element must be 'pinhole' or 'lenslet', got {element!r}")
    offset_term = 1.0 if element == "pinhole" else 0.0
    minv = invert(eye_transport(geom.display_distance, eye.focal_length, eye.retina_depth))
    radius = eye.pupil_radius
    xr, yr = retina_coords(geom)
    # strata never wider than 1/64 of the pupil, so the disc edge stays resolved
    finest = 2.0 * radius / 64

    def per_axis(ret, n_s, n_a, ang_step):
        centers = centered_coords(n_s, grid.spatial_pitch)
        cell, lo, length, ok = _aperture_strata(minv, ret, radius, centers, aperture)
        m = np.maximum(int(strata), np.ceil(length / finest - 1e-9)).astype(np.int64)
        k = np.arange(m.max())
        used = (k < m[..., None]) & ok[..., None]  # (n_ret, K, M)
        step = length / m
        pos = lo[..., None] + (k + 0.5) * step[..., None]
        hit = minv.a * ret[:, None, None] + minv.b * pos
        slope = -(minv.c * ret[:, None, None] + minv.d * pos)
        slope = slope + offset_term * (hit - centers[cell][..., None]) / gap
        ai, aw, av = axis_weights(slope, n_a, ang_step)
        w = aw * step[..., None, None] * (used & av)[..., None]
        return cell, pos, ai, w

    cx, ux, ix, wx = per_axis(xr, grid.n_x, grid.n_u, grid.angular_pitch)
    cy, uy, iy, wy = per_axis(yr, grid.n_y, grid.n_v, grid.angular_pitch_v)
    r_x, r_y = geom.retina_resolution
    area = math.pi * radius**2
    rows_all, cols_all, vals_all = [], [], []
    coverage = np.zeros(r_x * r_y, dtype=np.int64)
    for s in range(0, r_x, 8):
        sl = slice(s, min(s + 8, r_x))
        # axes: (x, y, Kx, Ky, mx, my, ax, ay)
        u = ux[sl][:, None, :, None, :, None]
        v = uy[None, :, None, :, None, :]
        disc = (u**2 + v**2 <= radius**2)[..., None, None]
        w = (wx[sl][:, None, :, None, :, None, :, None] * wy[None, :, None, :, None, :, None, :]) * disc / area
        col = (((cx[sl][:, None, :, None, None, None, None, None] * grid.n_y
                 + cy[None, :, None, :, None, None, None, None]) * grid.n_u
                + ix[sl][:, None, :, None, :, None, :, None]) * grid.n_v
               + iy[None, :, None, :, None, :, None, :])
        rows = (np.arange(sl.start, sl.stop)[:, None] * r_y + np.arange(r_y)[None, :])
        rows = np.broadcast_to(rows[:, :, None, None, None, None, None, None], w.shape)
        col = np.broadcast_to(col, w.shape)
        keep = w > 0
        rows_all.append(rows[keep])
        cols_all.append(col[keep])
        vals_all.append(w[keep])
        coverage[sl.start * r_y: sl.stop * r_y] = (w.sum(axis=(6, 7)) > 0).sum(axis=(2, 3, 4, 5)).reshape(-1)
    if not coverage.any():
        raise DegenerateGeometryError("no pupil ray of any retinal pixel passes an aperture")
    mat = sp.csr_matrix((np.concatenate(vals_all), (np.concatenate(rows_all), np.concatenate(cols_all))),
                        shape=(r_x * r_y, grid.size))
    mat.sum_duplicates()
    return PrefilterMatrix(mat, (r_x, r_y), grid, coverage, int(coverage.max()))


def simulate_retina(P: PrefilterMatrix, L_d: LightField4D) -> np.ndarray:
    """Retinal image ``P @ L_d`` per channel, shape ``(r_x, r_y, channels)``."""
    if L_d.grid.shape != P.grid.shape:
        raise ValueError(f"light field {L_d.grid.shape} does not match operator {P.grid.shape}")
    flat = L_d.radiance.reshape(P.n_cols, L_d.channels)
    return np.asarray(P.matrix @ flat).reshape(P.retina_shape + (L_d.channels,))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1].

    Inputs are clamped to [0, 1] first. Identical images (and anything above
    the cap) report ``PSNR_CAP``.
    """
    a = np.clip(np.asarray(a, dtype=float), 0.0, 1.0)
    b = np.clip(np.asarray(b, dtype=float), 0.0, 1.0)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))
