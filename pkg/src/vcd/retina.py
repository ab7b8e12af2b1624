"""Backward ray tracer for a defocused thin-lens eye.

Rays start at a retinal pixel, pass a sampled point of the pupil, are bent
by the eye lens and continue to the display. Along the way they may meet a
pinhole mask or a lenslet sheet sitting one gap in front of the panel. This
path shares no code with the matrix forward model and serves as its oracle.

Coordinates: ``z`` runs from the eye lens (``z = 0``) towards the display;
positions are transverse, in meters, centered on the optical axis.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .forward import EyeModel, retina_coords, SceneGeometry
from .optics import LightField4D
from .panel import LensletArraySpec, PanelImage, PanelSpec, PinholeArraySpec

__all__ = [
    "OpticalBench",
    "RenderSettings",
    "pupil_samples",
    "trace_to_display",
    "panel_footprint",
    "render",
    "mean_luminance",
]


@dataclass(frozen=True)
class RenderSettings:
    """Pupil sampling for :func:`render`.

    ``sampling`` is ``"stratified"`` (jittered ``m x m`` strata mapped onto
    the pupil disc, seeded per pixel), ``"random"`` (seeded uniform disc
    samples) or ``"grid"`` (cell centers of an ``m x m`` grid over the
    pupil's bounding square, kept inside the disc; no randomness).
    ``m = ceil(sqrt(samples))``.

    ``aligned_strata`` (default on) replaces plain pupil sampling behind an
    array by strata aligned with the pupil pre-images of the array cells
    (pinhole openings or lenslets), about ``samples / 16`` per visible cell:
    the same integral without the variance of samples straddling cell
    edges or landing on the opaque part of a pinhole mask. Without an
    array it has no effect.
    """

    samples: int = 64
    sampling: str = "stratified"
    threads: int = 1
    aligned_strata: bool = True

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if self.sampling not in ("stratified", "random", "grid"):
            raise ValueError(f"unknown sampling {self.sampling!r}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    @property
    def side(self) -> int:
        return int(math.ceil(math.sqrt(self.samples) - 1e-9))


@dataclass(frozen=True, eq=False)
class OpticalBench:
    """Eye, optional array and emitter along one axis.

    The array (if any) sits at ``display_distance`` from the pupil and the
    panel one array gap further away; without an array the panel itself is
    at ``display_distance``. Instead of a panel, an ideal emitter can be
    given as ``light_field``: it radiates the stored 4D radiance directly
    from the plane at ``display_distance``.
    """

    eye: EyeModel
    display_distance: float
    retina_resolution: tuple[int, int]
    retina_extent: float
    panel_image: PanelImage | None = None
    panel: PanelSpec | None = None
    array: PinholeArraySpec | LensletArraySpec | None = None
    light_field: LightField4D | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if not self.display_distance > 0:
            raise ValueError("display_distance must be positive")
        if not self.retina_extent > 0 or min(self.retina_resolution) < 1:
            raise ValueError("retina resolution and extent must be positive")
        if (self.panel_image is None) == (self.light_field is None):
            raise ValueError("give exactly one of panel_image or light_field")
        if self.panel_image is not None:
            if self.panel is None:
                raise ValueError("panel_image needs a PanelSpec")
            if self.panel_image.width > self.panel.resolution[0] or \
                    self.panel_image.height > self.panel.resolution[1]:
                raise ValueError("panel image larger than the panel resolution")
        if self.light_field is not None and self.array is not None:
            raise ValueError("an ideal light-field emitter cannot sit behind an array")
        if not 0 <= int(self.rng_seed) < 2**64:
            raise ValueError("rng_seed must fit in 64 unsigned bits")

    @property
    def geometry(self) -> SceneGeometry:
        return SceneGeometry(self.display_distance, self.retina_resolution, self.retina_extent)

    @property
    def gain(self) -> float:
        return 1.0 if self.panel is None else self.panel.emission_gain

    @property
    def array_left(self) -> tuple[float, float]:
        """Lower-left corner of the array lattice, aligned with the panel edge."""
        p_x, p_y = self.panel.resolution
        pp = self.panel.pixel_pitch
        return (-0.5 * p_x * pp, -0.5 * p_y * pp)

    @property
    def channels(self) -> int:
        src = self.panel_image.pixels if self.light_field is None else self.light_field.radiance
        return src.shape[-1]


def _concentric(a, b):
    # square [-1, 1]^2 -> unit disc, area preserving (Shirley & Chiu)
    r = np.where(np.abs(a) > np.abs(b), a, b)
    safe_a = np.where(a == 0, 1.0, a)
    safe_b = np.where(b == 0, 1.0, b)
    phi = np.where(np.abs(a) > np.abs(b), (np.pi / 4) * (b / safe_a),
                   np.pi / 2 - (np.pi / 4) * (a / safe_b))
    phi = np.where((a == 0) & (b == 0), 0.0, phi)
    return r * np.cos(phi), r * np.sin(phi)


def pupil_samples(eye: EyeModel, settings: RenderSettings, seed: int, pixel: int) -> np.ndarray:
    """Pupil points ``(n, 2)`` for one retinal pixel; stream keyed on ``(seed, pixel)``."""
    m = settings.side
    r = eye.pupil_radius
    if settings.sampling == "grid":
        c = (np.arange(m) - (m - 1) / 2.0) * (2.0 / m)
        a, b = np.meshgrid(c, c, indexing="ij")
        keep = a**2 + b**2 <= 1.0 + 1e-12
        return r * np.column_stack([a[keep], b[keep]])
    rng = np.random.default_rng([int(seed), int(pixel)])
    if settings.sampling == "stratified":
        i, j = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
        jit = rng.random((2, m, m))
        a = (i + jit[0]) * (2.0 / m) - 1.0
        b = (j + jit[1]) * (2.0 / m) - 1.0
    else:
        a, b = rng.random((2, m * m)) * 2.0 - 1.0
    x, y = _concentric(a.ravel(), b.ravel())
    return r * np.column_stack([x, y])


def trace_to_display(eye: EyeModel, distance: float, retina_x, pupil_u):
    """Trace retina -> pupil -> lens -> plane at ``distance`` along one axis.

    Returns ``(position, slope)`` at that plane, slope being ``dx/dz``.
    """
    slope = (pupil_u - retina_x) / eye.retina_depth
    slope = slope - pupil_u / eye.focal_length
    return pupil_u + slope * distance, slope


def _cell_center(h, pitch, left_edge):
    return left_edge + (np.floor((h - left_edge) / pitch) + 0.5) * pitch


class _PanelSampler:
    def __init__(self, image: PanelImage, spec: PanelSpec):
        self.pixels = image.pixels
        self.pitch = spec.pixel_pitch
        p_x, p_y = spec.resolution
        self.left = -0.5 * p_x * self.pitch
        self.bottom = -0.5 * p_y * self.pitch
        self.w, self.h = image.width, image.height

    def __call__(self, qx, qy):
        fx = (qx - self.left) / self.pitch
        fy = (qy - self.bottom) / self.pitch
        inside = (fx >= 0) & (fx <= self.w) & (fy >= 0) & (fy <= self.h)
        coords = [fx - 0.5, fy - 0.5]
        out = np.empty(qx.shape + (self.pixels.shape[2],))
        for c in range(self.pixels.shape[2]):
            out[..., c] = ndimage.map_coordinates(self.pixels[..., c], coords, order=1, mode="nearest")
        return np.where(inside[..., None], out, 0.0)


class _LightFieldSampler:
    def __init__(self, lf: LightField4D):
        self.rad = lf.radiance
        g = lf.grid
        self.steps = (g.spatial_pitch, g.spatial_pitch, g.angular_pitch, g.angular_pitch_v)
        self.n = g.shape

    def __call__(self, x, y, sx, sy):
        coords, ok = [], np.ones(x.shape, dtype=bool)
        for val, step, n in zip((x, y, sx, sy), self.steps, self.n):
            f = val / step + (n - 1) / 2.0
            ok &= (f >= -0.5 - 1e-9) & (f <= n - 0.5 + 1e-9)
            coords.append(np.clip(f, 0.0, n - 1.0))
        out = np.empty(x.shape + (self.rad.shape[4],))
        for c in range(self.rad.shape[4]):
            out[..., c] = ndimage.map_coordinates(self.rad[..., c], coords, order=1, mode="nearest")
        return out, ok


def _shade(bench: OpticalBench, xr, yr, pu, pv):
    """Radiance and validity of rays; arrays broadcast over (pixel, sample).

    Validity is 0 only for rays missing an ideal emitter's domain. Rays
    blocked by a pinhole mask are valid and black.
    """
    eye = bench.eye
    hx, sx = trace_to_display(eye, bench.display_distance, xr, pu)
    hy, sy = trace_to_display(eye, bench.display_distance, yr, pv)
    if bench.light_field is not None:
        val, ok = _LightFieldSampler(bench.light_field)(hx, hy, sx, sy)
        return val, ok.astype(float)
    sample = _PanelSampler(bench.panel_image, bench.panel)
    array = bench.array
    passed = np.ones(hx.shape)
    if array is None:
        qx, qy = hx, hy
    else:
        cx = _cell_center(hx, array.pitch, bench.array_left[0])
        cy = _cell_center(hy, array.pitch, bench.array_left[1])
        if isinstance(array, PinholeArraySpec):
            half = 0.5 * array.aperture
            passed = ((np.abs(hx - cx) <= half) & (np.abs(hy - cy) <= half)).astype(float)
        else:
            sx = sx - (hx - cx) / array.focal
            sy = sy - (hy - cy) / array.focal
        qx, qy = hx + sx * array.gap, hy + sy * array.gap
    val = sample(qx, qy) * bench.gain
    return val * passed[..., None], np.ones(hx.shape)


def _aperture_intervals(bench, retina_x, axis):
    """Pupil intervals along one axis whose rays land inside one array cell
    (inside the opening, for pinholes)."""
    eye, array = bench.eye, bench.array
    r = eye.pupil_radius
    h0, _ = trace_to_display(eye, bench.display_distance, retina_x, 0.0)
    h1, _ = trace_to_display(eye, bench.display_distance, retina_x, 1.0)
    beta = h1 - h0  # display hit is affine in the pupil coordinate
    width = array.aperture if isinstance(array, PinholeArraySpec) else array.pitch
    half = 0.5 * width
    left = bench.array_left[axis]
    if abs(beta) * r < 1e-15:
        c = _cell_center(h0, array.pitch, left)
        return [(-r, r, c)] if abs(h0 - c) <= half else []
    lo, hi = sorted((h0 - beta * r, h0 + beta * r))
    first = int(np.floor((lo + half - left) / array.pitch - 0.5))
    last = int(np.ceil((hi - half - left) / array.pitch - 0.5))
    out = []
    for k in range(first, last + 1):
        c = left + (k + 0.5) * array.pitch
        a, b = sorted(((c - half - h0) / beta, (c + half - h0) / beta))
        a, b = max(a, -r), min(b, r)
        if b > a:
            out.append((a, b, c))
    return out


def _panel_pieces(bench, retina_x, axis, a, b, c):
    """Split a cell interval ``[a, b]`` of the pupil where the panel read point
    crosses a pixel-center line, so the bilinear panel is smooth on each piece."""
    eye, array = bench.eye, bench.array

    def read(u):
        h, s = trace_to_display(eye, bench.display_distance, retina_x, u)
        if not isinstance(array, PinholeArraySpec):
            s = s - (h - c) / array.focal
        return h + s * array.gap

    qa, qb = read(a), read(b)
    if qa == qb:
        return [(a, b)]
    pitch = bench.panel.pixel_pitch
    left = -0.5 * bench.panel.resolution[axis] * pitch
    lo, hi = sorted((qa, qb))
    n0 = int(np.ceil((lo - left) / pitch - 0.5))
    n1 = int(np.floor((hi - left) / pitch - 0.5))
    cuts = sorted(a + (left + (n + 0.5) * pitch - qa) / (qb - qa) * (b - a) for n in range(n0, n1 + 1))
    edges = [a] + [t for t in cuts if a < t < b] + [b]
    return list(zip(edges[:-1], edges[1:]))


def _quadrant_area(x, y, r):
    """Area of the disc of radius ``r`` inside ``[0, x] x [0, y]``, signed by
    the signs of ``x`` and ``y``."""
    sign = math.copysign(1.0, x) * math.copysign(1.0, y)
    x, y = min(abs(x), r), abs(y)

    def g(t):  # integral of sqrt(r^2 - u^2) over [0, t]
        return 0.5 * (t * math.sqrt(max(r * r - t * t, 0.0)) + r * r * math.asin(min(t / r, 1.0)))

    if y >= r:
        return sign * g(x)
    u_star = math.sqrt(r * r - y * y)  # where the circle crosses height y
    if x <= u_star:
        return sign * y * x
    return sign * (y * u_star + g(x) - g(u_star))


def disc_rect_area(x0, x1, y0, y1, r):
    """Exact area of the disc of radius ``r`` (centered at 0) inside a rectangle."""
    q = _quadrant_area
    return max(0.0, q(x1, y1, r) - q(x0, y1, r) - q(x1, y0, r) + q(x0, y0, r))


def _strata(bench, retina_x, axis, m, finest):
    """Per-axis strata ``(lo, hi, count)``: each cell interval gets at least
    ``m`` strata spread over its smooth pieces, none wider than ``finest``."""
    out = []
    for a, b, c in _aperture_intervals(bench, retina_x, axis):
        for lo, hi in _panel_pieces(bench, retina_x, axis, a, b, c):
            share = m * (hi - lo) / (b - a)
            out.append((lo, hi, max(1, int(math.ceil(share - 1e-9)),
                                    int(math.ceil((hi - lo) / finest - 1e-9)))))
    return out


def _aligned_samples(bench, settings, pixel, xr, yr):
    """Stratified pupil samples aligned with the pre-images of the array cells.

    The pupil is cut into rectangles on which the traced ray stays in one cell
    (inside the opening, for pinholes) and reads a smooth part of the panel.
    Each cell gets at least ``m x m`` jittered strata (``m = sqrt(samples / 16)``)
    and no stratum is coarser than the plain ``side x side`` pupil
    stratification. A rectangle's samples inside the pupil disc share the exact
    area of its overlap with the disc; if none falls inside, the overlap point
    nearest the pupil center stands in.
    """
    m = max(1, int(round(math.sqrt(settings.samples / 16.0))))
    rng = np.random.default_rng([int(bench.rng_seed), int(pixel)])
    r = bench.eye.pupil_radius
    finest = 2.0 * r / settings.side
    pts, wts = [], []
    strata_y = _strata(bench, yr, 1, m, finest)
    for ax0, ax1, mx in _strata(bench, xr, 0, m, finest):
        for ay0, ay1, my in strata_y:
            area = disc_rect_area(ax0, ax1, ay0, ay1, r)
            if area <= 0.0:
                continue
            jit = rng.random((2, mx, my))
            i, j = np.meshgrid(np.arange(mx), np.arange(my), indexing="ij")
            u = (ax0 + (i + jit[0]) * ((ax1 - ax0) / mx)).ravel()
            v = (ay0 + (j + jit[1]) * ((ay1 - ay0) / my)).ravel()
            inside = u**2 + v**2 <= r * r
            if inside.any():
                p = np.column_stack([u[inside], v[inside]])
            else:
                p = np.array([[min(max(0.0, ax0), ax1), min(max(0.0, ay0), ay1)]])
            pts.append(p)
            wts.append(np.full(len(p), area / len(p)))
    if not pts:
        return np.zeros((0, 2)), np.zeros(0)
    return np.concatenate(pts), np.concatenate(wts)


def _pixel_samples(bench, settings, pixel, xr, yr):
    """Pupil points and their area weights for one retinal pixel."""
    if settings.aligned_strata and bench.array is not None:
        return _aligned_samples(bench, settings, pixel, xr, yr)
    pts = pupil_samples(bench.eye, settings, bench.rng_seed, pixel)
    return pts, np.full(len(pts), math.pi * bench.eye.pupil_radius**2 / len(pts))


def panel_footprint(bench: OpticalBench, pixel: tuple[int, int],
                    settings: RenderSettings = RenderSettings()) -> np.ndarray:
    """Display-plane hit points ``(n, 2)`` of the rays of one retinal pixel."""
    xr, yr = retina_coords(bench.geometry)
    i, j = pixel
    pup = pupil_samples(bench.eye, settings, bench.rng_seed, i * bench.retina_resolution[1] + j)
    hx, _ = trace_to_display(bench.eye, bench.display_distance, xr[i], pup[:, 0])
    hy, _ = trace_to_display(bench.eye, bench.display_distance, yr[j], pup[:, 1])
    return np.column_stack([hx, hy])


def _render_rows(bench, settings, rows, xr, yr):
    r_y = bench.retina_resolution[1]
    pupil_area = math.pi * bench.eye.pupil_radius**2
    out = np.zeros((len(rows), r_y, bench.channels))
    for n, i in enumerate(rows):
        pix = [_pixel_samples(bench, settings, i * r_y + j, xr[i], yr[j]) for j in range(r_y)]
        if len({len(p) for p, _ in pix}) == 1 and len(pix[0][0]):
            pup = np.stack([p for p, _ in pix])  # (r_y, n_s, 2)
            w = np.stack([w for _, w in pix])
            val, ok = _shade(bench, xr[i], yr[:, None], pup[..., 0], pup[..., 1])
            acc = (val * (w * ok)[..., None]).sum(axis=1)
            valid = (w * ok).sum(axis=1)
        else:
            acc = np.zeros((r_y, bench.channels))
            valid = np.zeros(r_y)
            for j, (p, w) in enumerate(pix):
                if len(p):
                    val, ok = _shade(bench, xr[i], yr[j], p[:, 0], p[:, 1])
                    acc[j] = (val * (w * ok)[:, None]).sum(axis=0)
                    valid[j] = (w * ok).sum()
        norm = valid if bench.light_field is not None else np.full(r_y, pupil_area)
        out[n] = np.where(norm[:, None] > 0, acc / np.where(norm > 0, norm, 1.0)[:, None], 0.0)
    return out


def render(bench: OpticalBench, settings: RenderSettings = RenderSettings()) -> np.ndarray:
    """Retinal image ``(r_x, r_y, channels)`` clamped to [0, 1].

    Each pixel integrates its pupil rays over the pupil area. Rays stopped
    by a pinhole mask or missing the panel count as black; rays that miss an
    ideal light-field emitter's domain are left out of the average instead.
    Pixel streams are keyed on ``(seed, pixel index)``, so the result does
    not depend on ``settings.threads``.
    """
    xr, yr = retina_coords(bench.geometry)
    r_x = bench.retina_resolution[0]
    chunks = [list(range(s, min(s + 4, r_x))) for s in range(0, r_x, 4)]
    if settings.threads == 1:
        parts = [_render_rows(bench, settings, rows, xr, yr) for rows in chunks]
    else:
        with ThreadPoolExecutor(settings.threads) as pool:
            parts = list(pool.map(lambda rows: _render_rows(bench, settings, rows, xr, yr), chunks))
    return np.clip(np.concatenate(parts, axis=0), 0.0, 1.0)


def mean_luminance(img) -> float:
    return float(np.mean(img))
