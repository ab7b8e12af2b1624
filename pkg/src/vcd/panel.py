"""LCD panel images behind pinhole or lenslet arrays.

Each array cell covers a ``k x k`` block of panel pixels, where ``k`` is the
array pitch divided by the pixel pitch. The block under spatial sample
``(i, j)`` holds that sample's angular slice: panel pixel ``(i*k + a,
j*k + b)`` carries light-field sample ``(i, j, a, b)``.

Both a pinhole at gap ``g`` and a lenslet whose focal plane is the panel
send the pixel at offset ``o`` from the cell center along the slope
``o / g`` (eye-to-display frame). The angular axis of the light field uses
exactly that slope, so the same block layout serves both arrays.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .imaging import as_channels, read_png, write_png
from .optics import LightField4D, LightFieldGrid

__all__ = [
    "MisalignedArrayError",
    "PanelSpec",
    "PinholeArraySpec",
    "LensletArraySpec",
    "PanelImage",
    "angular_count",
    "array_grid",
    "interlace",
    "extract",
    "assign_shifts",
    "interlace_shifted_set",
    "array_from_dict",
    "write_panel",
    "read_panel",
]


class MisalignedArrayError(ValueError):
    """Array pitch is not a whole number of panel pixels."""


@dataclass(frozen=True)
class PanelSpec:
    ppi: float = 254.0
    resolution: tuple[int, int] = (320, 320)
    emission_gain: float = 1.0

    def __post_init__(self):
        if not self.ppi > 0:
            raise ValueError(f"ppi must be positive, got {self.ppi!r}")
        if not self.emission_gain > 0:
            raise ValueError(f"emission_gain must be positive, got {self.emission_gain!r}")
        p_x, p_y = self.resolution
        if min(p_x, p_y) < 1:
            raise ValueError("panel resolution must be >= 1")
        object.__setattr__(self, "resolution", (int(p_x), int(p_y)))

    @property
    def pixel_pitch(self) -> float:
        return 0.0254 / self.ppi

    def with_resolution(self, resolution) -> "PanelSpec":
        return PanelSpec(self.ppi, tuple(resolution), self.emission_gain)


@dataclass(frozen=True)
class PinholeArraySpec:
    """Square pinholes of side ``aperture`` on a square lattice of ``pitch``."""

    pitch: float = 500e-6
    aperture: float = 100e-6
    gap: float = 3e-3
    kind = "pinhole"

    def __post_init__(self):
        if not 0 < self.aperture < self.pitch:
            raise ValueError(f"need 0 < aperture < pitch, got {self.aperture!r}, {self.pitch!r}")
        if not self.gap > 0:
            raise ValueError(f"gap must be positive, got {self.gap!r}")

    @property
    def spatio_angular_ratio(self) -> float:
        return self.pitch / self.aperture

    @property
    def fill_factor(self) -> float:
        return (self.aperture / self.pitch) ** 2


@dataclass(frozen=True)
class LensletArraySpec:
    """Square thin lenslets with 100% fill, focused on the panel.

    ``thickness`` is kept for reference only; the thin-lens model ignores it.
    """

    pitch: float = 500e-6
    focal: float = 3e-3
    thickness: float = 1e-3
    shape: str = "square"
    kind = "lenslet"

    def __post_init__(self):
        if not (self.pitch > 0 and self.focal > 0):
            raise ValueError(f"pitch and focal must be positive, got {self.pitch!r}, {self.focal!r}")
        if self.shape != "square":
            raise ValueError(f"only square lenslets are supported, got {self.shape!r}")

    @property
    def gap(self) -> float:
        return self.focal

    @property
    def fill_factor(self) -> float:
        return 1.0


@dataclass(frozen=True, eq=False)
class PanelImage:
    """Panel pixels, shape ``(p_x, p_y, channels)``, values in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = as_channels(np.array(self.pixels, dtype=float))
        if px.size and (px.min() < 0.0 or px.max() > 1.0):
            raise ValueError(f"panel values outside [0, 1]: [{px.min()}, {px.max()}]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[0]

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


def angular_count(array_pitch: float, pixel_pitch: float) -> int:
    """Whole panel pixels per array cell along one axis."""
    ratio = array_pitch / pixel_pitch
    k = int(round(ratio))
    if k < 1 or abs(ratio - k) > 1e-9 * ratio:
        raise MisalignedArrayError(
            f"array pitch {array_pitch!r} m is not a whole multiple of pixel pitch "
            f"{pixel_pitch!r} m (ratio {ratio:.6g})"
        )
    return k


def array_grid(array, panel: PanelSpec, n_x: int, n_y: int) -> LightFieldGrid:
    """Light-field lattice reproduced by ``array`` over ``n_x x n_y`` cells."""
    k = angular_count(array.pitch, panel.pixel_pitch)
    return LightFieldGrid(n_x, n_y, k, k, array.pitch, k * panel.pixel_pitch / array.gap)


def _check_grid(grid: LightFieldGrid, array, panel: PanelSpec) -> int:
    k = angular_count(array.pitch, panel.pixel_pitch)
    if grid.n_u != k or grid.n_v != k:
        raise ValueError(f"light field has {grid.n_u}x{grid.n_v} angular samples, array needs {k}x{k}")
    return k


def interlace(L_d: LightField4D, array, panel: PanelSpec) -> PanelImage:
    k = _check_grid(L_d.grid, array, panel)
    n_x, n_y = L_d.grid.n_x, L_d.grid.n_y
    p_x, p_y = panel.resolution
    if p_x < n_x * k or p_y < n_y * k:
        raise ValueError(f"panel {p_x}x{p_y} too small for {n_x}x{n_y} cells of {k}x{k} pixels")
    block = L_d.radiance.transpose(0, 2, 1, 3, 4).reshape(n_x * k, n_y * k, L_d.channels)
    out = np.zeros((p_x, p_y, L_d.channels))
    out[: n_x * k, : n_y * k] = block
    return PanelImage(out)


def extract(I_d: PanelImage, array, panel: PanelSpec) -> LightField4D:
    """Inverse of :func:`interlace`; the panel must tile exactly into cells."""
    k = angular_count(array.pitch, panel.pixel_pitch)
    p_x, p_y = I_d.width, I_d.height
    if p_x % k or p_y % k:
        raise MisalignedArrayError(f"panel {p_x}x{p_y} is not divisible into {k}x{k} cells")
    n_x, n_y = p_x // k, p_y // k
    rad = I_d.pixels.reshape(n_x, k, n_y, k, I_d.channels).transpose(0, 2, 1, 3, 4)
    return LightField4D(array_grid(array, panel, n_x, n_y), rad)


def assign_shifts(shifts, n_u: int, n_v: int) -> np.ndarray:
    """Index into ``shifts`` serving each angular sample, shape ``(n_u, n_v)``.

    A shift of ``(dx, dy)`` spatial samples serves the viewing direction at
    angular index ``center + (dx, dy)``; every angular sample takes the
    nearest shift, ties going to the earlier entry.
    """
    shifts = np.asarray(shifts, dtype=float).reshape(-1, 2)
    a, b = np.meshgrid(np.arange(n_u) - (n_u - 1) / 2.0, np.arange(n_v) - (n_v - 1) / 2.0,
                       indexing="ij")
    d2 = (a[..., None] - shifts[:, 0]) ** 2 + (b[..., None] - shifts[:, 1]) ** 2
    return np.argmin(d2, axis=-1)


def interlace_shifted_set(image, shifts, prefilter, opts, array, panel: PanelSpec) -> PanelImage:
    """Prefilter shifted copies of ``image`` and interlace them into one panel.

    ``image`` is the retinal target; each copy is shifted by whole samples
    (edges replicated) and solved with ``prefilter`` (a
    :class:`~vcd.forward.PrefilterMatrix`). Angular samples are then taken
    from the copy chosen by :func:`assign_shifts`.
    """
    from scipy import ndimage

    from .solver import solve_prefilter

    shifts = [tuple(int(s) for s in sh) for sh in shifts]
    if not shifts:
        raise ValueError("shifts must be non-empty")
    if (0, 0) not in shifts:
        raise ValueError("shifts must include (0, 0)")
    target = as_channels(image)
    grid = prefilter.grid
    _check_grid(grid, array, panel)
    fields = []
    for dx, dy in shifts:
        moved = np.stack([ndimage.shift(target[..., c], (dx, dy), order=0, mode="nearest")
                          for c in range(target.shape[2])], axis=-1)
        fields.append(solve_prefilter(prefilter, moved, opts).L_d.radiance)
    owner = assign_shifts(shifts, grid.n_u, grid.n_v)
    stack = np.stack(fields)  # (n_shifts, n_x, n_y, n_u, n_v, c)
    au, av = np.meshgrid(np.arange(grid.n_u), np.arange(grid.n_v), indexing="ij")
    merged = stack[owner, :, :, au, av]  # (n_u, n_v, n_x, n_y, c)
    return interlace(LightField4D(grid, merged.transpose(2, 3, 0, 1, 4)), array, panel)


def array_to_dict(array) -> dict:
    if array is None:
        return {"type": "none"}
    return {"type": array.kind, **asdict(array)}


def array_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("type", "none")
    if kind == "none":
        return None
    if kind == "pinhole":
        return PinholeArraySpec(**d)
    if kind == "lenslet":
        return LensletArraySpec(**d)
    raise ValueError(f"unknown array type {kind!r}")


def write_panel(path, image: PanelImage, array, panel: PanelSpec, grid=None, bits: int = 8) -> Path:
    """Write ``image`` as PNG plus a JSON sidecar (same stem) describing it."""
    path = Path(path)
    write_png(path, image.pixels, bits=bits)
    meta = {
        "array": array_to_dict(array),
        "panel": {"ppi": panel.ppi, "resolution": list(panel.resolution),
                  "emission_gain": panel.emission_gain},
        "light_field": None if grid is None else asdict(grid),
        "bits": bits,
    }
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps(meta, indent=2))
    return sidecar


def read_panel(path):
    """Read a PNG written by :func:`write_panel`; returns ``(image, array, panel, grid)``."""
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    pixels = read_png(path)
    p = meta["panel"]
    panel = PanelSpec(p["ppi"], tuple(p["resolution"]), p["emission_gain"])
    grid = LightFieldGrid(**meta["light_field"]) if meta.get("light_field") else None
    if pixels.shape[:2] != panel.resolution:
        raise ValueError(f"{path}: image is {pixels.shape[:2]}, metadata says {panel.resolution}")
    return PanelImage(pixels), array_from_dict(meta["array"]), panel, grid
