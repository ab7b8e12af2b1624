"""Experiment configuration: TOML files, presets and ``key=value`` overrides.

A configuration is a set of small sections (``eye``, ``scene``, ``panel`` ...)
plus a few top-level keys. Every key has a default, so a file only needs the
values it changes. Loading validates each section against the classes that
consume it and reports problems by dotted field path.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import tomli
import tomli_w

from .forward import EyeModel
from .panel import (LensletArraySpec, MisalignedArrayError, PanelSpec, PinholeArraySpec,
                    angular_count)
from .retina import RenderSettings
from .solver import SolverOptions

__all__ = [
    "ConfigError",
    "EyeSection",
    "SceneSection",
    "PanelSection",
    "ArraySection",
    "PinholeSection",
    "LensletSection",
    "PrefilterSection",
    "SolverSection",
    "RenderSection",
    "ExperimentConfig",
    "PRESETS",
    "load_config",
    "parse_config",
    "dump_config",
    "parse_override",
]


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


@dataclass
class EyeSection:
    focus_distance: float = 0.38
    retina_depth: float = 0.025
    pupil_diameter: float = 0.006


@dataclass
class SceneSection:
    display_distance: float = 0.25
    retina_resolution: list = field(default_factory=lambda: [64, 64])


@dataclass
class PanelSection:
    """Bare panel. ``resolution = "auto"`` sizes it to the retina times ``k``."""

    ppi: float = 254.0
    resolution: object = "auto"
    emission_gain: float = 1.0


@dataclass
class ArraySection:
    """Array used by the single-bench ``prefilter`` and ``simulate`` commands."""

    type: str = "pinhole"


@dataclass
class PinholeSection:
    pitch: float = 500e-6
    aperture: float = 100e-6
    gap: float = 3e-3
    emission_gain: float = 50.0


@dataclass
class LensletSection:
    pitch: float = 500e-6
    focal: float = 3e-3
    thickness: float = 1e-3
    emission_gain: float = 1.0


@dataclass
class PrefilterSection:
    """``model = "array"`` accounts for the physical array (pinhole mask,
    constant lenslet cells); ``"ideal"`` is the plain quadrilinear operator."""

    model: str = "array"
    aperture_samples: list = field(default_factory=lambda: [15, 15])
    shifts: list = field(default_factory=lambda: [[0, 0]])


@dataclass
class SolverSection:
    max_iterations: int = 500
    relative_residual_tolerance: float = 1e-4
    power_iterations: int = 50
    step_safety: float = 0.95
    momentum: bool = True


@dataclass
class RenderSection:
    samples: int = 1024
    sampling: str = "stratified"
    threads: int = 1
    aligned_strata: bool = True


_SECTIONS = {
    "eye": EyeSection,
    "scene": SceneSection,
    "panel": PanelSection,
    "array": ArraySection,
    "pinhole": PinholeSection,
    "lenslet": LensletSection,
    "prefilter": PrefilterSection,
    "solver": SolverSection,
    "render": RenderSection,
}


@dataclass
class ExperimentConfig:
    """Fully resolved experiment. ``source`` is a PNG path, ``builtin:camera``
    or ``pattern:<chart|rings|gradient>``."""

    source: str = "builtin:camera"
    output: str = "vcd-out"
    seed: int = 0
    preset: str = "hyperopic"
    eye: EyeSection = field(default_factory=EyeSection)
    scene: SceneSection = field(default_factory=SceneSection)
    panel: PanelSection = field(default_factory=PanelSection)
    array: ArraySection = field(default_factory=ArraySection)
    pinhole: PinholeSection = field(default_factory=PinholeSection)
    lenslet: LensletSection = field(default_factory=LensletSection)
    prefilter: PrefilterSection = field(default_factory=PrefilterSection)
    solver: SolverSection = field(default_factory=SolverSection)
    render: RenderSection = field(default_factory=RenderSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    # Domain objects -------------------------------------------------------

    def eye_model(self) -> EyeModel:
        e = self.eye
        return EyeModel(e.focus_distance, e.retina_depth, e.pupil_diameter)

    def array_spec(self, kind: str | None = None):
        kind = self.array.type if kind is None else kind
        if kind == "pinhole":
            p = self.pinhole
            return PinholeArraySpec(p.pitch, p.aperture, p.gap)
        if kind == "lenslet":
            s = self.lenslet
            return LensletArraySpec(s.pitch, s.focal, s.thickness)
        if kind == "none":
            return None
        raise ConfigError("array.type", f"expected pinhole, lenslet or none, got {kind!r}")

    def angular_count(self) -> int:
        """Panel pixels per array cell, shared by both arrays."""
        pp = 0.0254 / self.panel.ppi
        return angular_count(self.pinhole.pitch, pp)

    def panel_resolution(self) -> tuple[int, int]:
        if self.panel.resolution == "auto":
            k = self.angular_count()
            r_x, r_y = self.scene.retina_resolution
            return (r_x * k, r_y * k)
        return tuple(int(v) for v in self.panel.resolution)

    def panel_spec(self, kind: str | None = None) -> PanelSpec:
        """Panel behind ``kind`` (or the bare panel for ``"none"``), with that
        bench's emission gain."""
        kind = self.array.type if kind is None else kind
        gain = {"pinhole": self.pinhole.emission_gain, "lenslet": self.lenslet.emission_gain,
                "none": self.panel.emission_gain}[kind]
        return PanelSpec(self.panel.ppi, self.panel_resolution(), gain)

    def solver_options(self) -> SolverOptions:
        return SolverOptions(**dataclasses.asdict(self.solver))

    def render_settings(self) -> RenderSettings:
        return RenderSettings(**dataclasses.asdict(self.render))

    def retina_resolution(self) -> tuple[int, int]:
        return tuple(int(v) for v in self.scene.retina_resolution)

    def shifts(self) -> list[tuple[int, int]]:
        return [tuple(int(v) for v in s) for s in self.prefilter.shifts]

    # Validation -----------------------------------------------------------

    def validate(self) -> "ExperimentConfig":
        def check(path, fn):
            try:
                return fn()
            except ConfigError:
                raise
            except (ValueError, TypeError) as exc:
                raise ConfigError(path, str(exc)) from None

        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed", f"expected an integer in [0, 2**64), got {self.seed!r}")
        if not self.source:
            raise ConfigError("source", "must not be empty")
        check("eye", self.eye_model)
        res = self.scene.retina_resolution
        if not isinstance(res, list) or len(res) != 2 or any(not isinstance(v, int) or v < 1 for v in res):
            raise ConfigError("scene.retina_resolution", f"expected two positive integers, got {res!r}")
        if not self.scene.display_distance > 0:
            raise ConfigError("scene.display_distance", "must be positive")
        if self.panel.resolution != "auto":
            r = self.panel.resolution
            if not isinstance(r, list) or len(r) != 2 or any(not isinstance(v, int) or v < 1 for v in r):
                raise ConfigError("panel.resolution", f"expected \"auto\" or two positive integers, got {r!r}")
        if self.array.type not in ("pinhole", "lenslet", "none"):
            raise ConfigError("array.type", f"expected pinhole, lenslet or none, got {self.array.type!r}")
        if not self.panel.ppi > 0:
            raise ConfigError("panel.ppi", f"must be positive, got {self.panel.ppi!r}")
        for kind in ("pinhole", "lenslet"):
            check(kind, lambda: self.array_spec(kind))
        pp = 0.0254 / self.panel.ppi
        for kind in ("pinhole", "lenslet"):
            try:
                angular_count(getattr(self, kind).pitch, pp)
            except MisalignedArrayError as exc:
                raise ConfigError(f"{kind}.pitch", f"{exc} at {self.panel.ppi!r} ppi") from None
        for kind in ("pinhole", "lenslet"):
            check(f"{kind}.emission_gain", lambda: self.panel_spec(kind))
        check("panel", lambda: self.panel_spec("none"))
        if self.pinhole.pitch != self.lenslet.pitch:
            raise ConfigError("lenslet.pitch", "pinhole and lenslet pitch must match")
        k = self.angular_count()
        p_x, p_y = self.panel_resolution()
        r_x, r_y = self.retina_resolution()
        if p_x < r_x * k or p_y < r_y * k:
            raise ConfigError("panel.resolution",
                              f"{p_x}x{p_y} cannot hold {r_x}x{r_y} cells of {k}x{k} pixels")
        if self.prefilter.model not in ("array", "ideal"):
            raise ConfigError("prefilter.model", f"expected array or ideal, got {self.prefilter.model!r}")
        a = self.prefilter.aperture_samples
        if not isinstance(a, list) or len(a) != 2 or any(not isinstance(v, int) or v < 1 for v in a):
            raise ConfigError("prefilter.aperture_samples", f"expected two positive integers, got {a!r}")
        sh = self.prefilter.shifts
        if not isinstance(sh, list) or not sh or any(not isinstance(s, list) or len(s) != 2 or
                         any(not isinstance(v, int) for v in s) for s in sh):
            raise ConfigError("prefilter.shifts", f"expected a list of [dx, dy] integer pairs, got {sh!r}")
        if [0, 0] not in sh:
            raise ConfigError("prefilter.shifts", "must include [0, 0]")
        check("solver", self.solver_options)
        check("render", self.render_settings)
        return self


PRESETS = {
    "hyperopic": {},
    # The hyperopic bench under the myopic name, for side-by-side runs.
    "myopic-literal": {},
    # Display beyond the focal plane, as myopia requires.
    "myopic-consistent": {"eye": {"focus_distance": 0.25}, "scene": {"display_distance": 0.38}},
    "infocus": {"eye": {"focus_distance": 0.38}, "scene": {"display_distance": 0.38}},
}


def _coerce(path: str, value, default):
    """Check ``value`` against the type of ``default``; ints widen to floats."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str) and path != "panel.resolution":
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if isinstance(value, dict):
        raise ConfigError(path, "expected a value, got a table")
    return value


def _build(cls, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(prefix, f"expected a table, got {data!r}")
    obj = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in names:
            raise ConfigError(path, "unknown key")
        if cls is ExperimentConfig and key in _SECTIONS:
            setattr(obj, key, _build(_SECTIONS[key], value, path))
        else:
            setattr(obj, key, _coerce(path, value, getattr(obj, key)))
    return obj


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def parse_override(item: str) -> dict:
    """``"eye.focus_distance=0.3"`` -> ``{"eye": {"focus_distance": 0.3}}``.

    The value is read as a TOML value; anything that does not parse is kept
    as a plain string.
    """
    key, sep, raw = item.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(key, f"override {item!r} is not of the form key=value")
    try:
        value = tomli.loads(f"v = {raw.strip()}")["v"]
    except tomli.TOMLDecodeError:
        value = raw.strip()
    out: dict = value
    for part in reversed(key.split(".")):
        out = {part: out}
    return out


def parse_config(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "").validate()


def load_config(path=None, preset: str | None = None, overrides=(), seed: int | None = None,
                output: str | None = None) -> ExperimentConfig:
    """Resolve defaults <- preset <- file <- overrides <- explicit arguments."""
    data: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError("preset", f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
        data = _merge({"preset": preset}, PRESETS[preset])
    if path is not None:
        with open(path, "rb") as fh:
            try:
                data = _merge(data, tomli.load(fh))
            except tomli.TOMLDecodeError as exc:
                raise ConfigError("", f"{path}: {exc}") from None
    for item in overrides:
        data = _merge(data, parse_override(item))
    if seed is not None:
        data["seed"] = seed
    if output is not None:
        data["output"] = output
    return parse_config(data)


def dump_config(config: ExperimentConfig) -> str:
    return tomli_w.dumps(config.to_dict())
