"""End-to-end experiments: prefilter, interlace and render one or more benches.

:func:`run_experiment` produces the four retinal images of a comparison run
(source, defocused bare panel, pinhole VCD, lenslet VCD) together with PSNR,
mean luminance and solver statistics.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .config import ExperimentConfig
from .forward import (PSNR_CAP, SceneGeometry, build_masked_prefilter_matrix,
                      build_prefilter_matrix, psnr, simulate_retina)
from .imaging import read_png, resample, test_pattern
from .panel import PanelImage, array_grid, interlace, interlace_shifted_set
from .retina import OpticalBench, mean_luminance, render
from .solver import PrefilterResult, solve_prefilter

__all__ = [
    "StageError",
    "PrefilterOutput",
    "ExperimentReport",
    "load_source",
    "scene_geometry",
    "prefilter_matrix",
    "prefilter_bench",
    "render_panel",
    "run_experiment",
]


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it and ``cause`` is the original error."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")


def load_source(spec: str, resolution: tuple[int, int]) -> np.ndarray:
    """Target image resampled to ``resolution``, values in [0, 1]."""
    if spec.startswith("pattern:"):
        n = max(resolution)
        img = test_pattern(n, spec.split(":", 1)[1])
    elif spec.startswith("builtin:"):
        name = spec.split(":", 1)[1]
        ref = resources.files("vcd") / "data" / f"{name}.png"
        if not ref.is_file():
            raise FileNotFoundError(f"no built-in image named {name!r}")
        with resources.as_file(ref) as path:
            img = read_png(path)
    else:
        img = read_png(spec)
    return np.clip(resample(img, resolution), 0.0, 1.0)


def scene_geometry(config: ExperimentConfig) -> SceneGeometry:
    """Retina sized to the image of the array cells (the magnified source)."""
    eye = config.eye_model()
    panel = config.panel_spec("none")
    r_x, r_y = config.retina_resolution()
    grid = array_grid(config.array_spec("pinhole"), panel, r_x, r_y)
    return SceneGeometry.matched(eye, config.scene.display_distance, grid, (r_x, r_y),
                                 tuple(config.prefilter.aperture_samples))


def prefilter_matrix(config: ExperimentConfig, kind: str):
    """Prefilter matrix for the ``kind`` bench, scaled by its emission gain."""
    eye = config.eye_model()
    geom = scene_geometry(config)
    array = config.array_spec(kind)
    panel = config.panel_spec(kind)
    r_x, r_y = config.retina_resolution()
    grid = array_grid(array, panel, r_x, r_y)
    if config.prefilter.model == "ideal":
        P = build_prefilter_matrix(eye, geom, grid)
    elif kind == "pinhole":
        P = build_masked_prefilter_matrix(eye, geom, grid, array.aperture, array.gap)
    else:
        P = build_masked_prefilter_matrix(eye, geom, grid, array.pitch, array.focal,
                                          element="lenslet")
    return P.scaled(panel.emission_gain)


@dataclass(frozen=True, eq=False)
class PrefilterOutput:
    kind: str
    matrix: object
    result: PrefilterResult
    panel_image: PanelImage
    predicted: np.ndarray
    seconds: float


def prefilter_bench(config: ExperimentConfig, target: np.ndarray, kind: str) -> PrefilterOutput:
    """Solve for the light field of one array and interlace it onto the panel.

    With several shifts the reported solver result is the one for the
    unshifted target.
    """
    t0 = time.perf_counter()
    array = config.array_spec(kind)
    panel = config.panel_spec(kind)
    P = prefilter_matrix(config, kind)
    opts = config.solver_options()
    result = solve_prefilter(P, target, opts)
    shifts = config.shifts()
    if shifts == [(0, 0)]:
        image = interlace(result.L_d, array, panel)
    else:
        image = interlace_shifted_set(target, shifts, P, opts, array, panel)
    predicted = simulate_retina(P, result.L_d)
    return PrefilterOutput(kind, P, result, image, predicted, time.perf_counter() - t0)


def render_panel(config: ExperimentConfig, image: PanelImage, kind: str) -> np.ndarray:
    """Retinal image of ``image`` shown behind the ``kind`` array (or bare)."""
    geom = scene_geometry(config)
    bench = OpticalBench(config.eye_model(), config.scene.display_distance, geom.retina_resolution,
                         geom.retina_extent, image, config.panel_spec(kind),
                         config.array_spec(kind), rng_seed=config.seed)
    return render(bench, config.render_settings())


def bare_panel_image(config: ExperimentConfig, target: np.ndarray) -> PanelImage:
    """The source drawn across the cell area of the bare panel."""
    k = config.angular_count()
    r_x, r_y = config.retina_resolution()
    p_x, p_y = config.panel_resolution()
    out = np.zeros((p_x, p_y, target.shape[2]))
    out[: r_x * k, : r_y * k] = resample(target, (r_x * k, r_y * k))
    return PanelImage(np.clip(out, 0.0, 1.0))


@dataclass(eq=False)
class ExperimentReport:
    config: ExperimentConfig
    images: dict = field(repr=False)
    panels: dict = field(repr=False)
    prefilters: dict = field(repr=False)
    psnr: dict
    mean_luminance: dict
    solver: dict
    stage_seconds: dict
    wall_time: float

    def to_json(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "psnr_defocused": self.psnr["defocused"],
            "psnr_pinhole_vcd": self.psnr.get("pinhole_vcd"),
            "psnr_lenslet_vcd": self.psnr.get("lenslet_vcd"),
            "psnr_cap": PSNR_CAP,
            "psnr": self.psnr,
            "mean_luminance": self.mean_luminance,
            "solver": self.solver,
            "stage_seconds": self.stage_seconds,
            "wall_time": self.wall_time,
        }


def _stage(name, fn, timings):
    t0 = time.perf_counter()
    try:
        out = fn()
    except Exception as exc:  # reported with the stage name
        raise StageError(name, exc) from exc
    timings[name] = time.perf_counter() - t0
    return out


def run_experiment(config: ExperimentConfig, arrays=("pinhole", "lenslet")) -> ExperimentReport:
    """Source, defocused baseline and one VCD render per entry of ``arrays``.

    PSNR is measured against the source resampled to the retina. Raises
    :class:`StageError` naming the first stage that fails.
    """
    t0 = time.perf_counter()
    timings: dict = {}
    target = _stage("load-source", lambda: load_source(config.source, config.retina_resolution()),
                    timings)
    images = {"source": target}
    panels = {}
    prefilters = {}
    bare = _stage("bare-panel", lambda: bare_panel_image(config, target), timings)
    panels["defocused"] = bare
    images["defocused"] = _stage("render-defocused", lambda: render_panel(config, bare, "none"),
                                 timings)
    for kind in arrays:
        pre = _stage(f"prefilter-{kind}", lambda: prefilter_bench(config, target, kind), timings)
        prefilters[kind] = pre
        panels[f"{kind}_vcd"] = pre.panel_image
        images[f"{kind}_vcd"] = _stage(f"render-{kind}",
                                       lambda: render_panel(config, pre.panel_image, kind), timings)
    scores = {name: psnr(img, target) for name, img in images.items() if name != "source"}
    lum = {name: mean_luminance(img) for name, img in images.items()}
    solver = {
        kind: {
            "iterations": pre.result.iterations_used,
            "converged": pre.result.converged,
            "initial_residual": pre.result.residual_history[0],
            "final_residual": pre.result.final_residual,
            "predicted_psnr": psnr(pre.predicted, target),
            "seconds": pre.seconds,
        }
        for kind, pre in prefilters.items()
    }
    return ExperimentReport(config, images, panels, prefilters, scores, lum, solver, timings,
                            time.perf_counter() - t0)
