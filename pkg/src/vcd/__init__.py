"""Simulation of vision-correcting displays.

A defocused eye looks at a panel behind a pinhole or lenslet array. The
package builds the linear map from the display light field to the retinal
image, solves for the light field that makes the retinal image sharp,
interlaces it onto the panel and checks the result with an independent
ray tracer.
"""

__version__ = "0.1.0"

from .optics import (LightField4D, LightFieldGrid, RayCoord, RayTransferMatrix, eye_transport,
                     invert, refract, reparam, translate)
from .forward import (EyeModel, PrefilterMatrix, SceneGeometry, build_masked_prefilter_matrix,
                      build_prefilter_matrix, psnr, simulate_retina)
from .solver import PrefilterResult, SolverOptions, solve_prefilter
from .panel import (LensletArraySpec, MisalignedArrayError, PanelImage, PanelSpec,
                    PinholeArraySpec, array_grid, extract, interlace, interlace_shifted_set)
from .retina import OpticalBench, RenderSettings, mean_luminance, render
from .config import ConfigError, ExperimentConfig, PRESETS, load_config
from .pipeline import ExperimentReport, StageError, run_experiment

__all__ = [
    "LightField4D", "LightFieldGrid", "RayCoord", "RayTransferMatrix", "eye_transport", "invert",
    "refract", "reparam", "translate",
    "EyeModel", "PrefilterMatrix", "SceneGeometry", "build_masked_prefilter_matrix",
    "build_prefilter_matrix", "psnr", "simulate_retina",
    "PrefilterResult", "SolverOptions", "solve_prefilter",
    "LensletArraySpec", "MisalignedArrayError", "PanelImage", "PanelSpec", "PinholeArraySpec",
    "array_grid", "extract", "interlace", "interlace_shifted_set",
    "OpticalBench", "RenderSettings", "mean_luminance", "render",
    "ConfigError", "ExperimentConfig", "PRESETS", "load_config",
    "ExperimentReport", "StageError", "run_experiment",
]
