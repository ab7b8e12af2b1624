"""Command-line interface: ``vcd prefilter | simulate | pipeline | metrics``.

Exit codes: 0 success, 1 configuration error, 2 runtime or numeric error,
3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, PRESETS, dump_config, load_config, parse_config
from .forward import psnr
from .imaging import read_png, write_png
from .optics import LightField4D
from .panel import MisalignedArrayError, read_panel, write_panel
from .pipeline import (StageError, bare_panel_image, load_source, prefilter_bench,
                       render_panel, run_experiment, scene_geometry)
from .retina import OpticalBench, mean_luminance, render
from .solver import write_residual_csv

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3


def tile_light_field(L: LightField4D) -> np.ndarray:
    """Angular grid of spatial slices: tile ``(a, b)`` holds ``L[:, :, a, b]``."""
    n_x, n_y, n_u, n_v, c = L.radiance.shape
    return L.radiance.transpose(2, 0, 3, 1, 4).reshape(n_u * n_x, n_v * n_y, c)


def untile_light_field(tiled: np.ndarray, grid) -> np.ndarray:
    c = tiled.shape[2]
    return tiled.reshape(grid.n_u, grid.n_x, grid.n_v, grid.n_y, c).transpose(1, 3, 0, 2, 4)


def write_light_field(path: Path, L: LightField4D) -> None:
    bits = 16 if L.channels == 1 else 8
    write_png(path, tile_light_field(L), bits=bits)
    meta = {"grid": asdict(L.grid), "channels": L.channels, "bits": bits,
            "layout": "tile (a, b) at pixel offset (a * n_x, b * n_y) holds L[:, :, a, b]"}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2))


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True))


def _manifest(out: Path, command: str, config: ExperimentConfig, outputs) -> None:
    (out / "config.toml").write_text(dump_config(config))
    _write_json(out / "manifest.json", {
        "command": command,
        "version": __version__,
        "config": config.to_dict(),
        "outputs": sorted(str(p) for p in outputs) + ["config.toml"],
    })


def _config(args) -> ExperimentConfig:
    path = args.config
    if path is not None and Path(path).suffix == ".json":
        # A manifest from an earlier run: reuse its resolved config.
        data = json.loads(Path(path).read_text())["config"]
        config = parse_config(data)
        if args.preset is None and not args.set and args.seed is None and args.out is None:
            return config
        raise ConfigError("", "a manifest cannot be combined with --preset/--set/--seed/--out")
    return load_config(path, args.preset, args.set or (), args.seed, args.out)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def cmd_prefilter(args) -> int:
    config = _config(args)
    kind = config.array.type
    if kind == "none":
        raise ConfigError("array.type", "prefilter needs a pinhole or lenslet array")
    out = Path(config.output)
    out.mkdir(parents=True, exist_ok=True)
    target = load_source(config.source, config.retina_resolution())
    pre = prefilter_bench(config, target, kind)
    write_light_field(out / "lightfield.png", pre.result.L_d)
    write_panel(out / "panel.png", pre.panel_image, config.array_spec(kind),
                config.panel_spec(kind), pre.result.L_d.grid)
    write_residual_csv(out / "residuals.csv", pre.result.residual_history)
    _write_json(out / "prefilter.json", {
        "array": kind,
        "iterations": pre.result.iterations_used,
        "converged": pre.result.converged,
        "final_residual": pre.result.final_residual,
        "predicted_psnr": psnr(pre.predicted, target),
        "matrix": {"rows": pre.matrix.n_rows, "cols": pre.matrix.n_cols, "nnz": pre.matrix.nnz},
    })
    _manifest(out, "prefilter", config, ["lightfield.png", "lightfield.json", "panel.png",
                                         "panel.json", "residuals.csv", "prefilter.json"])
    _log(f"{kind}: {pre.result.iterations_used} iterations, residual "
         f"{pre.result.residual_history[0]:.4g} -> {pre.result.final_residual:.4g}; wrote {out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    config = _config(args)
    out = Path(config.output)
    out.mkdir(parents=True, exist_ok=True)
    target = load_source(config.source, config.retina_resolution())
    if args.panel is not None:
        image, array, panel, _ = read_panel(args.panel)
        geom = scene_geometry(config)
        bench = OpticalBench(config.eye_model(), config.scene.display_distance,
                             geom.retina_resolution, geom.retina_extent, image, panel, array,
                             rng_seed=config.seed)
        retina = render(bench, config.render_settings())
        kind = "none" if array is None else array.kind
    else:
        kind = config.array.type
        if kind == "none":
            image = bare_panel_image(config, target)
        else:
            image = prefilter_bench(config, target, kind).panel_image
        retina = render_panel(config, image, kind)
    write_png(out / "retina.png", retina)
    report = {"config": config.to_dict(), "array": kind,
              "panel": None if args.panel is None else str(args.panel),
              "psnr": psnr(retina, target), "mean_luminance": mean_luminance(retina)}
    _write_json(out / "report.json", report)
    _manifest(out, "simulate", config, ["retina.png", "report.json"])
    _log(f"{kind}: PSNR {report['psnr']:.2f} dB, mean luminance {report['mean_luminance']:.4f}")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    config = _config(args)
    out = Path(config.output)
    out.mkdir(parents=True, exist_ok=True)
    report = run_experiment(config)
    written = []
    for name, img in report.images.items():
        write_png(out / f"{name}.png", img)
        written.append(f"{name}.png")
    for kind, pre in report.prefilters.items():
        write_panel(out / f"panel_{kind}.png", pre.panel_image, config.array_spec(kind),
                    config.panel_spec(kind), pre.result.L_d.grid)
        write_residual_csv(out / f"residuals_{kind}.csv", pre.result.residual_history)
        written += [f"panel_{kind}.png", f"panel_{kind}.json", f"residuals_{kind}.csv"]
    _write_json(out / "report.json", report.to_json())
    _manifest(out, "pipeline", config, written + ["report.json"])
    p = report.psnr
    _log(f"{config.preset}: PSNR defocused {p['defocused']:.2f}, pinhole {p['pinhole_vcd']:.2f}, "
         f"lenslet {p['lenslet_vcd']:.2f} dB ({report.wall_time:.1f} s); wrote {out}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    a = read_png(args.a)
    b = read_png(args.b)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape[:2]} vs {b.shape[:2]}")
    result = {"psnr": psnr(a, b), "mean_abs_diff": float(np.mean(np.abs(a - b))),
              "max_abs_diff": float(np.max(np.abs(a - b))),
              "mean_luminance": [mean_luminance(a), mean_luminance(b)]}
    print(json.dumps(result, indent=2))
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit 1), not argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vcd", description="Vision-correcting display simulator.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="TOML config file, or a manifest.json from an earlier run")
        p.add_argument("--preset", choices=sorted(PRESETS), help="start from a named preset")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one field, e.g. eye.focus_distance=0.5 (repeatable)")
        p.add_argument("--seed", type=int, help="render seed")
        p.add_argument("--out", help="output directory")
        return p

    common(sub.add_parser("prefilter", help="solve for the prefiltered light field and panel"))
    sim = common(sub.add_parser("simulate", help="render one bench onto the retina"))
    sim.add_argument("--panel", help="panel PNG written by 'prefilter' (reads its JSON sidecar)")
    common(sub.add_parser("pipeline", help="source, defocused, pinhole and lenslet renders"))
    met = sub.add_parser("metrics", help="PSNR and differences between two PNGs")
    met.add_argument("a")
    met.add_argument("b")
    return parser


COMMANDS = {"prefilter": cmd_prefilter, "simulate": cmd_simulate, "pipeline": cmd_pipeline,
            "metrics": cmd_metrics}


def _classify(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, MisalignedArrayError)):
        return EXIT_CONFIG
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_RUNTIME


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except StageError as exc:
        _log(f"error: {exc}")
        return _classify(exc.cause)
    except (ConfigError, MisalignedArrayError) as exc:
        _log(f"config error: {exc}")
        return EXIT_CONFIG
    except OSError as exc:
        _log(f"I/O error: {exc}")
        return EXIT_IO
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        _log(f"error: {type(exc).__name__}: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
