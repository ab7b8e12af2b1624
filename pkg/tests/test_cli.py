import csv
import json
import subprocess
import sys

import numpy as np
import pytest
import tomli

from vcd.cli import main, tile_light_field, untile_light_field
from vcd.imaging import read_png
from vcd.optics import LightField4D, LightFieldGrid
from vcd.panel import read_panel

SMALL = ["--set", "scene.retina_resolution=[16, 16]", "--set", "render.samples=64",
         "--set", "solver.max_iterations=150"]


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def prefiltered(tmp_path_factory):
    out = tmp_path_factory.mktemp("pre")
    assert run("prefilter", "--preset", "hyperopic", *SMALL, "--out", out) == 0
    return out


def test_prefilter_outputs(prefiltered):
    out = prefiltered
    for name in ("lightfield.png", "lightfield.json", "panel.png", "panel.json", "residuals.csv",
                 "prefilter.json", "manifest.json", "config.toml"):
        assert (out / name).is_file(), name
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "prefilter"
    assert "panel.png" in manifest["outputs"]
    assert tomli.loads((out / "config.toml").read_text()) == manifest["config"]
    image, array, panel, grid = read_panel(out / "panel.png")
    assert array.kind == "pinhole" and panel.emission_gain == 50.0
    assert image.pixels.shape[:2] == (80, 80)


def test_residuals_do_not_increase(prefiltered):
    with open(prefiltered / "residuals.csv") as fh:
        rows = list(csv.reader(fh))
    values = [float(r[1]) for r in rows[1:]]
    assert len(values) >= 2
    assert all(b <= a * (1 + 1e-9) for a, b in zip(values, values[1:]))


def test_light_field_tiles_round_trip():
    grid = LightFieldGrid(4, 3, 5, 5, 5e-4, 0.03)
    rad = np.random.default_rng(0).random(grid.shape + (1,))
    L = LightField4D(grid, rad)
    tiled = tile_light_field(L)
    assert tiled.shape == (20, 15, 1)
    assert np.array_equal(tiled[2 * 4:3 * 4, 1 * 3:2 * 3], rad[:, :, 2, 1])
    assert np.array_equal(untile_light_field(tiled, grid), rad)


def test_saved_light_field_matches_panel(prefiltered):
    tiles = read_png(prefiltered / "lightfield.png")
    meta = json.loads((prefiltered / "lightfield.json").read_text())
    assert meta["bits"] == 16
    assert tiles.shape[:2] == (16 * 5, 16 * 5)


def test_simulate_from_saved_panel(prefiltered, tmp_path):
    assert run("simulate", "--config", prefiltered / "config.toml", "--panel",
               prefiltered / "panel.png", "--out", tmp_path) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["array"] == "pinhole"
    retina = read_png(tmp_path / "retina.png")
    assert retina.shape[:2] == (16, 16)


def test_simulate_bare_panel(tmp_path):
    assert run("simulate", *SMALL, "--set", "array.type=none", "--out", tmp_path) == 0
    assert json.loads((tmp_path / "report.json").read_text())["array"] == "none"


def test_prefilter_rejects_a_bare_panel(tmp_path, capsys):
    assert run("prefilter", *SMALL, "--set", "array.type=none", "--out", tmp_path) == 1
    assert "array.type" in capsys.readouterr().err


def test_outputs_are_deterministic_across_runs_and_threads(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("simulate", *SMALL, "--set", "array.type=lenslet", "--seed", 4, "--out", a) == 0
    assert run("simulate", *SMALL, "--set", "array.type=lenslet", "--set", "render.threads=3",
               "--seed", 4, "--out", b) == 0
    assert (a / "retina.png").read_bytes() == (b / "retina.png").read_bytes()


def test_manifest_reproduces_the_run(prefiltered, tmp_path):
    manifest = json.loads((prefiltered / "manifest.json").read_text())
    manifest["config"]["output"] = str(tmp_path)
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(manifest))
    assert run("prefilter", "--config", path) == 0
    assert (tmp_path / "panel.png").read_bytes() == (prefiltered / "panel.png").read_bytes()
    assert run("prefilter", "--config", path, "--seed", 1) == 1


def test_pipeline_and_metrics(tmp_path, capsys):
    assert run("pipeline", *SMALL, "--out", tmp_path) == 0
    for name in ("source", "defocused", "pinhole_vcd", "lenslet_vcd", "panel_pinhole",
                 "panel_lenslet"):
        assert (tmp_path / f"{name}.png").is_file()
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["psnr_pinhole_vcd"] > report["psnr_defocused"]
    capsys.readouterr()
    assert run("metrics", tmp_path / "source.png", tmp_path / "source.png") == 0
    same = json.loads(capsys.readouterr().out)
    assert same["psnr"] == 99.0 and same["max_abs_diff"] == 0.0
    assert run("metrics", tmp_path / "source.png", tmp_path / "defocused.png") == 0
    diff = json.loads(capsys.readouterr().out)
    assert diff["psnr"] == pytest.approx(report["psnr_defocused"], abs=0.05)


@pytest.mark.parametrize("args, code, needle", [
    (["pipeline", "--set", "panel.ppi=300"], 1, "300"),
    (["pipeline", "--set", "eye.foo=1"], 1, "eye.foo"),
    (["pipeline", "--config", "/nonexistent/run.toml"], 3, "/nonexistent/run.toml"),
    (["pipeline", "--set", "source=/nonexistent/img.png"], 3, "/nonexistent/img.png"),
    (["metrics", "/nonexistent/a.png", "/nonexistent/b.png"], 3, "/nonexistent/a.png"),
])
def test_exit_codes(args, code, needle, tmp_path, capsys):
    extra = [] if args[0] == "metrics" else ["--out", tmp_path]
    assert run(*args, *extra) == code
    assert needle in capsys.readouterr().err


@pytest.mark.parametrize("args", [["pipeline", "--bogus"], ["pipeline", "--preset", "presbyopic"],
                                  ["launch"]])
def test_usage_errors_exit_as_config_errors(args, capsys):
    with pytest.raises(SystemExit) as exc:
        main(args)
    assert exc.value.code == 1
    assert "usage" in capsys.readouterr().err


def test_metrics_rejects_mismatched_shapes(tmp_path, capsys):
    from vcd.imaging import write_png
    write_png(tmp_path / "a.png", np.zeros((4, 4, 1)))
    write_png(tmp_path / "b.png", np.zeros((5, 4, 1)))
    assert run("metrics", tmp_path / "a.png", tmp_path / "b.png") == 2


def test_console_entry_point_runs():
    done = subprocess.run([sys.executable, "-m", "vcd", "--version"], capture_output=True, text=True)
    assert done.returncode == 0 and "vcd" in done.stdout
