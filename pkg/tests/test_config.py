import numpy as np
import pytest
import tomli
from hypothesis import given
from hypothesis import strategies as st

from vcd.config import (PRESETS, ConfigError, ExperimentConfig, dump_config, load_config,
                        parse_config, parse_override)
from vcd.panel import LensletArraySpec, PinholeArraySpec


def test_defaults_describe_the_reference_bench():
    c = ExperimentConfig().validate()
    eye = c.eye_model()
    assert eye.focus_distance == 0.38 and eye.retina_depth == 0.025
    assert eye.pupil_radius == pytest.approx(0.003)
    assert c.scene.display_distance == 0.25
    assert c.angular_count() == 5
    assert c.panel_resolution() == (320, 320)
    assert c.array_spec("pinhole") == PinholeArraySpec(500e-6, 100e-6, 3e-3)
    assert c.array_spec("lenslet") == LensletArraySpec(500e-6, 3e-3, 1e-3)
    assert c.array_spec("none") is None
    assert c.panel_spec("pinhole").emission_gain == 50.0
    assert c.panel_spec("lenslet").emission_gain == 1.0
    assert c.shifts() == [(0, 0)]


@given(st.floats(0.3, 2.0), st.floats(0.1, 0.29), st.integers(4, 96), st.integers(0, 2**32),
       st.sampled_from(["pinhole", "lenslet", "none"]), st.integers(16, 4096))
def test_dump_and_parse_round_trip(focus, display, res, seed, kind, samples):
    c = parse_config({"eye": {"focus_distance": focus}, "scene": {"display_distance": display,
                      "retina_resolution": [res, res + 1]}, "seed": seed,
                      "array": {"type": kind}, "render": {"samples": samples}})
    again = parse_config(tomli.loads(dump_config(c)))
    assert again == c


def test_presets_resolve():
    assert set(PRESETS) == {"hyperopic", "myopic-literal", "myopic-consistent", "infocus"}
    hyp = load_config(preset="hyperopic")
    assert hyp.preset == "hyperopic"
    lit = load_config(preset="myopic-literal")
    assert lit.eye == hyp.eye and lit.scene == hyp.scene
    con = load_config(preset="myopic-consistent")
    assert con.eye.focus_distance == 0.25 and con.scene.display_distance == 0.38
    inf = load_config(preset="infocus")
    assert inf.eye.focus_distance == inf.scene.display_distance == 0.38
    with pytest.raises(ConfigError) as err:
        load_config(preset="presbyopic")
    assert err.value.path == "preset"


def test_later_sources_win(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('seed = 3\n[eye]\nfocus_distance = 0.5\n[render]\nsamples = 32\n')
    c = load_config(path, "infocus", ["render.samples=16", "array.type=lenslet"], seed=9,
                    output=str(tmp_path / "o"))
    assert c.eye.focus_distance == 0.5  # file over preset
    assert c.scene.display_distance == 0.38  # preset over default
    assert c.render.samples == 16  # override over file
    assert c.array.type == "lenslet"
    assert c.seed == 9  # explicit argument over file
    assert c.output == str(tmp_path / "o")


@pytest.mark.parametrize("item, expected", [
    ("eye.focus_distance=0.5", {"eye": {"focus_distance": 0.5}}),
    ("scene.retina_resolution=[16, 16]", {"scene": {"retina_resolution": [16, 16]}}),
    ("render.aligned_strata=false", {"render": {"aligned_strata": False}}),
    ("array.type=lenslet", {"array": {"type": "lenslet"}}),
    ("source=pattern:chart", {"source": "pattern:chart"}),
    ("prefilter.shifts=[[0, 0], [1, 0]]", {"prefilter": {"shifts": [[0, 0], [1, 0]]}}),
])
def test_parse_override(item, expected):
    assert parse_override(item) == expected


@pytest.mark.parametrize("item", ["eye.focus_distance", "=3"])
def test_malformed_override(item):
    with pytest.raises(ConfigError):
        parse_override(item)


@pytest.mark.parametrize("data, path", [
    ({"eye": {"foo": 1}}, "eye.foo"),
    ({"bogus": {}}, "bogus"),
    ({"eye": {"focus_distance": "far"}}, "eye.focus_distance"),
    ({"eye": {"focus_distance": -1.0}}, "eye"),
    ({"eye": 3}, "eye"),
    ({"render": {"samples": 2.5}}, "render.samples"),
    ({"render": {"aligned_strata": 1}}, "render.aligned_strata"),
    ({"seed": -1}, "seed"),
    ({"source": ""}, "source"),
    ({"scene": {"retina_resolution": [0, 4]}}, "scene.retina_resolution"),
    ({"scene": {"display_distance": 0.0}}, "scene.display_distance"),
    ({"array": {"type": "zone-plate"}}, "array.type"),
    ({"panel": {"ppi": 300.0}}, "pinhole.pitch"),
    ({"lenslet": {"pitch": 1e-3}}, "lenslet.pitch"),
    ({"prefilter": {"model": "exact"}}, "prefilter.model"),
    ({"prefilter": {"aperture_samples": [0, 3]}}, "prefilter.aperture_samples"),
    ({"prefilter": {"shifts": [[1, 0]]}}, "prefilter.shifts"),
    ({"panel": {"resolution": [10, 10]}}, "panel.resolution"),
])
def test_invalid_fields_are_named(data, path):
    with pytest.raises(ConfigError) as err:
        parse_config(data)
    assert err.value.path.startswith(path)
    assert str(err.value).startswith(err.value.path)


def test_misalignment_reports_both_quantities():
    with pytest.raises(ConfigError) as err:
        parse_config({"panel": {"ppi": 300.0}})
    msg = str(err.value)
    assert "300" in msg and ("0.0005" in msg or "500" in msg)


def test_broken_toml_is_a_config_error(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[eye\nfocus = ")
    with pytest.raises(ConfigError):
        load_config(path)


def test_missing_file_is_an_os_error(tmp_path):
    with pytest.raises(OSError):
        load_config(tmp_path / "absent.toml")


def test_domain_objects_follow_overrides():
    c = load_config(overrides=["render.samples=128", "render.threads=2", "solver.max_iterations=7",
                               "scene.retina_resolution=[8, 12]"])
    assert c.render_settings().samples == 128 and c.render_settings().threads == 2
    assert c.solver_options().max_iterations == 7
    assert c.retina_resolution() == (8, 12)
    assert np.array_equal(c.panel_resolution(), (40, 60))
