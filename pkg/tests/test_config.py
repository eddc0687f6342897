import numpy as np
import pytest

from poldec.config import (
    OUTPUT_DIR_ENV,
    ConfigError,
    RunConfig,
    apply_grid_overrides,
    config_digest,
    load_config_file,
    output_path,
    parse_config_text,
    parse_value,
)
from poldec.systems import get_model


def test_parse_typed_values():
    text = """
    # grid
    h = 0.005
    points = 15
    samples = 3, 5
    max_step = none
    population_size = 60   # trailing comment
    decoupled_inputs = zero
    """
    vals = parse_config_text(text)
    assert vals == {
        "h": 0.005,
        "points": [15],
        "samples": [3, 5],
        "max_step": None,
        "population_size": 60,
        "decoupled_inputs": "zero",
    }


@pytest.mark.parametrize(
    "key,text",
    [("h", "-1"), ("points", "0"), ("elite_fraction", "1.5"), ("decoupled_inputs", "half"), ("population_size", "x")],
)
def test_bad_values(key, text):
    with pytest.raises(ConfigError):
        parse_value(key, text)


def test_unknown_key():
    with pytest.raises(ConfigError, match="unknown config key"):
        parse_config_text("colour = blue")


def test_missing_equals_reports_line():
    with pytest.raises(ConfigError, match="cfg:2"):
        parse_config_text("h = 0.1\nnonsense\n", "cfg")


def test_load_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("tolerance = 1e-4\n")
    assert load_config_file(p) == {"tolerance": 1e-4}


def test_grid_overrides_broadcast():
    model = get_model("sep-2di")
    grid = apply_grid_overrides(model.grid, {"points": [9], "samples": [3, 5], "h": 0.02})
    assert grid.state_points.tolist() == [9, 9, 9, 9]
    assert grid.input_samples.tolist() == [3, 5]
    assert grid.h == 0.02


def test_grid_override_size_mismatch():
    model = get_model("sep-2di")
    with pytest.raises(ConfigError):
        apply_grid_overrides(model.grid, {"points": [9, 9]})


def test_grid_override_invalid_combination():
    model = get_model("sep-2di")
    with pytest.raises(ConfigError):
        apply_grid_overrides(model.grid, {"h": 1.0, "max_step": 0.1})


def test_grid_override_ignores_other_keys():
    model = get_model("sep-2di")
    assert apply_grid_overrides(model.grid, {"population_size": 5}) is model.grid


def test_run_config_determinism_flag():
    assert RunConfig(workers=1).deterministic
    assert not RunConfig(workers=4).deterministic


def test_digest_stable_and_sensitive():
    a = config_digest({"seed": 1, "values": {"h": 0.1}})
    assert a == config_digest({"values": {"h": 0.1}, "seed": 1})
    assert a != config_digest({"seed": 2, "values": {"h": 0.1}})
    assert len(a) == 16


def test_output_dir_env(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path))
    p = output_path("sub/report.json")
    assert p == tmp_path / "sub" / "report.json"
    assert p.parent.is_dir()
    absolute = tmp_path / "abs.json"
    assert output_path(absolute) == absolute


def test_grid_roundtrip_dict():
    from poldec.grid import GridSpec

    grid = get_model("quadcopter").grid
    again = GridSpec.from_dict(grid.to_dict())
    assert again.to_dict() == grid.to_dict()
    assert np.array_equal(again.state_points, grid.state_points)
