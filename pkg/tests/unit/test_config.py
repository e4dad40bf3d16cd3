import json

import pytest

from blowup.config import ConfigValidationError, load_config, numerics_dict, validate_config


def base_config(**overrides):
    raw = {
        "schema_version": 1,
        "task": "solve_radial",
        "params": {"p": 2, "gamma": 0.6, "N": 3},
        "nonlinearity": {"kind": "power", "exponent": 0.5},
        "potential": {"kind": "radial_profile", "radial": {"family": "constant", "value": 1.0}},
    }
    raw.update(overrides)
    return raw


def errors_of(raw, **kwargs):
    with pytest.raises(ConfigValidationError) as exc:
        validate_config(raw, **kwargs)
    return exc.value.errors


@pytest.mark.config
def test_defaults_are_inserted():
    """Missing numerics fall back to the documented defaults."""
    config = validate_config(base_config())
    assert config.task == "solve_radial"
    assert config.output_dir == "dualblow-out"
    assert config.numerics.tol == 1e-8
    assert config.numerics.n_cells == 4096
    assert config.to_dict()["numerics"]["alphas"] == [1.0, 2.0, 4.0, 8.0]
    assert numerics_dict(config.numerics)["transform_grid"] == [1e-6, 1e8, 57]


@pytest.mark.config
def test_gamma_at_threshold_is_rejected():
    """γ = 1/2 is rejected under params.gamma."""
    errors = errors_of(base_config(params={"p": 2, "gamma": 0.5, "N": 3}))
    assert any(e.startswith("params.gamma") and "γ > 1/2 required" in e for e in errors)


@pytest.mark.config
def test_unknown_keys_are_reported_with_their_path():
    """Unknown keys are reported with their full key path."""
    raw = base_config(extra=True)
    raw["numerics"] = {"speed": 3}
    raw["potential"]["radial"]["shape"] = "flat"
    errors = errors_of(raw)
    assert "extra: unknown key" in errors
    assert "numerics.speed: unknown key" in errors
    assert "potential.radial.shape: unknown key" in errors


@pytest.mark.config
def test_all_problems_are_collected():
    """One pass reports every bad field, not only the first."""
    raw = base_config(task="explode", schema_version=2)
    raw["numerics"] = {"tol": -1.0, "n_cells": True, "crosscheck": "yes"}
    errors = errors_of(raw)
    assert len(errors) >= 5
    assert "numerics.tol: must be a positive number" in errors
    assert "numerics.n_cells: must be an integer ≥ 4" in errors
    assert "numerics.crosscheck: must be true or false" in errors
    assert any(e.startswith("task:") for e in errors)
    assert any(e.startswith("schema_version:") for e in errors)


@pytest.mark.config
def test_non_finite_numbers_are_rejected(tmp_path):
    """NaN is refused both as a value and as a JSON constant."""
    raw = base_config()
    raw["numerics"] = {"tol": float("nan")}
    assert "numerics.tol: must be a positive number" in errors_of(raw)

    path = tmp_path / "nan.json"
    path.write_text('{"schema_version": 1, "numerics": {"tol": NaN}}', encoding="utf-8")
    with pytest.raises(ConfigValidationError, match="not valid JSON"):
        load_config(str(path))


@pytest.mark.config
def test_missing_file():
    """load_config fails if the file doesn't exist."""
    with pytest.raises(ConfigValidationError, match="file not found"):
        load_config("does-not-exist.json")


@pytest.mark.config
def test_missing_sections_and_bad_probe_points():
    """Missing sections and malformed probe points are both reported."""
    raw = base_config()
    del raw["nonlinearity"]
    raw["numerics"] = {"probe_points": [[0.0, 0.0, 1.0]], "transform_grid": [10.0, 1.0, 5]}
    errors = errors_of(raw)
    assert "nonlinearity: required object missing" in errors
    assert "numerics.probe_points: must be a list of [x, y] pairs" in errors
    assert any(e.startswith("numerics.transform_grid") for e in errors)


@pytest.mark.config
def test_tabulated_csv_is_resolved_relative_to_the_config(tmp_path):
    """CSV paths resolve against the config file's directory."""
    (tmp_path / "data").mkdir()
    (tmp_path / "data" / "g.csv").write_text("s,g\n0,0\n1,1\n2,1.5\n4,2\n", encoding="utf-8")
    raw = base_config(nonlinearity={"kind": "tabulated", "csv": "data/g.csv", "delta": 0.4})
    path = tmp_path / "run.json"
    path.write_text(json.dumps(raw), encoding="utf-8")
    config = load_config(str(path))
    assert config.nonlinearity.kind == "tabulated"
    assert config.nonlinearity(2.0) == pytest.approx(1.5)


@pytest.mark.config
def test_broken_csv_reference_is_a_config_error(tmp_path):
    """A missing CSV is a config error, not a crash."""
    raw = base_config(nonlinearity={"kind": "tabulated", "csv": "missing.csv"})
    errors = errors_of(raw, base_dir=str(tmp_path))
    assert any(e.startswith("nonlinearity.csv:") for e in errors)


@pytest.mark.config
def test_potential_dimension_follows_params():
    """The potential takes its dimension from params.N."""
    raw = base_config(params={"p": 2, "gamma": 0.6, "N": 2})
    raw["potential"] = {"kind": "radial_times_angular", "radial": {"family": "constant", "value": 2.0},
                        "amplitude": {"family": "inverse_power", "value": 1.0, "power": 3.0}, "mode": 2}
    config = validate_config(raw)
    assert config.potential.N == 2 and config.potential.mode == 2
    assert not config.potential.is_radial


@pytest.mark.config
def test_empty_config_lists_missing_fields():
    """An empty object reports every required section."""
    errors = errors_of({})
    for section in ("params", "nonlinearity", "potential"):
        assert f"{section}: required object missing" in errors
    assert any(e.startswith("task:") for e in errors)


@pytest.mark.config
def test_non_monotone_tabulated_g_is_rejected():
    """Tabulated g must be nondecreasing."""
    raw = base_config(nonlinearity={"kind": "tabulated", "samples": [[0, 0], [1, 1], [2, 0.5]]})
    assert any("g must be nondecreasing" in e for e in errors_of(raw))


@pytest.mark.config
@pytest.mark.parametrize("N, accepted", [(2, True), (3, False)])
def test_ball_solve_needs_the_plane(N, accepted):
    """ball_solve with N ≠ 2 is rejected before any stage can run."""
    raw = base_config(task="ball_solve", params={"p": 2, "gamma": 0.6, "N": N})
    raw["potential"] = {"kind": "radial_profile", "radial": {"family": "constant", "value": 1.0}}
    if accepted:
        assert validate_config(raw).params.N == 2
    else:
        assert any(e.startswith("params.N:") and "N = 2" in e for e in errors_of(raw))
