import csv
import json
import math

import numpy as np
import pytest

from solflow.experiment import (
    CHECK_ORDER,
    ConfigError,
    Scenario,
    emit_plot_data,
    fit_phase_shifts,
    load_config,
    load_scenario,
    predicted_shifts,
    run,
    scenario_from_mapping,
)
from solflow.synthesis import SynthesisSpec

# two well separated solitons over a long horizon: every check passes quickly
EASY = {"L": 0.2, "T": 20.0, "delta": 0.05, "eps1": 0.1, "eps2": 0.1, "alpha1": 1.6, "exit_grid": 4}


def write(path, text):
    path.write_text(text)
    return path


# -- configuration --------------------------------------------------------------------


def test_load_toml_and_json(tmp_path):
    t = write(tmp_path / "a.toml", 'L = 1\nT = 1\ndelta = 0.01\neps1 = 0.1\neps2 = 0.1\nchecks = ["conditions"]\n')
    j = write(tmp_path / "a.json", json.dumps({"L": 1, "T": 1, "delta": 0.01, "eps1": 0.1, "eps2": 0.1, "checks": ["conditions"]}))
    a, b = load_scenario(t), load_scenario(j)
    assert a.spec == b.spec == SynthesisSpec(1, 1, 0.01, 0.1, 0.1)
    assert a.checks == b.checks == ("conditions",)


def test_checks_are_put_in_dependency_order():
    sc = scenario_from_mapping(dict(EASY, checks=["residual", "conditions", "exit"]))
    assert sc.checks == ("conditions", "exit", "residual")
    assert scenario_from_mapping(EASY).checks == CHECK_ORDER
    assert scenario_from_mapping(dict(EASY, checks="tails, exit")).checks == ("tails", "exit")


def test_tolerance_keys():
    sc = scenario_from_mapping(dict(EASY, tol_oracle_replay=1e-3, tol_flow=1e-9))
    assert sc.tol("oracle-replay") == 1e-3 and sc.tol("flow") == 1e-9
    assert sc.tol("residual") == 1e-5


def test_bad_toml_reports_line(tmp_path):
    p = write(tmp_path / "bad.toml", "L = 1\nT = = 1\n")
    with pytest.raises(ConfigError, match="line 2"):
        load_config(p)


def test_bad_json_reports_line(tmp_path):
    p = write(tmp_path / "bad.json", '{\n "L": 1,\n "T": ,\n}')
    with pytest.raises(ConfigError, match=r"bad.json:3:"):
        load_config(p)


@pytest.mark.parametrize(
    "patch, field",
    [
        ({"colour": "red"}, "colour"),
        ({"delta": "small"}, "delta"),
        ({"delta": True}, "delta"),
        ({"checks": []}, "checks"),
        ({"checks": ["conditions", "vibes"]}, "checks"),
        ({"checks": 3}, "checks"),
        ({"tol_residual": -1.0}, "tol_residual"),
        ({"tol_speed": 1.0}, "tol_speed"),
        ({"velocity": "u"}, "velocity"),
        ({"eps1": 0.6, "T": 1.0}, "eps1"),
        ({"output_dir": 5}, "output_dir"),
    ],
)
def test_config_field_errors(patch, field):
    d = dict(EASY)
    d.update(patch)
    with pytest.raises(ConfigError, match=field):
        scenario_from_mapping(d)


def test_missing_required_field(tmp_path):
    d = {k: v for k, v in EASY.items() if k != "delta"}
    p = write(tmp_path / "m.json", json.dumps(d))
    with pytest.raises(ConfigError, match=r"m.json: delta: missing"):
        load_scenario(p)


def test_unreadable_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.toml")


# -- run ------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def easy_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("easy")
    rep = run(scenario_from_mapping(EASY), out_dir=out)
    return rep, out


def test_easy_run_passes(easy_run):
    rep, out = easy_run
    assert rep.exit_code == 0
    assert [c.name for c in rep.checks] == list(CHECK_ORDER)
    assert all(c.status == "pass" for c in rep.checks)
    d = json.loads((out / "report.json").read_text())
    assert d["passed"] and d["train"]["N"] == 2 and d["train"]["alpha1"] == 1.6
    ex = d["checks"]["exit"]["metrics"]
    assert ex["velocity"] == "eta" and set(ex["fields"]) == {"G", "eta", "y"}
    assert ex["fields"]["eta"]["margin"] > 0
    assert set(json.loads((out / "timings.json").read_text())) == set(CHECK_ORDER)


def test_run_is_deterministic(easy_run, tmp_path):
    _, out = easy_run
    run(scenario_from_mapping(EASY), out_dir=tmp_path)
    assert (tmp_path / "report.json").read_bytes() == (out / "report.json").read_bytes()


def test_plot_data_from_run(easy_run):
    _, out = easy_run
    for name in ("field.csv", "trajectories.csv", "tail_norms.csv", "peak_tracks.csv", "phase_shifts.json"):
        assert (out / name).exists(), name
    files = sorted((out / "trajectories").glob("particle_*.csv"))
    assert len(files) == EASY["exit_grid"] + 1
    for f in files:
        with open(f) as fh:
            phi = [float(r["phi"]) for r in csv.DictReader(fh)]
        assert np.all(np.diff(phi) >= 0)
    with open(out / "field.csv") as fh:
        assert next(csv.reader(fh)) == ["t", "x", "eta"]


def test_pinned_below_speed_bound(tmp_path):
    d = {"L": 1, "T": 1, "delta": 0.01, "eps1": 0.1, "eps2": 0.1, "alpha1": 1.06}
    rep = run(scenario_from_mapping(d), out_dir=tmp_path)
    assert rep.exit_code == 1
    cond = rep.checks[0]
    assert cond.name == "conditions" and cond.status == "fail"
    assert cond.metrics["speed_margin"] == pytest.approx(0.56**2 - 1 / 0.9)
    assert "speed" in cond.metrics["failed"]
    assert all(c.status == "skipped" for c in rep.checks[1:])


def test_keep_going_runs_later_checks(tmp_path):
    d = dict(EASY, delta=1e-6, checks=["conditions", "residual"])
    rep = run(scenario_from_mapping(d), keep_going=True, out_dir=tmp_path)
    assert rep.exit_code == 1
    assert [c.status for c in rep.checks] == ["fail", "pass"]


def test_implicit_conditions(tmp_path):
    rep = run(scenario_from_mapping(dict(EASY, checks=["residual"])), out_dir=tmp_path)
    assert rep.exit_code == 0 and [c.name for c in rep.checks] == ["residual"]


def test_no_write(tmp_path):
    rep = run(scenario_from_mapping(dict(EASY, checks=["conditions"], output_dir=str(tmp_path / "x"))), write=False)
    assert rep.exit_code == 0 and not (tmp_path / "x").exists()


def test_emit_plot_data_needs_artifacts(tmp_path):
    with pytest.raises(KeyError):
        emit_plot_data({}, tmp_path)


# -- phase shifts --------------------------------------------------------------------


def test_predicted_shifts():
    p = predicted_shifts([2.0, 1.0])
    assert p["slow"] == pytest.approx(math.log(1 / 9), rel=1e-15)
    assert p["slow"] == pytest.approx(-2.1972, abs=1e-4)
    assert p["fast"] == pytest.approx(math.log(9) / 2, rel=1e-15)
    assert predicted_shifts([1.0, 2.0]) == p


def test_fitted_two_soliton_shifts():
    track = []
    fit = fit_phase_shifts([2.0, 1.0], track=track)
    assert fit["slow"]["shift"] == pytest.approx(-2.1972, abs=1e-3)
    assert fit["slow"]["shift"] == pytest.approx(fit["slow"]["predicted"], abs=1e-9)
    assert fit["fast"]["shift"] == pytest.approx(fit["fast"]["predicted"], abs=1e-9)
    assert len(track) == 20 and {r[0] for r in track} == {"fast", "slow"}


def test_fitted_single_soliton_shift_is_zero():
    fit = fit_phase_shifts([2.0])
    assert abs(fit["s0"]["shift"]) <= 1e-6


@pytest.mark.parametrize("a1, a2", [(3.0, 1.0), (2.5, 2.0)])
def test_fitted_shifts_other_pairs(a1, a2):
    fit = fit_phase_shifts([a1, a2])
    for k in ("fast", "slow"):
        assert fit[k]["shift"] == pytest.approx(fit[k]["predicted"], abs=1e-6)


def test_scenario_guards():
    spec = SynthesisSpec(1, 1, 0.01, 0.1, 0.1)
    with pytest.raises(ConfigError):
        Scenario(spec, ())
    with pytest.raises(ConfigError):
        Scenario(spec, ("conditions",), tolerances={"residual": 0})
