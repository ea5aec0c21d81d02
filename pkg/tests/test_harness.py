import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdafem.drivers.base import ConfigError
from cdafem.drivers.problems import AnalyticField
from cdafem.fem import build_space, interpolate_nodal
from cdafem.harness import cli
from cdafem.harness.config import load_config, parse_config, preset_names, resolve_config
from cdafem.harness.experiments import pairwise_report, read_manifest, run_experiment
from cdafem.harness.norms import error_norms
from cdafem.harness.series import (ErrorSeries, NoDecayError, RateTable, convergence_rates,
                                   decay_analysis)
from cdafem.linalg import SolverError
from cdafem.mesh import uniform_rect_mesh

TINY = """
[experiment]
name = "tiny"
problem = "heat"

[mesh]
n = 4

[time]
dt = 0.01
T = 0.2

[cda]
mu = [1.0, inf]
mode = "nodal"
H = 0.25
"""


def test_error_norms_constant_field(p2_square8):
    half = AnalyticField(lambda x, y, t: 0.5 + 0 * x, lambda x, y, t: (0 * x, 0 * x))
    l2, h1 = error_norms(np.zeros(p2_square8.n_dofs), half, p2_square8)
    assert l2 == pytest.approx(0.5, abs=1e-14) and h1 == 0.0


def test_error_norms_discrete_truth(p2_square8):
    u = interpolate_nodal(lambda x, y, t: x, p2_square8)
    l2, h1 = error_norms(np.zeros_like(u), u, p2_square8)
    assert l2 == pytest.approx(1 / math.sqrt(3), abs=1e-13) and h1 == pytest.approx(1.0, abs=1e-13)
    with pytest.raises(ValueError):
        error_norms(u, np.zeros(3), p2_square8)


def test_analytic_error_vanishes_on_space_members(p2_square8):
    f = AnalyticField(lambda x, y, t: x * y + y ** 2, lambda x, y, t: (y, x + 2 * y))
    l2, h1 = error_norms(interpolate_nodal(f.value, p2_square8), f, p2_square8)
    assert l2 < 1e-14 and h1 < 1e-13


@pytest.mark.parametrize("rate", [3.245, 1.901, 0.0])
def test_rate_examples(rate):
    t = convergence_rates([(1 / 8, 1e-3), (1 / 16, 1e-3 * 2 ** -rate)])
    assert math.isnan(t.rates[0]) and t.rates[1] == pytest.approx(rate, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(c=st.floats(1e-6, 1e6), rates=st.lists(st.floats(0.5, 4.0), min_size=1, max_size=4))
def test_rates_scale_invariant(c, rates):
    res = [2.0 ** -k for k in range(len(rates) + 1)]
    err = [1.0]
    for r in rates:
        err.append(err[-1] * 2.0 ** -r)
    a = convergence_rates(zip(res, err))
    b = convergence_rates(zip(res, [c * e for e in err]))
    np.testing.assert_allclose(a.rates[1:], rates, atol=1e-9)
    np.testing.assert_allclose(b.rates[1:], a.rates[1:], rtol=0, atol=1e-14)


@pytest.mark.parametrize("rows", [[(0.1, 1.0)], [(0.1, 1.0), (0.2, 0.5)], [(0.1, 1.0), (0.05, 0.0)]])
def test_rate_input_errors(rows):
    with pytest.raises(ValueError):
        convergence_rates(rows)


def synthetic(lam, plateau, T=3.0, n=600):
    s = ErrorSeries()
    for k in range(1, n + 1):
        t = k * T / n
        s.append(k, t, math.exp(-lam * t) + plateau, float("nan"))
    return s


@settings(max_examples=20, deadline=None)
@given(lam=st.floats(10.0, 50.0), plateau=st.floats(1e-6, 1e-3))
def test_decay_fit_recovers_synthetic_rate(lam, plateau):
    fit = decay_analysis(synthetic(lam, plateau))
    assert fit.rate == pytest.approx(lam, rel=0.05)
    assert fit.plateau == pytest.approx(plateau, rel=0.2)


def test_constant_series_does_not_decay():
    s = ErrorSeries()
    for k in range(30):
        s.append(k, 0.1 * (k + 1), 1.0, 1.0)
    with pytest.raises(NoDecayError):
        decay_analysis(s)
    with pytest.raises(ValueError):
        decay_analysis(synthetic(10.0, 1e-3, n=10))


def test_series_validation_and_csv(tmp_path):
    s = synthetic(10.0, 1e-4, n=25)
    s.to_csv(tmp_path / "s.csv")
    back = ErrorSeries.from_csv(tmp_path / "s.csv")
    assert back.steps == s.steps and back.l2 == s.l2 and back.times == s.times
    assert all(math.isnan(v) for v in back.h1)
    with pytest.raises(ValueError):
        s.append(99, 0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        s.append(99, 10.0, -1.0, 1.0)
    t = convergence_rates([(0.1, 1e-2), (0.05, 1e-3)])
    t.to_csv(tmp_path / "r.csv")
    back = RateTable.from_csv(tmp_path / "r.csv")
    assert back.errors == t.errors and back.rates[1] == t.rates[1] and math.isnan(back.rates[0])


def test_pairwise_report():
    a, b = ErrorSeries(), ErrorSeries()
    for k in range(4):
        a.append(k, k + 1.0, 1.0, 0.0)
        b.append(k, k + 1.0, 1.0 + 0.1 * k, 0.0)
    (row,) = pairwise_report({1.0: a, 2.0: b})
    assert row[:2] == (1.0, 2.0)
    assert row[2] == pytest.approx(0.3 / 1.3) and row[3] == pytest.approx(0.3 / 1.3)


@pytest.mark.parametrize("raw,key", [
    ({}, "experiment.problem"),
    ({"experiment": {"problem": "wave"}}, "experiment.problem"),
    ({"experiment": {"problem": "heat"}, "mesh": {"n": 8.5}}, "mesh.n"),
    ({"experiment": {"problem": "heat"}, "mesh": {"m": 8}}, "mesh.m"),
    ({"experiment": {"problem": "heat"}, "cda": {"mu": []}}, "cda.mu"),
    ({"experiment": {"problem": "heat"}, "cda": {"mu": 1.0, "mode": "direct"}}, "cda.mode"),
    ({"experiment": {"problem": "heat"}, "time": {"dt": 0.3, "T": 1.0}}, "time.T"),
    ({"experiment": {"problem": "heat"}, "mesh": {"n": 8}, "cda": {"H": 0.3, "mu": 1.0}}, "cda.H"),
    ({"experiment": {"problem": "nse"}, "physics": {"nu": 1.0, "reynolds": 100}}, "physics.reynolds"),
    ({"bogus": {}}, "bogus"),
])
def test_config_errors_name_key(raw, key):
    with pytest.raises(ConfigError, match=f"^{key}:"):
        parse_config(raw)


def test_invalid_toml(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("[experiment\n")
    with pytest.raises(ConfigError, match="not valid TOML"):
        load_config(p)


@pytest.mark.parametrize("name", preset_names())
def test_presets_parse(name):
    exp = resolve_config(name)
    assert exp.name == name
    assert len(list(exp.runs())) >= 1


def test_sweep_order_and_values():
    exp = resolve_config("spatial_rates")
    assert [c.n for c in exp.runs()] == [32, 64, 128]
    assert all(math.isinf(c.mu) for c in exp.runs())


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("tiny")
    (d / "tiny.toml").write_text(TINY)
    return d, run_experiment(d / "tiny.toml", d / "out")


def test_run_experiment_writes_manifest(tiny_run):
    d, result = tiny_run
    man = read_manifest(d / "out")
    assert man["name"] == "tiny" and man["problem"] == "heat"
    assert set(man["files"]) >= {"series_mu1.csv", "series_muinf.csv", "mu_report.csv", "decay.csv"}
    assert (d / "out" / "series_mu1.csv").exists()
    assert json.loads((d / "out" / "manifest.json").read_text())["config"]["cda"]["mu"][1] == "inf"
    assert man["config"]["cda"]["mu"][1] == math.inf
    assert result.summary["mu_max_final_rel_diff"] >= 0
    assert len(result.series["mu1"]) == 21


def test_cli_exit_codes(tiny_run, tmp_path, capsys, monkeypatch):
    d, _ = tiny_run
    assert cli.main(["run", str(d / "tiny.toml"), "--out", str(tmp_path / "r"), "--quiet"]) == cli.EXIT_OK
    assert cli.main(["run", "no_such_preset"]) == cli.EXIT_INVALID
    bad = tmp_path / "bad.toml"
    bad.write_text(TINY.replace("H = 0.25", "H = 0.3"))
    assert cli.main(["run", str(bad)]) == cli.EXIT_INVALID
    assert "cda.H" in capsys.readouterr().err
    assert cli.main(["table", str(tmp_path / "nowhere")]) == cli.EXIT_INVALID

    def explode(*a, **k):
        raise SolverError("singular step matrix")

    monkeypatch.setattr(cli, "run_experiment", explode)
    assert cli.main(["run", "spatial_rates"]) == cli.EXIT_NUMERICAL


def test_cli_table_over_dt_sweep(tmp_path, capsys):
    cfg = tmp_path / "dt.toml"
    cfg.write_text(TINY.replace("dt = 0.01", "dt = [0.02, 0.01]").replace("mu = [1.0, inf]", "mu = inf")
                   .replace('mode = "nodal"', 'mode = "direct"'))
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "r"), "--quiet"]) == cli.EXIT_OK
    assert cli.main(["table", str(tmp_path / "r"), "--out", str(tmp_path / "t.csv")]) == cli.EXIT_OK
    t = RateTable.from_csv(tmp_path / "t.csv")
    assert t.resolutions == (0.02, 0.01) and not math.isnan(t.rates[1])


def test_check_projection_summary():
    good = {"rates": {"1": {"l2": [2.95, 3.0], "h1": [1.98, 2.0]}}, "spread": {"8": 1.02}}
    assert all(ok for ok, _ in cli.check_projection_summary(good))
    bad = {"rates": {"1": {"l2": [2.5], "h1": [2.0]}}, "spread": {"8": 3.0}}
    assert not any(ok for ok, _ in cli.check_projection_summary(bad))
