import os

import numpy as np
import pytest
import yaml

from l96rbm.errors import AlignmentError, ConfigError, DivergenceError
from l96rbm.harness import (
    ExperimentConfig,
    compare,
    compare_dirs,
    config_from_dict,
    dt_sweep,
    fit_slope,
    load_config,
    parse_override,
    run_experiment,
    truth_series,
)
from l96rbm.statistics import StatisticsSeries


@pytest.fixture(autouse=True)
def cache(tmp_path, monkeypatch):
    monkeypatch.setenv("L96RBM_CACHE", str(tmp_path / "cache"))


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


SMALL = dict(J=8, M=2, dt=1e-3, T=1e-3, record_every=1)


def test_defaults_resolve_per_system():
    one = config_from_dict({})
    assert (one.J, one.L, one.F, one.t_avg_start) == (40, 1, 8.0, 5.0)
    two = config_from_dict({"system": "two-layer"})
    assert (two.J, two.L, two.F, two.q) == (8, 32, 20.0, 16)


def test_load_config_examples(tmp_path):
    cfg = load_config(write(tmp_path, "method: rbm\np: 10\neps: inf\n"), {"seed": 4})
    assert cfg.method == "rbm" and cfg.p == 10 and np.isinf(cfg.eps) and cfg.seed == 4
    assert cfg.to_dict()["eps"] == "inf"


@pytest.mark.parametrize("text, match", [
    ("bogus: 1\n", "unknown keys"),
    ("system: three-layer\n", "system"),
    ("method: rbm\np: 1\n", "batch size"),
    ("method: rbm\np: 41\n", "batch size"),
    ("method: rbm-reduced\n", "two-layer"),
    ("system: two-layer\nmethod: rbm-reduced\nq: 16\nM1: 500\n", "not an integer"),
    ("eps: 0\nmethod: closure\n", "eps"),
    ("eps: soon\n", "eps"),
    ("J: 7\n", "even"),
    ("dt: soon\n", "dt must be a number"),
    ("M: 1\n", "M >= 2"),
    ("- 1\n- 2\n", "mapping"),
])
def test_config_errors(tmp_path, text, match):
    with pytest.raises(ConfigError, match=match):
        load_config(write(tmp_path, text))


def test_yaml_error_reports_line(tmp_path):
    with pytest.raises(ConfigError, match=r"cfg.yaml:2"):
        load_config(write(tmp_path, "J: 8\nF: 1: 2\n"))


def test_exponent_literals_are_numbers(tmp_path):
    cfg = load_config(write(tmp_path, "dt: 1e-3\nT: 1e1\n"))
    assert cfg.dt == 1e-3 and cfg.T == 10.0


def test_parse_override():
    assert parse_override("dt=1e-3") == ("dt", 1e-3)
    assert parse_override("method=rbm") == ("method", "rbm")
    assert parse_override("p=5") == ("p", 5)
    with pytest.raises(ConfigError):
        parse_override("dt")


def test_config_hash_ignores_seed_and_out():
    a = config_from_dict({"seed": 1, "out": "x"})
    b = config_from_dict({"seed": 2, "out": "y"})
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != config_from_dict({"F": 6}).config_hash()


def test_tiny_run_writes_two_rows(tmp_path):
    out = tmp_path / "run"
    cfg = config_from_dict(dict(SMALL, out=str(out)))
    series, manifest = run_experiment(cfg)
    assert series.times == [0.0, 0.001]
    assert sorted(os.listdir(out)) == ["energy.csv", "manifest.yaml", "means.csv", "spectra.csv"]
    with open(out / "means.csv") as fh:
        assert len(fh.read().strip().splitlines()) == 4
    m = yaml.safe_load((out / "manifest.yaml").read_text())
    assert m["status"] == "ok" and m["config_hash"] == cfg.config_hash() and m["seed"] == 0


def test_runs_are_byte_deterministic(tmp_path):
    base = dict(J=8, method="rbm", p=3, M1=6, dt=1e-3, T=0.01, record_every=2, samples=["u0"], sample_from=0.0)
    for name in ("a", "b"):
        run_experiment(config_from_dict(dict(base, out=str(tmp_path / name))))
    for f in ("means.csv", "spectra.csv", "energy.csv", "hist_u0.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_compare_self_and_offset(tmp_path):
    cfg = config_from_dict(dict(J=8, M=10, dt=1e-3, T=0.005, record_every=1, samples=["u0"], sample_from=0.0))
    s, _ = run_experiment(cfg, out=str(tmp_path / "a"))
    run_experiment(cfg, out=str(tmp_path / "b"))
    rep = compare_dirs(tmp_path / "a", tmp_path / "b")
    assert rep["variance_error"] == 0.0 and rep["mean_error"] == 0.0 and rep["tv_distance"]["u0"] == 0.0
    shifted = StatisticsSeries()
    for t, u, r, e in zip(s.times, s.ubar, s.r, s.energy):
        shifted.append(t, u + 0.5, r, e)
    assert compare(shifted, s)["mean_error"] == pytest.approx(0.25)


def test_compare_requires_shared_times():
    a, b = StatisticsSeries(), StatisticsSeries()
    a.append(0.0, 0, np.zeros(3), 0)
    b.append(1.0, 0, np.zeros(3), 0)
    with pytest.raises(AlignmentError):
        compare(a, b)


def test_divergence_writes_partial_output(tmp_path):
    out = tmp_path / "div"
    cfg = config_from_dict(dict(J=8, method="closure", eps="inf", M1=4, F=8.0, u_std=40.0, dt=0.05, T=20.0,
                                record_every=1, out=str(out)))
    with pytest.raises(DivergenceError):
        run_experiment(cfg)
    m = yaml.safe_load((out / "manifest.yaml").read_text())
    assert m["status"] == "diverged" and m["failure"]["time"] > 0


def test_truth_series_is_cached(tmp_path):
    cfg = config_from_dict(dict(J=8, method="rbm", p=3, M1=4, truth_M=5, dt=1e-3, T=0.002, record_every=1))
    a = truth_series(cfg)
    assert len(os.listdir(os.environ["L96RBM_CACHE"])) == 1
    b = truth_series(cfg.replace(p=4, M1=8))
    assert a.r[-1].tolist() == b.r[-1].tolist()
    assert len(os.listdir(os.environ["L96RBM_CACHE"])) == 1


def test_fit_slope_synthetic():
    dts = np.array([4e-3, 2e-3, 1e-3, 5e-4])
    slope, rng = fit_slope(dts, 3.0 * dts)
    assert slope == pytest.approx(1.0) and rng == (0, 3)
    slope, rng = fit_slope(dts, 3.0 * dts + 3.0 * 3e-3)
    assert rng[1] < 3


def test_dt_sweep_validation():
    base = config_from_dict(dict(J=8, method="rbm", p=3, M1=4))
    with pytest.raises(ConfigError, match="at least 3"):
        dt_sweep(base, [1e-3, 5e-4])
    with pytest.raises(ConfigError, match="descending"):
        dt_sweep(base, [1e-3, 2e-3, 5e-4])
    with pytest.raises(ConfigError, match="multiple"):
        dt_sweep(base, [3e-3, 2e-3, 1e-3], record_dt=0.005)


def test_dt_sweep_small(tmp_path):
    base = config_from_dict(dict(J=8, method="rbm", p=3, M1=20, truth_M=200, T=0.2, dt=1e-3, record_every=10))
    table = dt_sweep(base, [4e-3, 2e-3, 1e-3], record_dt=0.04)
    assert table.status == ["ok"] * 3 and all(np.isfinite(table.errors))
    table.write(tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().startswith("# slope=")
