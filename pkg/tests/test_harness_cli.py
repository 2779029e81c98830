import json
import math
import subprocess
import sys

import numpy as np
import pytest

from cpcox import (BootstrapConfig, CovariatePath, Dataset, ExperimentSpec, ProfileFitConfig, ScenarioConfig,
                   km_curves, run_experiment, sample_dataset)
from cpcox import harness
from cpcox.cli import main
from cpcox.errors import NonCategorical, TooManyFailures
from cpcox.harness import dataset_seed, default_methods, load_spec
from cpcox.rng import stream

FIT = ProfileFitConfig((0.5, 1.5))


def _spec(**kw):
    base = dict(sample_sizes=(120, 160), monte_carlo_reps=3, seed=11,
                methods=(BootstrapConfig("classical", 15, fit=FIT),
                         BootstrapConfig("m_out_of_n", 15, 0.8, FIT, interval_rate="m"),
                         BootstrapConfig("smooth", 15, fit=FIT)),
                histogram_bins=10)
    base.update(kw)
    return ExperimentSpec(**base)


@pytest.fixture(scope="module")
def small_run():
    return run_experiment(_spec())


def test_spec_validation_and_roundtrip(tmp_path):
    with pytest.raises(ValueError):
        ExperimentSpec(monte_carlo_reps=0)
    with pytest.raises(ValueError):
        ExperimentSpec(sample_sizes=())
    spec = _spec()
    again = ExperimentSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
    assert again.to_dict() == spec.to_dict()
    (tmp_path / "s.json").write_text(json.dumps({"sample_sizes": [50], "seed": 3}))
    loaded = load_spec(tmp_path / "s.json")
    assert loaded.sample_sizes == (50,) and loaded.seed == 3
    assert len(loaded.methods) == len(default_methods())


def test_default_spec():
    spec = ExperimentSpec()
    assert spec.sample_sizes == (300, 500, 1000) and spec.monte_carlo_reps == 200
    labels = [m.label for m in spec.methods]
    assert labels[0] == "classical" and "smooth_censoring" in labels
    assert {m.interval_form for m in spec.methods} == {"percentile"}


def test_rows_and_files(small_run):
    rows, res = small_run
    assert len(rows) == 2 * 3
    for r in rows:
        assert 0 <= r.coverage <= 1 and r.avg_length >= 0
        assert math.isclose(r.mc_standard_error, math.sqrt(r.coverage * (1 - r.coverage) / r.reps))
    files = res["files"]
    assert files["coverage.csv"].count("\n") == 1 + len(rows)
    assert files["intervals.csv"].count("\n") == 1 + 2 * 3 * 3
    for name in ("mc_deviation.csv", "histograms.csv", "km_level0.csv", "km_level1.csv",
                 "draws/smooth_n120.csv", "draws/m_out_of_n_0.8_n160.csv"):
        assert name in files
    assert res["meta"]["failed_cells"] == []


def test_results_independent_of_workers(small_run):
    _, res = small_run
    _, res2 = run_experiment(_spec(), workers=2)
    assert res["files"] == res2["files"]


def test_failed_cell_is_recorded(monkeypatch):
    real = harness.run_bootstrap

    def picky(data, cfg, **kw):
        if cfg.method == "classical":
            raise TooManyFailures("forced")
        return real(data, cfg, **kw)

    monkeypatch.setattr(harness, "run_bootstrap", picky)
    rows, res = run_experiment(_spec(sample_sizes=(120,), monte_carlo_reps=2))
    assert [r.method for r in rows] == ["m_out_of_n(0.8)", "smooth"]
    assert res["meta"]["failed_cells"] == [{"n": 120, "method": "classical"}]
    assert "too_many_failures" in res["files"]["intervals.csv"]


def test_km_curves():
    d = Dataset([1.0, 2.0, 3.0, 4.0], np.ones(4, bool), [0.0] * 4, 5.0)
    (curve,) = km_curves(d).values()
    np.testing.assert_allclose(curve.surv, [0.75, 0.5, 0.25, 0.0])
    with pytest.raises(NonCategorical):
        km_curves(Dataset([1.0], [1], tau=2.0, paths=[CovariatePath([[0.0], [1.0]], [0.5])]))


def test_km_curves_show_the_lag():
    # strata separate only after the change point
    gaps = []
    for rep in range(30):
        d = sample_dataset(ScenarioConfig.lagged_effect(1000), stream(77, rep))
        c = km_curves(d)
        s0, s1 = c[(0.0,)], c[(1.0,)]
        gaps.append(abs(s0(2.0) - s1(2.0)) - abs(s0(1.0) - s1(1.0)))
    gaps = np.array(gaps)
    assert gaps.mean() > 3 * gaps.std(ddof=1) / np.sqrt(gaps.size)


def test_dataset_seeds_are_distinct():
    a = sample_dataset(ScenarioConfig.lagged_effect(50), dataset_seed(1, 50, 0))
    b = sample_dataset(ScenarioConfig.lagged_effect(50), dataset_seed(1, 50, 1))
    assert not a == b


# -- CLI ----------------------------------------------------------------------------

def _err(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_cli_simulate_fit_bootstrap(tmp_path, capsys):
    assert main(["simulate", "--n", "150", "--seed", "1", "--out", str(tmp_path / "s")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["n"] == 150
    data = str(tmp_path / "s" / "dataset.csv")
    assert main(["fit", data, "--window", "0.5", "1.5", "--out", str(tmp_path / "f")]) == 0
    fit = json.loads((tmp_path / "f" / "fit.json").read_text())
    assert 0.5 <= fit["theta_hat"]["zeta"] <= 1.5
    assert (tmp_path / "f" / "censoring_km_level1.csv").exists()
    capsys.readouterr()
    assert main(["bootstrap", data, "--method", "m_out_of_n", "--m-exponent", "0.8",
                 "--interval-rate", "m", "--interval-form", "percentile", "--replicates", "12", "--threads", "2",
                 "--out", str(tmp_path / "b")]) == 0
    iv = json.loads((tmp_path / "b" / "interval.json").read_text())
    assert iv["lower"] <= iv["upper"] and iv["m"] == math.ceil(150 ** 0.8 - 1e-9)
    man = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert man["args"]["threads"] == 2 and "numpy" in man["versions"]
    assert set(man["outputs"]) == {"draws.csv", "interval.json"}


def test_cli_usage_error(capsys):
    assert main(["bootstrap"]) == 2
    assert _err(capsys)["error"] == "usage"
    assert main(["nonsense", "--out", "x"]) == 2


def test_cli_missing_input(tmp_path, capsys):
    assert main(["fit", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o")]) == 1
    assert _err(capsys)["error"] == "FileNotFoundError"


def test_cli_domain_error(tmp_path, capsys):
    (tmp_path / "d.csv").write_text("# tau=2.0\nobserved_time,event,z1\n1.0,0,0.0\n1.5,0,1.0\n")
    assert main(["fit", str(tmp_path / "d.csv"), "--out", str(tmp_path / "o")]) == 1
    assert _err(capsys)["error"] == "no_events"


def test_replay_detects_changes(tmp_path, capsys):
    assert main(["simulate", "--n", "60", "--out", str(tmp_path / "s")]) == 0
    data = tmp_path / "s" / "dataset.csv"
    assert main(["fit", str(data), "--out", str(tmp_path / "f")]) == 0
    man_path = tmp_path / "f" / "manifest.json"
    man = json.loads(man_path.read_text())
    man["outputs"]["fit.json"] = "0" * 64
    man_path.write_text(json.dumps(man))
    capsys.readouterr()
    assert main(["replay", str(man_path), "--out", str(tmp_path / "r")]) == 1
    assert _err(capsys)["error"] == "replay_mismatch"
    data.write_text(data.read_text() + "\n")
    assert main(["replay", str(man_path), "--out", str(tmp_path / "r2")]) == 1


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "cpcox", "limit-law", "--draws", "20",
                        "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert "median_phi_zeta" in json.loads(r.stdout)
    r = subprocess.run([sys.executable, "-m", "cpcox", "fit", "missing.csv", "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 1 and json.loads(r.stderr)["error"] == "FileNotFoundError"
