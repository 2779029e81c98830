import dataclasses

import numpy as np
import pytest

from cpcox import (BootstrapConfig, FittedModel, ProfileFitConfig, ScenarioConfig, fit_mple,
                   percentile_ci, resample_classical, resample_conditional, run_bootstrap,
                   sample_dataset)
from cpcox import bootstrap as bmod
from cpcox.bootstrap import BootstrapDraws
from cpcox.errors import EmptyDraws, FitFailed, TooManyFailures
from cpcox.rng import stream

FIT = ProfileFitConfig((0.5, 1.5))


@pytest.fixture(scope="module")
def data():
    return sample_dataset(ScenarioConfig.lagged_effect(250), stream(31))


@pytest.fixture(scope="module")
def model(data):
    return FittedModel.build(data, fit_config=FIT)


def test_config_validation():
    with pytest.raises(ValueError):
        BootstrapConfig("jackknife")
    with pytest.raises(ValueError):
        BootstrapConfig("m_out_of_n", m_exponent=1.0)
    with pytest.raises(ValueError):
        BootstrapConfig("smooth", m_exponent=0.8)
    with pytest.raises(ValueError):
        BootstrapConfig("smooth", confidence_level=1.0)
    with pytest.raises(ValueError):
        BootstrapConfig("smooth", interval_rate="k")


def test_config_m_and_roundtrip():
    c = BootstrapConfig("m_out_of_n", 10, 0.8, FIT, seed=(1, 2), interval_rate="m")
    assert c.m(1000) == int(np.ceil(1000 ** 0.8))
    assert c.m(32) == 16  # 32**0.8 is 16 up to rounding
    assert c.interval_divisor(1000) == c.m(1000)
    assert c.label == "m_out_of_n(0.8)"
    assert BootstrapConfig.from_dict(c.to_dict()) == c
    assert BootstrapConfig("classical", seed=5).seed == (5,)
    assert BootstrapConfig("smooth").m(500) == 500


def test_resample_classical(data):
    r = resample_classical(data, 40, np.random.default_rng(0))
    assert r.n == 40
    assert set(r.time) <= set(data.time)
    with pytest.raises(ValueError):
        resample_classical(data, 0, 0)


@pytest.mark.parametrize("smooth", [False, True])
@pytest.mark.parametrize("cond", [False, True])
def test_resample_conditional(model, smooth, cond):
    data = model.data
    r = resample_conditional(model, np.random.default_rng(1), cond, smooth)
    np.testing.assert_array_equal(r.z, data.z)
    assert np.all((r.time >= 0) & (r.time <= data.tau))
    if not smooth:
        assert set(r.time[r.event]) <= set(model.breslow.jump_times)
    if cond:
        cens = ~data.event
        # a censored subject is censored at its own time unless it fails first
        assert np.all(r.time[cens] <= data.time[cens])
        assert np.all(r.time[cens & ~r.event] == data.time[cens & ~r.event])
        # a failed subject's new censoring time lies beyond its old failure time
        failed = data.event & ~r.event
        assert np.all(r.time[failed] > data.time[failed])


def test_run_bootstrap_deterministic_and_scaled(data):
    cfg = BootstrapConfig("smooth", 24, fit=FIT, seed=(7, 1))
    a = run_bootstrap(data, cfg)
    b = run_bootstrap(data, cfg, workers=2)
    np.testing.assert_array_equal(a.scaled_zeta, b.scaled_zeta)
    np.testing.assert_array_equal(a.replicate, b.replicate)
    assert a.to_csv() == b.to_csv()
    assert np.all(np.diff(a.scaled_zeta) >= 0)
    base = fit_mple(data, FIT)
    # rescaled draws are refits of the documented replicate streams
    rep = int(a.replicate[0])
    model = FittedModel.build(data, base)
    again = fit_mple(resample_conditional(model, np.random.default_rng(stream(7, 1, rep)),
                                          False, True), FIT)
    assert a.scaled_zeta[0] == data.n * (again.theta_hat.zeta - base.theta_hat.zeta)
    assert a.m == data.n and len(a) + a.failures == 24


def test_m_out_of_n_draws_scale_with_m(data):
    cfg = BootstrapConfig("m_out_of_n", 20, 0.8, FIT, seed=3)
    d = run_bootstrap(data, cfg)
    assert d.m == cfg.m(data.n)
    zeta = d.scaled_zeta / d.m + d.zeta_hat
    assert np.all((zeta >= 0.5) & (zeta <= 1.5))


def test_failures(data, monkeypatch):
    base = fit_mple(data, FIT)
    with pytest.raises(FitFailed):
        run_bootstrap(data, BootstrapConfig("classical", 5, fit=FIT),
                      base=dataclasses.replace(base, converged=False))
    real = bmod.fit_mple

    def flaky(d, cfg):
        r = real(d, cfg)
        return dataclasses.replace(r, converged=bool(d.time.sum() % 2 < 1))

    monkeypatch.setattr(bmod, "fit_mple", flaky)
    cfg = BootstrapConfig("classical", 20, fit=FIT, failure_cap=1.0)
    d = run_bootstrap(data, cfg, base=base)
    assert 0 < d.failures < 20 and len(d) == 20 - d.failures
    with pytest.raises(TooManyFailures):
        run_bootstrap(data, dataclasses.replace(cfg, failure_cap=0.0), base=base)


def _draws(values):
    v = np.sort(np.asarray(values, dtype=float))
    return BootstrapDraws(v, np.zeros((v.size, 1)), np.zeros((v.size, 1)), np.arange(v.size),
                          0, 100, 100, 1.0, "x")


def test_percentile_interval():
    d = _draws(np.arange(-50, 51))
    ci = percentile_ci(d, 1.0, 100, 0.9)
    assert np.isclose(ci.lower, 1.0 - 45 / 100) and np.isclose(ci.upper, 1.0 + 45 / 100)
    assert 1.2 in ci and 2.0 not in ci
    assert np.isclose(ci.length, 0.9)
    clamped = percentile_ci(_draws([-400, 400]), 1.0, 100, 0.95, tau=4.0)
    assert clamped.upper == 4.0 and clamped.lower >= 0.0
    # larger divisor shrinks the interval
    assert percentile_ci(d, 1.0, 1000).length < percentile_ci(d, 1.0, 100).length
    with pytest.raises(EmptyDraws):
        percentile_ci(_draws([]), 1.0, 100)


def test_interval_forms():
    d = _draws(np.concatenate([np.full(10, -10.0), np.full(90, 40.0)]))
    basic = percentile_ci(d, 1.0, 100, 0.9)
    pct = percentile_ci(d, 1.0, 100, 0.9, form="percentile")
    # the two forms mirror each other about zeta_hat
    assert np.isclose(basic.lower, 2 * 1.0 - pct.upper)
    assert np.isclose(basic.upper, 2 * 1.0 - pct.lower)
    assert np.isclose(pct.upper, 1.4)
    with pytest.raises(ValueError):
        percentile_ci(d, 1.0, 100, form="bca")
    with pytest.raises(ValueError):
        BootstrapConfig("smooth", interval_form="bca")
