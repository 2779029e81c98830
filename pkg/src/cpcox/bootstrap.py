"""Bootstrap schemes for the change point and percentile intervals.

Six schemes:

``classical``               n draws with replacement from the data
``m_out_of_n``              ceil(n**e) draws with replacement, e < 1
``conditional``             T* from the Breslow-based conditional law, C* from
                            the censoring KM per covariate level
``conditional_censoring``   as ``conditional`` but censored subjects keep their
                            censoring time and failed ones draw C* > T~
``smooth``                  as ``conditional`` with the kernel-smoothed hazard
``smooth_censoring``        as ``conditional_censoring`` with the smoothed hazard

Each replicate is refitted and the statistic ``m (zeta* - zeta_hat)`` is
collected; ``m = n`` except for ``m_out_of_n``.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import CPCoxError, EmptyDraws, FitFailed, TooManyFailures
from .estimators import FittedModel, _draw_censoring
from .likelihood import FitResult, ProfileFitConfig, fit_mple
from .rng import as_generator, stream

METHODS = ("classical", "m_out_of_n", "conditional", "conditional_censoring",
           "smooth", "smooth_censoring")
INTERVAL_FORMS = ("basic", "percentile")
MODEL_BASED = {"conditional": (False, False), "conditional_censoring": (False, True),
               "smooth": (True, False), "smooth_censoring": (True, True)}


def method_index(method: str) -> int:
    return METHODS.index(method)


def _seed_key(seed) -> tuple[int, ...]:
    if isinstance(seed, (tuple, list)):
        return tuple(int(s) for s in seed)
    return (int(seed),)


@dataclass(frozen=True)
class BootstrapConfig:
    """One bootstrap run.

    ``seed`` is an int or a tuple of ints (root seed followed by keys);
    replicate ``b`` draws from the stream keyed by ``(*seed, b)``.
    """

    method: str = "smooth"
    replicates: int = 500
    m_exponent: float = 1.0
    fit: ProfileFitConfig = field(default_factory=ProfileFitConfig)
    seed: int | tuple[int, ...] = 0
    confidence_level: float = 0.95
    failure_cap: float = 0.05
    interval_rate: str = "n"
    interval_form: str = "basic"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.replicates < 0:
            raise ValueError("replicates must be >= 0")
        if self.method == "m_out_of_n":
            if not 0 < self.m_exponent < 1:
                raise ValueError("m_out_of_n needs 0 < m_exponent < 1")
        elif self.m_exponent != 1.0:
            raise ValueError(f"{self.method} resamples n subjects; m_exponent must be 1")
        if not 0 < self.confidence_level < 1:
            raise ValueError("confidence_level must be in (0, 1)")
        if self.interval_rate not in ("n", "m"):
            raise ValueError("interval_rate must be 'n' or 'm'")
        if self.interval_form not in INTERVAL_FORMS:
            raise ValueError(f"interval_form must be one of {INTERVAL_FORMS}")
        object.__setattr__(self, "seed", _seed_key(self.seed))

    @property
    def label(self) -> str:
        if self.method == "m_out_of_n":
            return f"m_out_of_n({self.m_exponent:g})"
        return self.method

    def m(self, n: int) -> int:
        if self.method != "m_out_of_n":
            return n
        # guard against n**e landing a hair above an integer
        return int(math.ceil(n ** self.m_exponent - 1e-9))

    def interval_divisor(self, n: int) -> int:
        """Rate used to turn draw quantiles into an interval: ``n`` or ``m``."""
        return n if self.interval_rate == "n" else self.m(n)

    def to_dict(self) -> dict:
        return {"method": self.method, "replicates": self.replicates,
                "m_exponent": self.m_exponent, "fit": self.fit.to_dict(),
                "seed": list(self.seed), "confidence_level": self.confidence_level,
                "failure_cap": self.failure_cap, "interval_rate": self.interval_rate,
                "interval_form": self.interval_form}

    @classmethod
    def from_dict(cls, d: dict) -> "BootstrapConfig":
        d = dict(d)
        if "fit" in d:
            d["fit"] = ProfileFitConfig.from_dict(d["fit"])
        if "seed" in d:
            d["seed"] = _seed_key(d["seed"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class BootstrapDraws:
    """Scaled bootstrap deviations.

    ``scaled_zeta`` is sorted ascending; row ``i`` of ``scaled_alpha``,
    ``scaled_beta`` and ``replicate`` belongs to the same replicate.
    """

    scaled_zeta: np.ndarray
    scaled_alpha: np.ndarray
    scaled_beta: np.ndarray
    replicate: np.ndarray
    failures: int
    m: int
    n: int
    zeta_hat: float
    method: str

    def __len__(self) -> int:
        return self.scaled_zeta.size

    def to_csv(self, path=None) -> str:
        p = self.scaled_alpha.shape[1] if self.scaled_alpha.ndim == 2 else 0
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["replicate", "scaled_zeta", *[f"scaled_alpha{k + 1}" for k in range(p)],
                    *[f"scaled_beta{k + 1}" for k in range(p)]])
        for b, z, a, bb in zip(self.replicate, self.scaled_zeta, self.scaled_alpha, self.scaled_beta):
            w.writerow([int(b), repr(float(z)), *map(repr, map(float, a)), *map(repr, map(float, bb))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


@dataclass(frozen=True)
class ConfidenceInterval:
    lower: float
    upper: float
    level: float
    method: str

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def __contains__(self, x) -> bool:
        return self.lower <= x <= self.upper


# -- resampling -----------------------------------------------------------------

def resample_classical(data: Dataset, m: int, rng) -> Dataset:
    """``m`` subjects drawn with replacement."""
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = as_generator(rng)
    return data.take(rng.integers(0, data.n, size=m))


def resample_conditional(model: FittedModel, rng, condition_on_censoring: bool,
                         smooth: bool) -> Dataset:
    """Keep every subject's covariate and redraw its failure and censoring time.

    ``T*`` comes from the Breslow-based (``smooth=False``) or smoothed
    conditional law.  ``C*`` comes from the censoring Kaplan-Meier of the
    subject's covariate level; with ``condition_on_censoring`` a censored
    subject keeps its own censoring time and a failed one draws ``C*``
    conditioned on exceeding its failure time.
    """
    data = model.data
    if model.censoring is None:
        raise CPCoxError("model has no censoring estimate (covariates not categorical)")
    if smooth and model.smooth_hazard is None:
        raise CPCoxError("model has no smoothed hazard")
    rng = as_generator(rng)
    n = data.n
    E = rng.standard_exponential(n)
    U = rng.random(n)
    V, ids = data.levels
    samplers = model.level_samplers(smooth)
    T = np.empty(n)
    C = np.empty(n)
    for s in range(V.shape[0]):
        rows = np.flatnonzero(ids == s)
        if rows.size == 0:
            continue
        T[rows] = samplers[s].invert(E[rows])
        curve = model.censoring.curves[model.censoring.stratum(V[s])]
        lower = np.full(rows.size, -np.inf)
        if condition_on_censoring:
            lower = np.where(data.event[rows], data.time[rows], -np.inf)
        C[rows] = _draw_censoring(curve, data.tau, lower, U[rows])
    if condition_on_censoring:
        cens = ~data.event
        C[cens] = data.time[cens]
    event = T <= C
    return Dataset(np.where(event, T, C), event, data.z, data.tau, levels=(V, ids))


# -- running ----------------------------------------------------------------------

def _replicate(data: Dataset, model: FittedModel | None, cfg: BootstrapConfig, b: int):
    rng = as_generator(stream(*cfg.seed, b))
    if cfg.method in MODEL_BASED:
        smooth, cond = MODEL_BASED[cfg.method]
        rep = resample_conditional(model, rng, cond, smooth)
    else:
        rep = resample_classical(data, cfg.m(data.n), rng)
    try:
        fit = fit_mple(rep, cfg.fit)
    except CPCoxError:
        return None
    if not fit.converged:
        return None
    return fit.theta_hat.zeta, fit.theta_hat.alpha, fit.theta_hat.beta


def _run_chunk(args):
    data, model, cfg, idx = args
    return [(b, _replicate(data, model, cfg, b)) for b in idx]


def run_bootstrap(data: Dataset, cfg: BootstrapConfig, *, base: FitResult | None = None,
                  model: FittedModel | None = None, workers: int = 1) -> BootstrapDraws:
    """Bootstrap distribution of ``m (zeta* - zeta_hat)``.

    Results depend only on ``(data, cfg)``, not on ``workers``.

    Raises
    ------
    FitFailed
        The fit to ``data`` did not converge.
    TooManyFailures
        More than ``failure_cap * replicates`` refits failed.
    """
    if model is not None:
        base = model.fit
    if base is None:
        base = fit_mple(data, cfg.fit)
    if not base.converged:
        raise FitFailed("fit to the original data did not converge")
    if cfg.method in MODEL_BASED and model is None:
        model = FittedModel.build(data, base, smooth=MODEL_BASED[cfg.method][0])
    if model is not None and MODEL_BASED.get(cfg.method, (False,))[0] and model.smooth_hazard is None:
        model = FittedModel.build(data, base, smooth=True)
    B = cfg.replicates
    if workers > 1 and B > 1:
        chunks = [range(a, min(B, a + max(1, B // (4 * workers)))) for a in
                  range(0, B, max(1, B // (4 * workers)))]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = [r for part in ex.map(_run_chunk, [(data, model, cfg, c) for c in chunks])
                       for r in part]
    else:
        results = _run_chunk((data, model, cfg, range(B)))
    results.sort(key=lambda r: r[0])
    good = [(b, r) for b, r in results if r is not None]
    failures = B - len(good)
    if failures > cfg.failure_cap * B:
        raise TooManyFailures(f"{failures} of {B} bootstrap refits failed")
    m = cfg.m(data.n)
    th = base.theta_hat
    p = th.alpha.size
    if good:
        reps = np.array([b for b, _ in good])
        zeta = np.array([r[0] for _, r in good])
        alpha = np.array([r[1] for _, r in good])
        beta = np.array([r[2] for _, r in good])
    else:
        reps, zeta = np.empty(0, dtype=int), np.empty(0)
        alpha = beta = np.empty((0, p))
    sz = m * (zeta - th.zeta)
    order = np.argsort(sz, kind="stable")
    root = math.sqrt(m)
    return BootstrapDraws(sz[order], root * (alpha[order] - th.alpha),
                          root * (beta[order] - th.beta), reps[order], failures, m, data.n,
                          th.zeta, cfg.label)


def percentile_ci(draws: BootstrapDraws, zeta_hat: float, n: int, level: float = 0.95,
                  tau: float | None = None, form: str = "basic") -> ConfidenceInterval:
    """Percentile interval for the change point from scaled draws.

    ``q_lo``, ``q_hi`` are the ``(1-level)/2`` and ``(1+level)/2`` quantiles
    of the scaled draws (linear interpolation between order statistics).

    ``form="basic"``       ``[zeta_hat - q_hi/n, zeta_hat - q_lo/n]``
    ``form="percentile"``  ``[zeta_hat + q_lo/n, zeta_hat + q_hi/n]``; with
                           ``n = m`` these are the quantiles of ``zeta*``

    Passing ``n = m`` for m-out-of-n draws gives the wider interval that
    only trusts the ``1/m`` rate.  Clamped to ``[0, tau]`` when ``tau`` is
    given.
    """
    if form not in INTERVAL_FORMS:
        raise ValueError(f"form must be one of {INTERVAL_FORMS}")
    if len(draws) == 0:
        raise EmptyDraws("no bootstrap draws to build an interval from")
    a = (1.0 - level) / 2.0
    q_lo, q_hi = np.quantile(draws.scaled_zeta, [a, 1.0 - a])
    if form == "basic":
        lo, hi = zeta_hat - q_hi / n, zeta_hat - q_lo / n
    else:
        lo, hi = zeta_hat + q_lo / n, zeta_hat + q_hi / n
    if tau is not None:
        lo, hi = min(max(lo, 0.0), tau), min(max(hi, 0.0), tau)
    return ConfidenceInterval(float(lo), float(hi), float(level), draws.method)
