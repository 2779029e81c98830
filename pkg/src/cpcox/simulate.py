"""Simulation from the change-point Cox model.

The baseline hazard is piecewise constant, so the conditional cumulative
hazard of a constant covariate ``z`` is piecewise linear and inverts in
closed form.  Censoring is exponential capped at the horizon ``tau``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .rng import as_generator


def _vec(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=float))


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """Data-generating model.

    Parameters
    ----------
    alpha0, beta0 : array_like, shape (p,)
        Log hazard ratios before and after ``zeta0``.
    zeta0 : float
        Change point, inside ``(0, tau)``.
    baseline_rates : array_like, shape (J,)
        Baseline hazard on each piece.
    baseline_breaks : array_like, shape (J-1,)
        Interior breakpoints of the baseline hazard.
    covariate_levels : array_like, shape (k, p)
        Support of the (constant) covariate.
    covariate_probs : array_like, shape (k,)
    censoring_rate : float
        Rate of the exponential censoring time; capped at ``tau``.
    tau : float
    n : int
    """

    alpha0: np.ndarray
    beta0: np.ndarray
    zeta0: float
    baseline_rates: np.ndarray
    baseline_breaks: np.ndarray
    covariate_levels: np.ndarray
    covariate_probs: np.ndarray
    censoring_rate: float
    tau: float
    n: int = 500

    def __post_init__(self):
        a, b = _vec(self.alpha0), _vec(self.beta0)
        rates, breaks = _vec(self.baseline_rates), np.asarray(self.baseline_breaks, dtype=float).ravel()
        levels = np.asarray(self.covariate_levels, dtype=float)
        if levels.ndim == 1:
            levels = levels[:, None]
        probs = _vec(self.covariate_probs)
        tau = float(self.tau)
        if a.shape != b.shape:
            raise ValueError("alpha0 and beta0 must have the same length")
        if levels.shape[1] != a.size:
            raise ValueError("covariate levels must have dimension p")
        if probs.size != levels.shape[0] or np.any(probs < 0) or abs(probs.sum() - 1) > 1e-9:
            raise ValueError("covariate probabilities must be nonnegative and sum to 1")
        if rates.size != breaks.size + 1 or np.any(rates <= 0):
            raise ValueError("need one positive baseline rate per piece")
        if breaks.size and (np.any(np.diff(breaks) <= 0) or breaks[0] <= 0 or breaks[-1] >= tau):
            raise ValueError("baseline breaks must be increasing inside (0, tau)")
        if not 0 < self.zeta0 < tau:
            raise ValueError("zeta0 must lie in (0, tau)")
        if self.censoring_rate < 0 or self.n < 1:
            raise ValueError("censoring_rate must be >= 0 and n >= 1")
        for name, val in [("alpha0", a), ("beta0", b), ("baseline_rates", rates),
                          ("baseline_breaks", breaks), ("covariate_levels", levels),
                          ("covariate_probs", probs)]:
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "zeta0", float(self.zeta0))
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "censoring_rate", float(self.censoring_rate))
        object.__setattr__(self, "n", int(self.n))

    @classmethod
    def lagged_effect(cls, n: int = 500) -> "ScenarioConfig":
        """Treatment with no effect until ``t=1`` and log hazard ratio -1.5 afterwards.

        Bernoulli(0.5) treatment indicator, baseline hazard 0.5, censoring
        rate 0.1 capped at ``tau=4``.
        """
        return cls(alpha0=[0.0], beta0=[-1.5], zeta0=1.0, baseline_rates=[0.5],
                   baseline_breaks=[], covariate_levels=[[0.0], [1.0]],
                   covariate_probs=[0.5, 0.5], censoring_rate=0.1, tau=4.0, n=n)

    @property
    def p(self) -> int:
        return self.alpha0.size

    def with_n(self, n: int) -> "ScenarioConfig":
        d = self.to_dict()
        d["n"] = n
        return ScenarioConfig.from_dict(d)

    def to_dict(self) -> dict:
        return {"alpha0": self.alpha0.tolist(), "beta0": self.beta0.tolist(),
                "zeta0": self.zeta0, "baseline_rates": self.baseline_rates.tolist(),
                "baseline_breaks": self.baseline_breaks.tolist(),
                "covariate_levels": self.covariate_levels.tolist(),
                "covariate_probs": self.covariate_probs.tolist(),
                "censoring_rate": self.censoring_rate, "tau": self.tau, "n": self.n}

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        return cls(**d)

    # -- hazard pieces -------------------------------------------------------

    def _knots(self) -> np.ndarray:
        return np.unique(np.concatenate([[0.0, self.zeta0, self.tau], self.baseline_breaks]))

    def _piece_rates(self, z) -> tuple[np.ndarray, np.ndarray]:
        """Knots and per-piece hazard rates for each row of ``z``: (J+1,), (m, J)."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        knots = self._knots()
        mid = 0.5 * (knots[:-1] + knots[1:])
        base = self.baseline_rates[np.searchsorted(self.baseline_breaks, mid)]
        lin = np.where(mid[None, :] <= self.zeta0, (z @ self.alpha0)[:, None],
                       (z @ self.beta0)[:, None])
        return knots, base[None, :] * np.exp(lin)


def cumulative_hazard(cfg: ScenarioConfig, t, z) -> np.ndarray:
    """``Lambda(t | z)`` for constant covariate rows ``z``; shape ``(m, len(t))``."""
    t = np.clip(np.atleast_1d(np.asarray(t, dtype=float)), 0.0, cfg.tau)
    knots, rates = cfg._piece_rates(z)
    cum = np.concatenate([np.zeros((rates.shape[0], 1)),
                          np.cumsum(rates * np.diff(knots), axis=1)], axis=1)
    j = np.clip(np.searchsorted(knots, t, side="right") - 1, 0, rates.shape[1] - 1)
    return cum[:, j] + rates[:, j] * (t - knots[j])


def survival_function(cfg: ScenarioConfig, t, z) -> np.ndarray:
    return np.exp(-cumulative_hazard(cfg, t, z))


def censoring_survival(cfg: ScenarioConfig, t) -> np.ndarray:
    """``P(C >= t)`` for ``C = min(Exp(rate), tau)``."""
    t = np.asarray(t, dtype=float)
    return np.where(t <= cfg.tau, np.exp(-cfg.censoring_rate * t), 0.0)


def at_risk_probability(cfg: ScenarioConfig, t, z) -> np.ndarray:
    """``P(T~ >= t | z)``; ``T`` is continuous so ``P(T >= t) = S(t)``."""
    return survival_function(cfg, t, z) * censoring_survival(cfg, t)


def _invert(cfg: ScenarioConfig, z, target) -> np.ndarray:
    """Solve ``Lambda(t | z_i) = target_i``; ``inf`` beyond the horizon."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    target = np.asarray(target, dtype=float)
    knots, rates = cfg._piece_rates(z)
    cum = np.concatenate([np.zeros((rates.shape[0], 1)),
                          np.cumsum(rates * np.diff(knots), axis=1)], axis=1)
    J = rates.shape[1]
    rows = np.arange(z.shape[0])
    # number of knots with cum <= target, per row
    j = (cum <= target[:, None]).sum(axis=1) - 1
    j = np.clip(j, 0, J - 1)
    t = knots[j] + (target - cum[rows, j]) / rates[rows, j]
    return np.where(target > cum[:, -1], np.inf, np.minimum(t, cfg.tau))


def sample_survival_time(cfg: ScenarioConfig, z, u) -> np.ndarray | float:
    """Inverse-transform draw of ``T`` given constant covariate ``z``.

    Returns the root of ``Lambda(t | z) = -log(1 - u)``, or ``inf`` when the
    subject survives past ``tau``.  ``z`` may be one vector (``u`` scalar or
    array) or an ``(m, p)`` matrix matched with ``u`` of length ``m``.
    """
    u = np.asarray(u, dtype=float)
    z = np.atleast_2d(np.asarray(z, dtype=float))
    target = -np.log1p(-u)
    if z.shape[0] == 1 and u.ndim:
        z = np.broadcast_to(z, (u.size, z.shape[1]))
    out = _invert(cfg, z, np.atleast_1d(target))
    return float(out[0]) if u.ndim == 0 else out


@dataclass(frozen=True)
class LatentSample:
    level: np.ndarray      # index into covariate_levels
    z: np.ndarray
    T: np.ndarray          # inf past the horizon
    C: np.ndarray


def sample_latent(cfg: ScenarioConfig, seed) -> LatentSample:
    """Covariates, latent failure and censoring times before masking."""
    rng = as_generator(seed)
    n = cfg.n
    level = rng.choice(cfg.covariate_levels.shape[0], size=n, p=cfg.covariate_probs)
    z = cfg.covariate_levels[level]
    T = _invert(cfg, z, rng.standard_exponential(n))
    if cfg.censoring_rate > 0:
        C = np.minimum(rng.exponential(1.0 / cfg.censoring_rate, n), cfg.tau)
    else:
        C = np.full(n, cfg.tau)
    return LatentSample(level, z, T, C)


def sample_dataset(cfg: ScenarioConfig, seed) -> Dataset:
    """``n`` independent subjects observed as ``(min(T, C), T <= C, z)``."""
    lat = sample_latent(cfg, seed)
    event = lat.T <= lat.C
    return Dataset(np.where(event, lat.T, lat.C), event, lat.z, cfg.tau)
