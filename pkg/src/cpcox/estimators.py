"""Nonparametric pieces used by the model-based bootstraps.

* Breslow estimate of the cumulative baseline hazard under the fitted
  change-point model, and a Gaussian-kernel smoothed version of its
  derivative.
* Conditional survival samplers built on either one: the step version only
  puts mass on Breslow jump times, the smooth one is continuous.
* Kaplan-Meier estimates of the censoring distribution per covariate level
  and a sampler for it, optionally conditioned to exceed a given time.

Survival draws past the horizon are returned as ``inf``.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid

from ._design import Design, build_design
from .data import ChangePointParams, CovariatePath, Dataset
from .errors import NoEvents, NonCategorical
from .likelihood import FitResult, ProfileFitConfig, fit_mple

log = logging.getLogger(__name__)

SQRT_2PI = np.sqrt(2.0 * np.pi)


def _write_xy(path, x, y, header=("time", "value")) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for a, b in zip(x, y):
        w.writerow([repr(float(a)), repr(float(b))])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


# -- Breslow -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StepCumHazard:
    """Right-continuous step cumulative hazard with jumps at ``jump_times``."""

    jump_times: np.ndarray
    jump_sizes: np.ndarray

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.jump_sizes)

    def __call__(self, t) -> np.ndarray:
        cum = np.concatenate([[0.0], self.cumulative])
        return cum[np.searchsorted(self.jump_times, t, side="right")]

    def total(self) -> float:
        return float(self.cumulative[-1]) if self.jump_sizes.size else 0.0

    def to_csv(self, path) -> None:
        _write_xy(path, self.jump_times, self.cumulative)


def breslow(data: Dataset, theta_hat: ChangePointParams, *,
            design: Design | None = None) -> StepCumHazard:
    """Breslow jumps ``d_k / sum_{j at risk} exp(coef(t_k)'Z_j(t_k))``."""
    if not data.event.any():
        raise NoEvents("Breslow estimate needs at least one failure")
    D = design if design is not None else build_design(data)
    eta = theta_hat.coef_at(D.times) @ D.V.T
    m = eta.max(axis=1, keepdims=True)
    denom = (D.R * np.exp(eta - m)).sum(axis=1) * np.exp(m[:, 0])
    return StepCumHazard(D.times.copy(), D.d / denom)


# -- kernel smoothing ------------------------------------------------------------

def normal_reference_bandwidth(event_times: np.ndarray, tau: float) -> float:
    """``1.06 * sd * n**(-1/5)`` over the failure times.

    With fewer than two failures, or all at the same time, the standard
    deviation of a uniform law on ``[0, tau]`` stands in for ``sd``.
    """
    n = event_times.size
    sd = float(np.std(event_times, ddof=1)) if n >= 2 else 0.0
    if not sd > 0:
        sd = tau / np.sqrt(12.0)
    return 1.06 * sd * max(n, 1) ** (-0.2)


@dataclass(frozen=True, eq=False)
class SmoothHazard:
    """Kernel-smoothed baseline hazard.

    ``grid``/``values`` tabulate the estimate; calling the object evaluates
    the kernel sum exactly at any time.
    """

    grid: np.ndarray
    values: np.ndarray
    bandwidth: float
    centers: np.ndarray
    weights: np.ndarray
    tau: float

    def __call__(self, t) -> np.ndarray:
        return reflected_kernel_sum(np.asarray(t, dtype=float), self.centers, self.weights,
                                    self.bandwidth, self.tau)

    def integral(self) -> float:
        return float(trapezoid(self.values, self.grid))

    def to_csv(self, path) -> None:
        _write_xy(path, self.grid, self.values)


def reflected_kernel_sum(t, centers, weights, h, tau) -> np.ndarray:
    """``sum_k w_k [K_h(t-s_k) + K_h(t+s_k) + K_h(2 tau - t - s_k)]``, Gaussian ``K``."""
    t = np.asarray(t, dtype=float)
    flat = t.reshape(-1, 1)
    out = np.zeros(flat.shape[0])
    # chunk over t to bound memory with many centres
    step = max(1, 2_000_000 // max(centers.size, 1))
    for a in range(0, flat.shape[0], step):
        tt = flat[a:a + step]
        acc = (np.exp(-0.5 * ((tt - centers) / h) ** 2)
               + np.exp(-0.5 * ((tt + centers) / h) ** 2)
               + np.exp(-0.5 * ((2 * tau - tt - centers) / h) ** 2))
        out[a:a + step] = acc @ weights
    return (out / (h * SQRT_2PI)).reshape(t.shape)


def kernel_smooth_hazard(model: "FittedModel | StepCumHazard", grid_step: float | None = None, *,
                         tau: float | None = None, bandwidth: float | None = None,
                         event_times: np.ndarray | None = None) -> SmoothHazard:
    """Smooth the Breslow increments with a boundary-reflected Gaussian kernel.

    Parameters
    ----------
    model : FittedModel or StepCumHazard
        Source of the Breslow jumps.  With a bare ``StepCumHazard`` pass ``tau``.
    grid_step : float, optional
        Tabulation step, ``tau/4096`` by default.
    bandwidth : float, optional
        Overrides the normal-reference rule.
    event_times : ndarray, optional
        Failure times (with multiplicity) for the bandwidth rule; defaults to
        the source data's failures, or the jump times.
    """
    if isinstance(model, FittedModel):
        step_hz, tau = model.breslow, model.data.tau
        if event_times is None:
            event_times = model.data.time[model.data.event]
    else:
        step_hz = model
        if tau is None:
            raise ValueError("tau is required with a bare StepCumHazard")
    if step_hz.jump_times.size == 0:
        raise NoEvents("nothing to smooth")
    if event_times is None:
        event_times = step_hz.jump_times
    h = bandwidth if bandwidth is not None else normal_reference_bandwidth(np.asarray(event_times), tau)
    step = grid_step if grid_step is not None else tau / 4096
    grid = np.linspace(0.0, tau, int(round(tau / step)) + 1)
    values = reflected_kernel_sum(grid, step_hz.jump_times, step_hz.jump_sizes, h, tau)
    return SmoothHazard(grid, values, float(h), step_hz.jump_times, step_hz.jump_sizes, float(tau))


# -- conditional survival samplers -------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConditionalSurvival:
    """Law of ``T`` given a covariate path, tabulated by its cumulative hazard.

    ``kind='step'``: mass only at ``nodes`` (cumulative hazard jumps to
    ``cum[k]`` at ``nodes[k]``).  ``kind='linear'``: cumulative hazard is
    linear between nodes, so the law is continuous.  Probability left over at
    the horizon is returned as ``inf``.
    """

    nodes: np.ndarray
    cum: np.ndarray
    kind: str

    def cumulative_hazard(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.kind == "step":
            c = np.concatenate([[0.0], self.cum])
            return c[np.searchsorted(self.nodes, t, side="right")]
        return np.interp(t, self.nodes, self.cum)

    def cdf(self, t) -> np.ndarray:
        return -np.expm1(-self.cumulative_hazard(t))

    def invert(self, target) -> np.ndarray:
        """First time the cumulative hazard reaches ``target`` (``inf`` if never)."""
        target = np.asarray(target, dtype=float)
        if self.kind == "step":
            k = np.searchsorted(self.cum, target, side="left")
            out = np.full(target.shape, np.inf)
            hit = k < self.cum.size
            out[hit] = self.nodes[k[hit]]
            return out
        # leftmost point of a flat stretch, keeps draws off plateaus
        k = np.searchsorted(self.cum, target, side="left")
        out = np.full(target.shape, np.inf)
        hit = k < self.cum.size
        kh = np.maximum(k[hit], 1)
        c0, c1 = self.cum[kh - 1], self.cum[kh]
        x0, x1 = self.nodes[kh - 1], self.nodes[kh]
        frac = np.where(c1 > c0, (target[hit] - c0) / np.where(c1 > c0, c1 - c0, 1.0), 0.0)
        out[hit] = np.where(k[hit] == 0, self.nodes[0], x0 + frac * (x1 - x0))
        return out

    def sample(self, rng, size=None) -> np.ndarray:
        return self.invert(rng.standard_exponential(size))


def _path_weights(theta: ChangePointParams, path: CovariatePath, t) -> np.ndarray:
    """``exp(coef(t)'z(t))`` along a path."""
    return np.exp(np.einsum("...p,...p->...", theta.coef_at(t), path(t)))


def _smooth_nodes(smooth: SmoothHazard, zeta: float, extra=()) -> tuple[np.ndarray, np.ndarray]:
    """Tabulation grid plus ``zeta`` and ``extra`` breakpoints, and the hazard on it."""
    inside = [x for x in (zeta, *extra) if 0 < x < smooth.tau]
    nodes = np.union1d(smooth.grid, inside)
    missing = ~np.isin(nodes, smooth.grid)
    vals = np.empty(nodes.size)
    vals[~missing] = smooth.values
    vals[missing] = smooth(nodes[missing])
    return nodes, vals


def conditional_survival_step(model: "FittedModel", z) -> ConditionalSurvival:
    """Discrete law ``1 - exp(-sum_{t_k <= t} exp(coef(t_k)'z(t_k)) dLambda_k)``."""
    path = z if isinstance(z, CovariatePath) else CovariatePath.constant(z)
    bz = model.breslow
    w = _path_weights(model.theta_hat, path, bz.jump_times)
    return ConditionalSurvival(bz.jump_times, np.cumsum(w * bz.jump_sizes), "step")


def conditional_survival_smooth(model: "FittedModel", z) -> ConditionalSurvival:
    """Continuous law ``1 - exp(-int_0^t exp(coef(s)'z(s)) lambda_hat(s) ds)``.

    The integral is a trapezoid rule on the smoothing grid with extra nodes
    at the change point and at the path's breakpoints, so the integrand's
    multiplier is constant on every interval.
    """
    if model.smooth_hazard is None:
        raise ValueError("model has no smoothed hazard; build it with smooth=True")
    path = z if isinstance(z, CovariatePath) else CovariatePath.constant(z)
    nodes, lam = _smooth_nodes(model.smooth_hazard, model.theta_hat.zeta, path.breakpoints)
    mid = 0.5 * (nodes[:-1] + nodes[1:])
    w = _path_weights(model.theta_hat, path, mid)
    cum = np.concatenate([[0.0], np.cumsum(w * 0.5 * (lam[:-1] + lam[1:]) * np.diff(nodes))])
    return ConditionalSurvival(nodes, cum, "linear")


# -- Kaplan-Meier ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class KMCurve:
    """Product-limit survival; ``surv[j]`` holds on ``[times[j], times[j+1])``."""

    times: np.ndarray
    surv: np.ndarray

    def __call__(self, t) -> np.ndarray:
        s = np.concatenate([[1.0], self.surv])
        return s[np.searchsorted(self.times, t, side="right")]


def kaplan_meier(time, event) -> KMCurve:
    """Product-limit estimator; risk set at ``t`` is everyone with ``time >= t``."""
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=bool)
    ts = np.sort(time)
    et, counts = np.unique(time[event], return_counts=True)
    at_risk = ts.size - np.searchsorted(ts, et, side="left")
    return KMCurve(et, np.cumprod(1.0 - counts / at_risk))


@dataclass(frozen=True, eq=False)
class CensoringEstimate:
    """Kaplan-Meier censoring survival per covariate level.

    ``levels[s]`` is the covariate vector of stratum ``s`` and ``curves[s]``
    its curve.  ``tau`` receives any mass the curve leaves unassigned.
    """

    levels: np.ndarray
    curves: tuple[KMCurve, ...]
    tau: float

    @property
    def strata(self) -> dict[tuple, KMCurve]:
        return {tuple(v): c for v, c in zip(self.levels, self.curves)}

    def stratum(self, z) -> int:
        z = np.atleast_1d(np.asarray(z, dtype=float))
        hit = np.flatnonzero(np.all(self.levels == z, axis=1))
        if hit.size == 0:
            raise KeyError(f"no censoring stratum for covariate {z.tolist()}")
        return int(hit[0])


def km_censoring(data: Dataset, max_strata: int = 20) -> CensoringEstimate:
    """Kaplan-Meier of the censoring time per covariate level (censorings are the events)."""
    if not data.is_constant:
        raise NonCategorical("censoring strata need constant covariates")
    V, ids = data.levels
    if V.shape[0] > max_strata:
        raise NonCategorical(f"{V.shape[0]} covariate levels exceed the cap of {max_strata}")
    curves = tuple(kaplan_meier(data.time[ids == s], ~data.event[ids == s])
                   for s in range(V.shape[0]))
    return CensoringEstimate(V, curves, data.tau)


def _draw_censoring(curve: KMCurve, tau: float, lower, u) -> np.ndarray:
    """Inverse transform of the KM law, conditioned on ``C > lower``.

    ``u`` is uniform on ``[0, 1)``.  The target survival level is
    ``S(lower) * (1 - u)`` and the draw is the first jump past ``lower``
    where the curve falls to it; residual mass, or no mass above ``lower``,
    gives ``tau``.
    """
    lower = np.broadcast_to(np.asarray(lower, dtype=float), np.shape(u))
    s_low = curve(lower)
    target = s_low * (1.0 - u)
    start = np.searchsorted(curve.times, lower, side="right")
    # first j with surv[j] <= target; surv is nonincreasing
    j = np.searchsorted(-curve.surv, -target, side="left")
    j = np.maximum(j, start)
    out = np.full(np.shape(u), float(tau))
    hit = (j < curve.times.size) & (s_low > 0)
    out[hit] = curve.times[j[hit]]
    if np.any(s_low <= 0):
        log.debug("censoring law has no mass above lower bound; using tau")
    return out


def sample_censoring(est: CensoringEstimate, z, lower_bound=None, rng=None, size=None):
    """Draw censoring times for covariate level ``z``.

    With ``lower_bound`` the draw is from the law conditioned on
    ``C > lower_bound``; ``tau`` when that law has no mass.
    """
    from .rng import as_generator
    rng = as_generator(0 if rng is None else rng)
    s = est.stratum(z)
    lower = -np.inf if lower_bound is None else lower_bound
    u = rng.random(size)
    out = _draw_censoring(est.curves[s], est.tau, lower, np.asarray(u))
    return float(out) if size is None else out


# -- fitted model -------------------------------------------------------------------

@dataclass(eq=False)
class FittedModel:
    """Everything the model-based bootstraps draw from.

    Use :meth:`build`.  ``censoring`` is ``None`` when the covariates are
    not categorical, ``smooth_hazard`` when smoothing was not requested.
    """

    data: Dataset
    fit: FitResult
    breslow: StepCumHazard
    censoring: CensoringEstimate | None = None
    smooth_hazard: SmoothHazard | None = None
    _tables: dict = field(default_factory=dict, repr=False)

    @property
    def theta_hat(self) -> ChangePointParams:
        return self.fit.theta_hat

    @classmethod
    def build(cls, data: Dataset, fit: FitResult | None = None, *,
              fit_config: ProfileFitConfig | None = None, smooth: bool = True,
              grid_step: float | None = None, bandwidth: float | None = None,
              censoring: bool = True) -> "FittedModel":
        D = build_design(data)
        if fit is None:
            fit = fit_mple(data, fit_config, design=D)
        model = cls(data, fit, breslow(data, fit.theta_hat, design=D))
        if censoring:
            try:
                model.censoring = km_censoring(data)
            except NonCategorical:
                model.censoring = None
        if smooth:
            model.smooth_hazard = kernel_smooth_hazard(model, grid_step, bandwidth=bandwidth)
        return model

    def level_samplers(self, smooth: bool) -> list[ConditionalSurvival]:
        """One conditional survival law per covariate level, cached."""
        key = "smooth" if smooth else "step"
        if key not in self._tables:
            V, _ = self.data.levels
            make = conditional_survival_smooth if smooth else conditional_survival_step
            self._tables[key] = [make(self, v) for v in V]
        return self._tables[key]
