"""Partial likelihood of the change-point Cox model and its profile maximiser.

The hazard of a subject with covariate path ``Z`` is

    lambda0(t) * exp(alpha'Z(t))   for t <= zeta
    lambda0(t) * exp(beta'Z(t))    for t >  zeta

so at fixed ``zeta`` the log partial likelihood splits into an ``alpha`` part
(event times ``<= zeta``) and a ``beta`` part (event times ``> zeta``), each
an ordinary concave Cox log partial likelihood.  As a function of ``zeta``
it is a right-continuous step function that only moves at event times.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._backend import OK, kernels
from ._design import Design, build_design
from .data import ChangePointParams, Dataset
from .errors import EmptyRiskSet, NoEvents

STATUS_NAMES = {0: "converged", 1: "max_iter", 2: "diverged", 3: "no_ascent"}


@dataclass(frozen=True)
class ProfileFitConfig:
    """Settings for :func:`fit_mple`.

    ``zeta_window`` of ``None`` means the whole horizon ``[0, tau]``.
    Newton stops once the gradient sup-norm drops below ``newton_tol``;
    coefficients leaving ``[-coef_bound, coef_bound]`` count as divergence.
    """

    zeta_window: tuple[float, float] | None = None
    newton_tol: float = 1e-8
    newton_max_iter: int = 50
    step_halving_max: int = 30
    coef_bound: float = 50.0

    def __post_init__(self):
        if self.zeta_window is not None:
            lo, hi = map(float, self.zeta_window)
            if not lo < hi:
                raise ValueError("zeta_window needs lo < hi")
            object.__setattr__(self, "zeta_window", (lo, hi))
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if self.newton_max_iter < 1 or self.step_halving_max < 1:
            raise ValueError("iteration limits must be positive")

    def window(self, tau: float) -> tuple[float, float]:
        if self.zeta_window is None:
            return 0.0, float(tau)
        lo, hi = self.zeta_window
        if lo < 0 or hi > tau:
            raise ValueError(f"zeta_window {self.zeta_window} not inside [0, {tau}]")
        return lo, hi

    def to_dict(self) -> dict:
        return {"zeta_window": None if self.zeta_window is None else list(self.zeta_window),
                "newton_tol": self.newton_tol, "newton_max_iter": self.newton_max_iter,
                "step_halving_max": self.step_halving_max, "coef_bound": self.coef_bound}

    @classmethod
    def from_dict(cls, d: dict) -> "ProfileFitConfig":
        d = dict(d)
        if d.get("zeta_window") is not None:
            d["zeta_window"] = tuple(d["zeta_window"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class FitResult:
    """Outcome of the profile fit.

    Attributes
    ----------
    theta_hat : ChangePointParams
        Maximiser with the smallest change point.
    loglik : float
        Profiled log partial likelihood at ``theta_hat``.
    candidates : ndarray, shape (C,)
        Change-point candidates, ascending.
    profile_loglik : ndarray, shape (C,)
        Profiled log partial likelihood per candidate.
    alphas, betas : ndarray, shape (C, p)
        Fitted coefficients per candidate.
    status_alpha, status_beta : ndarray of int8, shape (C,)
        Newton status per side (0 converged, 1 iteration limit,
        2 diverged, 3 no ascent direction).
    converged : bool
        False when no candidate converged or when a failed candidate beats
        every converged one.
    cox_coef : ndarray, shape (p,)
        No-change-point Cox fit, also the value frozen on an empty side.
    """

    theta_hat: ChangePointParams
    loglik: float
    candidates: np.ndarray
    profile_loglik: np.ndarray
    alphas: np.ndarray
    betas: np.ndarray
    status_alpha: np.ndarray
    status_beta: np.ndarray
    converged: bool
    cox_coef: np.ndarray
    index: int = field(default=0)

    @property
    def candidate_ok(self) -> np.ndarray:
        return (self.status_alpha == OK) & (self.status_beta == OK)

    @property
    def profile_curve(self) -> list[tuple[float, float, np.ndarray, np.ndarray]]:
        return [(float(z), float(l), a, b) for z, l, a, b in
                zip(self.candidates, self.profile_loglik, self.alphas, self.betas)]

    def to_dict(self) -> dict:
        return {
            "theta_hat": self.theta_hat.to_dict(),
            "loglik": self.loglik,
            "converged": self.converged,
            "cox_coef": self.cox_coef.tolist(),
            "profile": [
                {"zeta": float(z), "loglik": float(l), "alpha": a.tolist(), "beta": b.tolist(),
                 "status_alpha": STATUS_NAMES[int(sa)], "status_beta": STATUS_NAMES[int(sb)]}
                for z, l, a, b, sa, sb in zip(self.candidates, self.profile_loglik, self.alphas,
                                              self.betas, self.status_alpha, self.status_beta)
            ],
        }


def _require_events(data: Dataset) -> None:
    if not data.event.any():
        raise NoEvents("dataset has no observed failures")


def s_nk(data: Dataset, t: float, gamma, k: int):
    """Risk-set moment ``(1/n) sum_i Y_i(t) Z_i(t)^{(x)k} exp(gamma'Z_i(t))``.

    Returns a scalar for ``k=0``, a ``p``-vector for ``k=1`` and a ``p x p``
    matrix for ``k=2``.
    """
    if k not in (0, 1, 2):
        raise ValueError("k must be 0, 1 or 2")
    at_risk = data.time >= t
    if not at_risk.any():
        raise EmptyRiskSet(f"nobody at risk at t={t}")
    Z = data.covariates_at(t)[at_risk]
    w = np.exp(Z @ np.atleast_1d(np.asarray(gamma, dtype=float)))
    n = data.n
    if k == 0:
        return float(w.sum() / n)
    if k == 1:
        return w @ Z / n
    return (Z * w[:, None]).T @ Z / n


def _split(design: Design, zeta: float) -> int:
    return int(np.searchsorted(design.times, zeta, side="right"))


def log_partial_likelihood(data: Dataset, theta: ChangePointParams, *,
                           design: Design | None = None) -> float:
    """Log partial likelihood with Breslow handling of tied failures."""
    _require_events(data)
    D = design if design is not None else build_design(data)
    G = theta.coef_at(D.times)                  # (K, p)
    eta = G @ D.V.T                             # (K, L)
    m = eta.max(axis=1, keepdims=True)
    with np.errstate(divide="ignore"):
        lse = np.log((D.R * np.exp(eta - m)).sum(axis=1)) + m[:, 0]
    return float((D.E * eta).sum() - D.d @ lse)


def score_and_hessian(data: Dataset, theta: ChangePointParams, *,
                      design: Design | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Gradient and Hessian in ``(alpha, beta)`` at fixed ``theta.zeta``.

    The Hessian is block diagonal: ``alpha`` only sees event times up to
    ``zeta`` and ``beta`` only those after it.
    """
    _require_events(data)
    D = design if design is not None else build_design(data)
    s = _split(D, theta.zeta)
    p = D.p
    _, ga, Ha = kernels.side_eval(D.V, D.R, D.E, D.d, 0, s, theta.alpha)
    _, gb, Hb = kernels.side_eval(D.V, D.R, D.E, D.d, s, D.K, theta.beta)
    g = np.concatenate([ga, gb])
    H = np.zeros((2 * p, 2 * p))
    H[:p, :p] = Ha
    H[p:, p:] = Hb
    return g, H


def zeta_candidates(event_times: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """``{lo}`` plus the event times in ``(lo, hi]``.

    The profile likelihood is constant between consecutive event times, so
    these points cover every value it takes on the window.
    """
    inner = event_times[(event_times > lo) & (event_times <= hi)]
    return np.concatenate([[lo], inner])


def fit_mple(data: Dataset, cfg: ProfileFitConfig | None = None, *,
             design: Design | None = None) -> FitResult:
    """Maximum partial likelihood estimate, smallest change point among ties.

    Every candidate change point gets its own Newton fit of ``alpha`` and
    ``beta``.  Candidates whose fit failed are left out of the argmax.
    """
    cfg = cfg or ProfileFitConfig()
    _require_events(data)
    lo, hi = cfg.window(data.tau)
    D = design if design is not None else build_design(data)
    cand = zeta_candidates(D.times, lo, hi)
    split = np.searchsorted(D.times, cand, side="right").astype(np.intp)
    ll, alphas, betas, st_a, st_b, cox, _ = kernels.profile_fit(
        D.V, D.R, D.E, D.d, split, cfg.newton_tol, cfg.newton_max_iter,
        cfg.step_halving_max, cfg.coef_bound)
    ll = np.asarray(ll)
    alphas = np.asarray(alphas)
    betas = np.asarray(betas)
    st_a = np.asarray(st_a, dtype=np.int8)
    st_b = np.asarray(st_b, dtype=np.int8)
    ok = (st_a == OK) & (st_b == OK)
    if ok.any():
        masked = np.where(ok, ll, -np.inf)
        best = int(np.argmax(masked))
        converged = not (~ok).any() or ll[~ok].max() <= ll[best] + 1e-9
    else:
        best = int(np.argmax(ll))
        converged = False
    theta = ChangePointParams(alphas[best], betas[best], cand[best])
    for a in (cand, ll, alphas, betas, st_a, st_b):
        a.setflags(write=False)
    return FitResult(theta, float(ll[best]), cand, ll, alphas, betas, st_a, st_b,
                     bool(converged), np.asarray(cox, dtype=float), best)
