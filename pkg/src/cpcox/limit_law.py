"""Sampler for the limiting law of the rescaled estimator.

Asymptotically ``sqrt(n)(alpha_hat - alpha0)``, ``sqrt(n)(beta_hat - beta0)``
and ``n(zeta_hat - zeta0)`` are independent.  The coefficient parts are
Gaussian with inverse-information covariance.  The change-point part is the
smallest maximiser of a two-sided compound Poisson process ``W`` with
``W(0) = 0``:

* for ``h > 0``, jumps arrive at rate ``gamma_plus`` with increments
  ``log_r_right + (alpha0 - beta0)'v``, ``v`` from ``jump_law_plus``;
* for ``h < 0``, jumps arrive at rate ``gamma_minus`` (counting leftwards)
  with increments ``log_r_left + (beta0 - alpha0)'v``, ``v`` from
  ``jump_law_minus``.

``W`` is a step function.  On the right the plateau after the ``i``-th
arrival ``a_i`` starts at ``a_i``.  On the left the plateau that has
collected ``j`` arrivals ``-e_1 > ... > -e_j`` extends down to (but not
including) the next arrival ``-e_{j+1}``, whose location is its smallest
attainable point; this mirrors the finite-sample estimator, which always
lands on an event time.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CPCoxError, NonDiscreteCovariates, WindowExhausted
from .rng import as_generator
from .simulate import ScenarioConfig, at_risk_probability

MAX_DOUBLINGS = 10
TIE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class JumpLaw:
    values: np.ndarray   # (k, p)
    probs: np.ndarray    # (k,)

    def mean(self) -> np.ndarray:
        return self.probs @ self.values


@dataclass(frozen=True, eq=False)
class LimitLawConfig:
    gamma_minus: float
    gamma_plus: float
    log_r_left: float
    log_r_right: float
    jump_law_minus: JumpLaw
    jump_law_plus: JumpLaw
    delta: np.ndarray
    info_alpha: np.ndarray
    info_beta: np.ndarray
    window: float

    def __post_init__(self):
        for law in (self.jump_law_minus, self.jump_law_plus):
            if abs(law.probs.sum() - 1) > 1e-9 or np.any(law.probs < 0):
                raise ValueError("jump-law probabilities must be nonnegative and sum to 1")
        if self.gamma_minus < 0 or self.gamma_plus < 0 or not self.window > 0:
            raise ValueError("intensities must be >= 0 and the window positive")
        for m in (self.info_alpha, self.info_beta):
            if not np.allclose(m, m.T):
                raise ValueError("information matrices must be symmetric")

    @property
    def p(self) -> int:
        return self.delta.size

    def mean_increment(self) -> tuple[float, float]:
        """Mean jump of the left and right processes."""
        left = self.log_r_left + float(self.delta @ self.jump_law_minus.mean())
        right = self.log_r_right - float(self.delta @ self.jump_law_plus.mean())
        return left, right

    def drift(self) -> tuple[float, float]:
        """Expected change of ``W`` per unit ``|h|`` on each side."""
        ml, mr = self.mean_increment()
        return self.gamma_minus * ml, self.gamma_plus * mr

    def check(self) -> None:
        """Raise unless both drifts are negative and both informations are PD."""
        dl, dr = self.drift()
        if not (dl < 0 and dr < 0):
            raise CPCoxError(f"jump process needs negative drift on both sides, got {dl:.4g}, {dr:.4g}")
        for name, m in (("info_alpha", self.info_alpha), ("info_beta", self.info_beta)):
            try:
                np.linalg.cholesky(m)
            except np.linalg.LinAlgError:
                raise CPCoxError(f"{name} is not positive definite") from None

    def to_dict(self) -> dict:
        return {
            "gamma_minus": self.gamma_minus, "gamma_plus": self.gamma_plus,
            "log_r_left": self.log_r_left, "log_r_right": self.log_r_right,
            "jump_law_minus": {"values": self.jump_law_minus.values.tolist(),
                               "probs": self.jump_law_minus.probs.tolist()},
            "jump_law_plus": {"values": self.jump_law_plus.values.tolist(),
                              "probs": self.jump_law_plus.probs.tolist()},
            "delta": self.delta.tolist(), "info_alpha": self.info_alpha.tolist(),
            "info_beta": self.info_beta.tolist(), "window": self.window,
        }


def _risk_weights(cfg: ScenarioConfig, t: float, gamma: np.ndarray) -> np.ndarray:
    """Per-level ``P(z) P(T~ >= t | z) exp(gamma'z)``."""
    V = cfg.covariate_levels
    y = at_risk_probability(cfg, [t], V)[:, 0]
    return cfg.covariate_probs * y * np.exp(V @ gamma)


def s_moments(cfg: ScenarioConfig, t: float, gamma) -> tuple[float, np.ndarray, np.ndarray]:
    """Population ``s_0, s_1, s_2`` at ``t``: ``E[Y(t) Z^(x)k exp(gamma'Z)]``."""
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    w = _risk_weights(cfg, t, gamma)
    V = cfg.covariate_levels
    return float(w.sum()), w @ V, (V * w[:, None]).T @ V


def _information(cfg: ScenarioConfig, a: float, b: float, gamma, step: float) -> np.ndarray:
    """``int_a^b (s_2 - s_1 s_1'/s_0)(s; gamma) lambda_0(s) ds`` by trapezoid.

    Baseline breaks are nodes, and the baseline rate is taken at each
    interval's midpoint so its jumps are handled exactly.
    """
    nodes = np.union1d(np.linspace(a, b, max(2, int(np.ceil((b - a) / step)) + 1)),
                       cfg.baseline_breaks[(cfg.baseline_breaks > a) & (cfg.baseline_breaks < b)])
    p = cfg.p
    f = np.empty((nodes.size, p, p))
    for i, s in enumerate(nodes):
        s0, s1, s2 = s_moments(cfg, s, gamma)
        f[i] = s2 - np.outer(s1, s1) / s0
    mid = 0.5 * (nodes[:-1] + nodes[1:])
    lam = cfg.baseline_rates[np.searchsorted(cfg.baseline_breaks, mid)]
    w = 0.5 * np.diff(nodes) * lam
    return np.einsum("i,ipq->pq", w, f[:-1] + f[1:])


def derive_limit_config(cfg: ScenarioConfig, quadrature_step: float | None = None,
                        window: float | None = None) -> LimitLawConfig:
    """Limit-law parameters implied by a simulation scenario.

    The covariate law must be discrete; at-risk probabilities use the
    closed-form survival and censoring functions.  Information integrals use
    the trapezoid rule with step ``tau/8192`` by default and a node at
    ``zeta0``.  The default window is ``20 / min_side |drift|``.
    """
    if cfg.covariate_levels.shape[0] > 1000:
        raise NonDiscreteCovariates("covariate law has too many levels")
    z0, a0, b0 = cfg.zeta0, cfg.alpha0, cfg.beta0
    V = cfg.covariate_levels
    lam_left = cfg.baseline_rates[np.searchsorted(cfg.baseline_breaks, z0, side="left")]
    lam_right = cfg.baseline_rates[np.searchsorted(cfg.baseline_breaks, z0, side="right")]
    wa = _risk_weights(cfg, z0, a0)
    wb = _risk_weights(cfg, z0, b0)
    s0a, s0b = wa.sum(), wb.sum()
    step = quadrature_step if quadrature_step is not None else cfg.tau / 8192
    out = LimitLawConfig(
        gamma_minus=float(s0a * lam_left), gamma_plus=float(s0b * lam_right),
        log_r_left=float(np.log(s0a / s0b)), log_r_right=float(np.log(s0b / s0a)),
        jump_law_minus=JumpLaw(V.copy(), wa / s0a), jump_law_plus=JumpLaw(V.copy(), wb / s0b),
        delta=b0 - a0,
        info_alpha=_information(cfg, 0.0, z0, a0, step),
        info_beta=_information(cfg, z0, cfg.tau, b0, step),
        window=1.0,
    )
    if window is None:
        rates = [abs(d) for d in out.drift() if d < 0]
        window = 20.0 / min(rates) if rates else 100.0
    return LimitLawConfig(**{**out.__dict__, "window": float(window)})


@dataclass(frozen=True, eq=False)
class LimitDraw:
    phi_alpha: np.ndarray
    phi_beta: np.ndarray
    phi_zeta: float
    right_jumps: int     # arrivals on (0, window], before any extension


class _Side:
    """Arrivals and increments of one side, extendable outward."""

    def __init__(self, rate, base, sign_delta, law: JumpLaw, rng):
        self.rate, self.base, self.sd, self.law, self.rng = rate, base, sign_delta, law, rng
        self.pos = np.empty(0)
        self.inc = np.empty(0)
        self.reach = 0.0

    def extend(self, to: float) -> None:
        rng = self.rng
        k = rng.poisson(self.rate * (to - self.reach))
        pos = np.sort(rng.uniform(self.reach, to, size=k))
        v = self.law.values[rng.choice(self.law.probs.size, size=k, p=self.law.probs)]
        self.pos = np.concatenate([self.pos, pos])
        self.inc = np.concatenate([self.inc, self.base + v @ self.sd])
        self.reach = to


def _argmax_jump(left: _Side, right: _Side) -> tuple[float, bool]:
    """Smallest maximiser given the arrivals so far; flag False if it needs more range."""
    vl = np.concatenate([[0.0], np.cumsum(left.inc)])    # vl[j]: j left arrivals collected
    vr = np.cumsum(right.inc)
    M = max(vl.max(), vr.max(initial=-np.inf))
    tol = TIE_TOL * (1.0 + abs(M))
    jl = np.flatnonzero(vl >= M - tol)
    if jl.size:
        j = int(jl[-1])
        if j >= left.pos.size:
            return np.nan, False
        return -float(left.pos[j]), True
    i = int(np.flatnonzero(vr >= M - tol)[0])
    return float(right.pos[i]), True


def sample_limit(cfg: LimitLawConfig, rng) -> LimitDraw:
    """One draw of ``(phi_alpha, phi_beta, phi_zeta)``.

    The jump process is simulated on ``[-H, H]``; while the maximiser sits
    within ``H/2`` of an end (or needs the next arrival beyond ``-H``), ``H``
    doubles and the existing path is extended outward.

    Raises
    ------
    WindowExhausted
        Still unresolved after ten doublings.
    """
    cfg.check()
    rng = as_generator(rng)
    p = cfg.p
    phi_a = np.linalg.solve(np.linalg.cholesky(cfg.info_alpha).T, rng.standard_normal(p))
    phi_b = np.linalg.solve(np.linalg.cholesky(cfg.info_beta).T, rng.standard_normal(p))
    return _finish(cfg, rng, phi_a, phi_b)


def _finish(cfg: LimitLawConfig, rng, phi_a, phi_b) -> LimitDraw:
    H = cfg.window
    left = _Side(cfg.gamma_minus, cfg.log_r_left, cfg.delta, cfg.jump_law_minus, rng)
    right = _Side(cfg.gamma_plus, cfg.log_r_right, -cfg.delta, cfg.jump_law_plus, rng)
    left.extend(H)
    right.extend(H)
    n_right = right.pos.size
    for _ in range(MAX_DOUBLINGS + 1):
        phi, ok = _argmax_jump(left, right)
        if ok and abs(phi) < H / 2:
            return LimitDraw(phi_a, phi_b, phi, n_right)
        H *= 2
        left.extend(H)
        right.extend(H)
    raise WindowExhausted(f"maximiser not resolved within a window of {H:g}")


@dataclass(frozen=True, eq=False)
class LimitSample:
    phi_alpha: np.ndarray    # (N, p)
    phi_beta: np.ndarray     # (N, p)
    phi_zeta: np.ndarray     # (N,)
    right_jumps: np.ndarray  # (N,)

    def to_csv(self, path=None) -> str:
        p = self.phi_alpha.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["phi_zeta", *[f"phi_alpha{k + 1}" for k in range(p)],
                    *[f"phi_beta{k + 1}" for k in range(p)], "right_jumps"])
        for z, a, b, r in zip(self.phi_zeta, self.phi_alpha, self.phi_beta, self.right_jumps):
            w.writerow([repr(float(z)), *map(repr, map(float, a)), *map(repr, map(float, b)), int(r)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


def sample_limit_batch(cfg: LimitLawConfig, size: int, rng) -> LimitSample:
    """``size`` independent draws from one stream."""
    cfg.check()
    rng = as_generator(rng)
    p = cfg.p
    La = np.linalg.cholesky(cfg.info_alpha)
    Lb = np.linalg.cholesky(cfg.info_beta)
    # Gaussian parts first, in bulk, then the jump process draw by draw
    phi_a = np.linalg.solve(La.T, rng.standard_normal((p, size))).T
    phi_b = np.linalg.solve(Lb.T, rng.standard_normal((p, size))).T
    zeta = np.empty(size)
    jumps = np.empty(size, dtype=np.int64)
    for k in range(size):
        d = _finish(cfg, rng, phi_a[k], phi_b[k])
        zeta[k], jumps[k] = d.phi_zeta, d.right_jumps
    return LimitSample(phi_a, phi_b, zeta, jumps)
