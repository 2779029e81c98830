"""Survival data containers, risk sets and the flat CSV format.

A dataset holds observed times, event flags and covariates.  Covariates are
either constant per subject (an ``(n, p)`` array, the fast path) or
piecewise-constant left-continuous paths (:class:`CovariatePath`).
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CPCoxError


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CovariatePath:
    """Piecewise-constant, left-continuous covariate path on ``[0, tau]``.

    ``values[0]`` holds on ``[0, breakpoints[0]]``, ``values[i]`` on
    ``(breakpoints[i-1], breakpoints[i]]`` and ``values[-1]`` after the last
    breakpoint.
    """

    values: np.ndarray
    breakpoints: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        bps = np.atleast_1d(np.asarray(self.breakpoints, dtype=float))
        if values.shape[0] != bps.shape[0] + 1:
            raise ValueError("need exactly one more segment value than breakpoints")
        if bps.size and (np.any(np.diff(bps) <= 0) or bps[0] < 0):
            raise ValueError("breakpoints must be strictly increasing and nonnegative")
        if not np.all(np.isfinite(values)):
            raise ValueError("covariate values must be finite")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "breakpoints", _frozen(bps))

    @classmethod
    def constant(cls, z) -> "CovariatePath":
        return cls(np.atleast_1d(np.asarray(z, dtype=float))[None, :])

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def is_constant(self) -> bool:
        return self.breakpoints.size == 0

    def segment(self, t):
        return np.searchsorted(self.breakpoints, t, side="left")

    def __call__(self, t) -> np.ndarray:
        return self.values[self.segment(t)]

    def __eq__(self, other):
        if not isinstance(other, CovariatePath):
            return NotImplemented
        return (np.array_equal(self.values, other.values)
                and np.array_equal(self.breakpoints, other.breakpoints))

    def __hash__(self):
        return hash((self.values.tobytes(), self.breakpoints.tobytes()))


@dataclass(frozen=True)
class Subject:
    observed_time: float
    event: bool
    covariates: CovariatePath


@dataclass(frozen=True, eq=False)
class ChangePointParams:
    """Regression vectors before (``alpha``) and after (``beta``) the change at ``zeta``."""

    alpha: np.ndarray
    beta: np.ndarray
    zeta: float

    def __post_init__(self):
        a = _frozen(np.atleast_1d(self.alpha))
        b = _frozen(np.atleast_1d(self.beta))
        if a.shape != b.shape:
            raise ValueError("alpha and beta must have the same dimension")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b)) and np.isfinite(self.zeta)):
            raise ValueError("parameters must be finite")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)
        object.__setattr__(self, "zeta", float(self.zeta))

    def coef_at(self, t):
        """Coefficient vector in force at time(s) ``t`` (``alpha`` for ``t <= zeta``)."""
        t = np.asarray(t, dtype=float)
        return np.where((t <= self.zeta)[..., None], self.alpha, self.beta)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha.tolist(), "beta": self.beta.tolist(), "zeta": self.zeta}


class Dataset:
    """Right-censored survival sample on the horizon ``[0, tau]``.

    Parameters
    ----------
    time : array_like, shape (n,)
        Observed times ``min(T, C)``.
    event : array_like of bool, shape (n,)
        ``True`` for an observed failure.
    z : array_like, shape (n, p), optional
        Constant covariates.  Mutually exclusive with ``paths``.
    tau : float
        Study horizon.
    paths : sequence of CovariatePath, optional
        Time-varying covariates, one path per subject.
    """

    def __init__(self, time, event, z=None, tau: float | None = None, *,
                 paths: Sequence[CovariatePath] | None = None, levels=None):
        time = np.asarray(time, dtype=float).ravel()
        event = np.asarray(event).astype(bool).ravel()
        if time.shape != event.shape:
            raise ValueError("time and event must have the same length")
        if tau is None:
            raise ValueError("tau is required")
        tau = float(tau)
        if not tau > 0:
            raise ValueError("tau must be positive")
        if np.any(time < 0) or np.any(time > tau) or not np.all(np.isfinite(time)):
            raise ValueError("observed times must lie in [0, tau]")
        if (z is None) == (paths is None):
            raise ValueError("give exactly one of z (constant) or paths")
        if paths is not None:
            paths = tuple(paths)
            if len(paths) != time.size:
                raise ValueError("one covariate path per subject")
            if len({pa.p for pa in paths}) > 1:
                raise ValueError("all covariate paths need the same dimension")
            if any(pa.breakpoints.size and pa.breakpoints[-1] > tau for pa in paths):
                raise ValueError("breakpoints must lie in [0, tau]")
            if all(pa.is_constant for pa in paths):
                z = np.vstack([pa.values for pa in paths]) if paths else np.empty((0, 1))
                paths = None
        if z is not None:
            z = np.asarray(z, dtype=float)
            if z.ndim == 1:
                z = z[:, None]
            if z.shape[0] != time.size:
                raise ValueError("z must have one row per subject")
            if not np.all(np.isfinite(z)):
                raise ValueError("covariates must be finite")
            z = _frozen(z)
        self.time = _frozen(time)
        self.event = event.copy()
        self.event.setflags(write=False)
        self.z = z
        self.paths = paths
        self.tau = tau
        if levels is not None:
            self.__dict__["levels"] = levels

    @classmethod
    def from_subjects(cls, subjects: Iterable[Subject], tau: float) -> "Dataset":
        subjects = list(subjects)
        return cls([s.observed_time for s in subjects], [s.event for s in subjects],
                   tau=tau, paths=[s.covariates for s in subjects])

    def __len__(self) -> int:
        return self.time.size

    @property
    def n(self) -> int:
        return self.time.size

    @property
    def p(self) -> int:
        return self.z.shape[1] if self.z is not None else self.paths[0].p

    @property
    def is_constant(self) -> bool:
        return self.paths is None

    def path(self, i: int) -> CovariatePath:
        if self.paths is not None:
            return self.paths[i]
        return CovariatePath.constant(self.z[i])

    @property
    def subjects(self) -> list[Subject]:
        return [Subject(float(self.time[i]), bool(self.event[i]), self.path(i))
                for i in range(self.n)]

    def covariates_at(self, t: float) -> np.ndarray:
        """``(n, p)`` matrix of every subject's covariate value at time ``t``."""
        if self.z is not None:
            return self.z
        return np.vstack([pa(t) for pa in self.paths])

    @cached_property
    def levels(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct constant covariate rows and each subject's row index.

        Only defined for constant covariates.
        """
        if self.z is None:
            raise CPCoxError("covariate levels need constant covariates")
        values, ids = np.unique(self.z, axis=0, return_inverse=True)
        return values, ids.ravel().astype(np.intp)

    def take(self, idx) -> "Dataset":
        """Subset / resample rows (with repetition allowed)."""
        idx = np.asarray(idx, dtype=np.intp)
        if self.z is not None:
            lv = None
            if "levels" in self.__dict__:
                vals, ids = self.levels
                lv = (vals, ids[idx])
            return Dataset(self.time[idx], self.event[idx], self.z[idx], self.tau, levels=lv)
        return Dataset(self.time[idx], self.event[idx], tau=self.tau,
                       paths=[self.paths[i] for i in idx])

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        if self.tau != other.tau or not np.array_equal(self.time, other.time):
            return False
        if not np.array_equal(self.event, other.event):
            return False
        if self.z is not None and other.z is not None:
            return np.array_equal(self.z, other.z)
        return self.subjects == other.subjects

    __hash__ = None

    def __repr__(self):
        kind = "constant" if self.is_constant else "time-varying"
        return (f"Dataset(n={self.n}, p={self.p}, events={int(self.event.sum())}, "
                f"tau={self.tau}, covariates={kind})")


def risk_set(data: Dataset, t: float) -> np.ndarray:
    """Indices of subjects still at risk at ``t`` (observed time >= ``t``)."""
    return np.flatnonzero(data.time >= t)


def event_times(data: Dataset) -> np.ndarray:
    """Sorted distinct failure times."""
    return np.unique(data.time[data.event])


# -- CSV ---------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def dumps_dataset(data: Dataset) -> str:
    """Serialise to CSV text.  Floats use ``repr`` so parsing is exact."""
    buf = io.StringIO()
    buf.write(f"# tau={_fmt(data.tau)}\n")
    w = csv.writer(buf, lineterminator="\n")
    zcols = [f"z{k + 1}" for k in range(data.p)]
    if data.is_constant:
        w.writerow(["observed_time", "event", *zcols])
        for t, e, z in zip(data.time, data.event, data.z):
            w.writerow([_fmt(t), int(e), *map(_fmt, z)])
    else:
        w.writerow(["subject", "observed_time", "event", "segment_start", *zcols])
        for i, pa in enumerate(data.paths):
            starts = np.concatenate([[0.0], pa.breakpoints])
            for s, v in zip(starts, pa.values):
                w.writerow([i, _fmt(data.time[i]), int(data.event[i]), _fmt(s), *map(_fmt, v)])
    return buf.getvalue()


def loads_dataset(text: str) -> Dataset:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# tau="):
        raise ValueError("missing '# tau=' header line")
    tau = float(lines[0].split("=", 1)[1])
    rows = list(csv.reader(lines[1:]))
    header, body = rows[0], rows[1:]
    if header[0] == "observed_time":
        arr = np.array([[float(x) for x in r] for r in body]).reshape(len(body), len(header))
        return Dataset(arr[:, 0], arr[:, 1] > 0.5, arr[:, 2:], tau)
    if header[0] != "subject":
        raise ValueError(f"unrecognised header {header!r}")
    groups: dict[int, list] = {}
    for r in body:
        groups.setdefault(int(r[0]), []).append(r)
    time, event, paths = [], [], []
    for sid in sorted(groups):
        seg = groups[sid]
        time.append(float(seg[0][1]))
        event.append(int(seg[0][2]) == 1)
        starts = [float(r[3]) for r in seg]
        vals = [[float(x) for x in r[4:]] for r in seg]
        paths.append(CovariatePath(np.array(vals), np.array(starts[1:])))
    return Dataset(time, event, tau=tau, paths=paths)


def write_dataset(data: Dataset, path: str | Path) -> None:
    Path(path).write_text(dumps_dataset(data), encoding="utf-8")


def read_dataset(path: str | Path) -> Dataset:
    return loads_dataset(Path(path).read_text(encoding="utf-8"))
