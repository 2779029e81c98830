"""Compressed risk-set representation used by the likelihood kernels.

For distinct event times ``t_1 < ... < t_K`` and distinct covariate values
``V_1 .. V_L`` the partial likelihood only depends on

* ``R[k, l]``: number of subjects at risk at ``t_k`` whose covariate at
  ``t_k`` equals ``V_l``;
* ``E[k, l]``: number of failures at ``t_k`` with covariate ``V_l``.

With categorical covariates ``L`` is tiny and the kernels cost ``O(K L)``
per evaluation.  Time-varying paths fit the same mould because the level is
resolved per event time.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset


@dataclass(frozen=True)
class Design:
    times: np.ndarray   # (K,) distinct event times
    d: np.ndarray       # (K,) failures per event time
    V: np.ndarray       # (L, p) covariate levels
    R: np.ndarray       # (K, L) at-risk counts
    E: np.ndarray       # (K, L) failure counts

    @property
    def K(self) -> int:
        return self.times.size

    @property
    def p(self) -> int:
        return self.V.shape[1]


def _constant_design(time, event, V, ids) -> Design:
    L = V.shape[0]
    ev_t = time[event]
    times, inv = np.unique(ev_t, return_inverse=True)
    K = times.size
    E = np.bincount(inv * L + ids[event], minlength=K * L).reshape(K, L).astype(float)
    d = E.sum(axis=1)
    R = np.empty((K, L))
    for l in range(L):
        tl = np.sort(time[ids == l])
        R[:, l] = tl.size - np.searchsorted(tl, times, side="left")
    return Design(times, d, np.ascontiguousarray(V, dtype=float), R, E)


def _path_design(data: Dataset) -> Design:
    times = np.unique(data.time[data.event])
    K = times.size
    level_of: dict[bytes, int] = {}
    vals: list[np.ndarray] = []
    rows, cols, evk, evl = [], [], [], []
    k_of = {t: k for k, t in enumerate(times)}
    for j, pa in enumerate(data.paths):
        nk = np.searchsorted(times, data.time[j], side="right")
        if nk == 0:
            continue
        seg = pa.segment(times[:nk])
        seg_level = np.empty(pa.values.shape[0], dtype=np.intp)
        for s, v in enumerate(pa.values):
            key = v.tobytes()
            if key not in level_of:
                level_of[key] = len(vals)
                vals.append(v)
            seg_level[s] = level_of[key]
        lev = seg_level[seg]
        rows.append(np.arange(nk))
        cols.append(lev)
        if data.event[j]:
            evk.append(k_of[data.time[j]])
            evl.append(lev[k_of[data.time[j]]])
    V = np.array(vals, dtype=float).reshape(len(vals), data.p)
    L = V.shape[0]
    R = np.zeros((K, L))
    if rows:
        np.add.at(R, (np.concatenate(rows), np.concatenate(cols)), 1.0)
    E = np.zeros((K, L))
    np.add.at(E, (np.array(evk, dtype=np.intp), np.array(evl, dtype=np.intp)), 1.0)
    return Design(times, E.sum(axis=1), V, R, E)


def build_design(data: Dataset) -> Design:
    if data.is_constant:
        V, ids = data.levels
        return _constant_design(data.time, data.event, V, ids)
    return _path_design(data)
