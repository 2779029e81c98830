"""Monte-Carlo coverage experiments.

For every sample size and replicate a dataset is simulated once and shared by
all bootstrap methods.  Every random stream is keyed by the root seed and the
cell coordinates, so the output does not depend on the number of workers.

Files written to the output directory::

    coverage.csv         one row per (n, method) cell that completed
    intervals.csv        every interval: n, method, replicate, bounds, covered
    mc_deviation.csv     zeta_hat and n (zeta_hat - zeta0) per dataset
    histograms.csv       histograms of the scaled draws of the first dataset
                         per n and method, and of n (zeta_hat - zeta0)
    draws/<method>_n<n>.csv   scaled draws of that first dataset
    km_level<k>.csv      Kaplan-Meier curves per covariate level of the first
                         dataset of the first sample size
    manifest.json        configuration, seeds, versions, output checksums
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bootstrap import MODEL_BASED, BootstrapConfig, percentile_ci, run_bootstrap
from .data import Dataset
from .errors import CPCoxError, NonCategorical, TooManyFailures
from .estimators import FittedModel, KMCurve, kaplan_meier
from .likelihood import ProfileFitConfig, fit_mple
from .rng import stream
from .simulate import ScenarioConfig, sample_dataset

log = logging.getLogger(__name__)

DATA_KEY, BOOT_KEY = 0, 1


def dataset_seed(root: int, n: int, rep: int):
    return stream(root, DATA_KEY, n, rep)


def bootstrap_seed(root: int, n: int, method_pos: int, rep: int) -> tuple[int, ...]:
    return (root, BOOT_KEY, n, method_pos, rep)


def default_methods(replicates: int = 500) -> list[BootstrapConfig]:
    """The coverage-table methods: intervals are the quantiles of ``zeta*``."""
    kw = dict(fit=ProfileFitConfig((0.5, 1.5)), interval_form="percentile")
    return [BootstrapConfig("classical", replicates, **kw),
            BootstrapConfig("m_out_of_n", replicates, 4 / 5, interval_rate="m", **kw),
            BootstrapConfig("m_out_of_n", replicates, 9 / 10, interval_rate="m", **kw),
            BootstrapConfig("m_out_of_n", replicates, 14 / 15, interval_rate="m", **kw),
            BootstrapConfig("conditional", replicates, **kw),
            BootstrapConfig("conditional_censoring", replicates, **kw),
            BootstrapConfig("smooth", replicates, **kw),
            BootstrapConfig("smooth_censoring", replicates, **kw)]


@dataclass(frozen=True)
class ExperimentSpec:
    """What to run.

    ``fit`` is the profile-fit setting for the original data; each method
    carries its own (normally identical) setting for the refits.
    """

    scenario: ScenarioConfig = field(default_factory=ScenarioConfig.lagged_effect)
    sample_sizes: tuple[int, ...] = (300, 500, 1000)
    monte_carlo_reps: int = 200
    methods: tuple[BootstrapConfig, ...] = field(default_factory=lambda: tuple(default_methods()))
    fit: ProfileFitConfig = field(default_factory=lambda: ProfileFitConfig((0.5, 1.5)))
    seed: int = 0
    confidence_level: float = 0.95
    histogram_bins: int = 60

    def __post_init__(self):
        if self.monte_carlo_reps < 1:
            raise ValueError("monte_carlo_reps must be >= 1")
        if not self.sample_sizes or any(n < 1 for n in self.sample_sizes):
            raise ValueError("sample_sizes must be positive")
        object.__setattr__(self, "sample_sizes", tuple(int(n) for n in self.sample_sizes))
        object.__setattr__(self, "methods", tuple(self.methods))

    def to_dict(self) -> dict:
        return {"scenario": self.scenario.to_dict(), "sample_sizes": list(self.sample_sizes),
                "monte_carlo_reps": self.monte_carlo_reps,
                "methods": [{k: v for k, v in m.to_dict().items() if k != "seed"}
                            for m in self.methods],
                "fit": self.fit.to_dict(), "seed": self.seed,
                "confidence_level": self.confidence_level,
                "histogram_bins": self.histogram_bins}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        kw = {}
        if "scenario" in d:
            base = ScenarioConfig.lagged_effect().to_dict()
            base.update(d.pop("scenario"))
            kw["scenario"] = ScenarioConfig.from_dict(base)
        fit = ProfileFitConfig.from_dict(d.pop("fit")) if "fit" in d else ProfileFitConfig((0.5, 1.5))
        kw["fit"] = fit
        if "methods" in d:
            methods = []
            for m in d.pop("methods"):
                m = dict(m)
                m.setdefault("fit", fit.to_dict())
                m.pop("seed", None)
                methods.append(BootstrapConfig.from_dict(m))
            kw["methods"] = tuple(methods)
        if "sample_sizes" in d:
            kw["sample_sizes"] = tuple(d.pop("sample_sizes"))
        return cls(**kw, **d)


@dataclass(frozen=True)
class CoverageRow:
    method: str
    n: int
    m_exponent: float
    coverage: float
    avg_length: float
    mc_standard_error: float
    reps: int

    @staticmethod
    def header() -> list[str]:
        return ["method", "n", "m_exponent", "coverage", "avg_length", "mc_standard_error", "reps"]

    def row(self) -> list[str]:
        return [self.method, str(self.n), repr(self.m_exponent), repr(self.coverage),
                repr(self.avg_length), repr(self.mc_standard_error), str(self.reps)]


@dataclass
class _DatasetResult:
    n: int
    rep: int
    zeta_hat: float | None
    bandwidth: float | None
    intervals: dict            # method pos -> (lower, upper) or "too_many_failures"
    draws: dict                # method pos -> BootstrapDraws, first dataset only


def _one_dataset(args) -> _DatasetResult:
    spec, n, rep = args
    data = sample_dataset(spec.scenario.with_n(n), dataset_seed(spec.seed, n, rep))
    try:
        base = fit_mple(data, spec.fit)
    except CPCoxError:
        base = None
    if base is None or not base.converged:
        log.warning("n=%d rep=%d: fit failed, dataset skipped", n, rep)
        return _DatasetResult(n, rep, None, None, {}, {})
    need_smooth = any(MODEL_BASED.get(m.method, (False,))[0] for m in spec.methods)
    need_model = any(m.method in MODEL_BASED for m in spec.methods)
    model = FittedModel.build(data, base, smooth=need_smooth) if need_model else None
    out = _DatasetResult(n, rep, base.theta_hat.zeta,
                         model.smooth_hazard.bandwidth if model and model.smooth_hazard else None,
                         {}, {})
    for k, m in enumerate(spec.methods):
        cfg = BootstrapConfig(m.method, m.replicates, m.m_exponent, m.fit,
                              bootstrap_seed(spec.seed, n, k, rep), m.confidence_level,
                              m.failure_cap, m.interval_rate, m.interval_form)
        try:
            draws = run_bootstrap(data, cfg, base=base, model=model)
        except TooManyFailures:
            out.intervals[k] = "too_many_failures"
            continue
        ci = percentile_ci(draws, base.theta_hat.zeta, cfg.interval_divisor(n),
                           spec.confidence_level, data.tau, cfg.interval_form)
        out.intervals[k] = (ci.lower, ci.upper)
        if rep == 0:
            out.draws[k] = draws
    return out


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9.]+", "_", label).strip("_")


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def km_curves(data: Dataset) -> dict[tuple, KMCurve]:
    """Kaplan-Meier survival of the observed times, one curve per covariate level."""
    if not data.is_constant:
        raise NonCategorical("KM curves need constant covariates")
    V, ids = data.levels
    return {tuple(v): kaplan_meier(data.time[ids == s], data.event[ids == s])
            for s, v in enumerate(V)}


def km_curve_csv(curve: KMCurve) -> str:
    rows = [[repr(0.0), repr(1.0)]] + [[repr(float(t)), repr(float(s))]
                                       for t, s in zip(curve.times, curve.surv)]
    return _csv_text(["time", "survival"], rows)


def _histogram_rows(label, n, values, bins):
    counts, edges = np.histogram(values, bins=bins)
    width = np.diff(edges)
    dens = counts / (counts.sum() * width) if counts.sum() else counts * 0.0
    return [[label, str(n), repr(float(a)), repr(float(b)), str(int(c)), repr(float(d))]
            for a, b, c, d in zip(edges[:-1], edges[1:], counts, dens)]


def run_experiment(spec: ExperimentSpec, out_dir=None, *, workers: int = 1,
                   progress: bool = False) -> tuple[list[CoverageRow], dict]:
    """Run the coverage study; returns the coverage rows and the file contents written."""
    tasks = [(spec, n, rep) for n in spec.sample_sizes for rep in range(spec.monte_carlo_reps)]
    results: list[_DatasetResult] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            for r in ex.map(_one_dataset, tasks, chunksize=1):
                results.append(r)
                if progress:
                    log.info("n=%d rep=%d done", r.n, r.rep)
    else:
        for t in tasks:
            results.append(_one_dataset(t))
            if progress:
                log.info("n=%d rep=%d done", t[1], t[2])
    results.sort(key=lambda r: (spec.sample_sizes.index(r.n), r.rep))
    zeta0 = spec.scenario.zeta0
    files: dict[str, str] = {}

    rows: list[CoverageRow] = []
    failed_cells = []
    iv_rows = []
    for n in spec.sample_sizes:
        cell_res = [r for r in results if r.n == n and r.zeta_hat is not None]
        for k, m in enumerate(spec.methods):
            label = m.label
            ivs = [(r.rep, r.intervals[k]) for r in cell_res]
            for rep, iv in ivs:
                if iv == "too_many_failures":
                    iv_rows.append([str(n), label, str(rep), "", "", "too_many_failures"])
                else:
                    iv_rows.append([str(n), label, str(rep), repr(iv[0]), repr(iv[1]),
                                    str(int(iv[0] <= zeta0 <= iv[1]))])
            if any(iv == "too_many_failures" for _, iv in ivs) or not ivs:
                failed_cells.append({"n": n, "method": label})
                continue
            lo = np.array([iv[0] for _, iv in ivs])
            hi = np.array([iv[1] for _, iv in ivs])
            cov = float(np.mean((lo <= zeta0) & (zeta0 <= hi)))
            reps = len(ivs)
            rows.append(CoverageRow(label, n, m.m_exponent, cov, float(np.mean(hi - lo)),
                                    math.sqrt(cov * (1 - cov) / reps), reps))
    files["coverage.csv"] = _csv_text(CoverageRow.header(), [r.row() for r in rows])
    files["intervals.csv"] = _csv_text(["n", "method", "replicate", "lower", "upper", "covered"],
                                       iv_rows)
    files["mc_deviation.csv"] = _csv_text(
        ["n", "replicate", "zeta_hat", "scaled_deviation", "bandwidth"],
        [[str(r.n), str(r.rep), repr(r.zeta_hat), repr(r.n * (r.zeta_hat - zeta0)),
          "" if r.bandwidth is None else repr(r.bandwidth)]
         for r in results if r.zeta_hat is not None])

    hist = []
    for n in spec.sample_sizes:
        dev = [r.n * (r.zeta_hat - zeta0) for r in results if r.n == n and r.zeta_hat is not None]
        if dev:
            hist += _histogram_rows("monte_carlo", n, dev, spec.histogram_bins)
        first = next((r for r in results if r.n == n and r.rep == 0), None)
        if first is None:
            continue
        for k, m in enumerate(spec.methods):
            if k in first.draws and len(first.draws[k]):
                d = first.draws[k]
                hist += _histogram_rows(m.label, n, d.scaled_zeta, spec.histogram_bins)
                files[f"draws/{_slug(m.label)}_n{n}.csv"] = d.to_csv()
    files["histograms.csv"] = _csv_text(["source", "n", "bin_left", "bin_right", "count", "density"],
                                        hist)

    km_data = sample_dataset(spec.scenario.with_n(spec.sample_sizes[0]),
                             dataset_seed(spec.seed, spec.sample_sizes[0], 0))
    for k, (lev, curve) in enumerate(km_curves(km_data).items()):
        files[f"km_level{k}.csv"] = km_curve_csv(curve)

    meta = {"failed_cells": failed_cells,
            "km_levels": [list(v) for v in km_curves(km_data)]}
    if out_dir is not None:
        write_files(out_dir, files)
    return rows, {"files": files, "meta": meta}


def write_files(out_dir, files: dict[str, str]) -> None:
    out = Path(out_dir)
    for name, text in files.items():
        path = out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")


def load_spec(path) -> ExperimentSpec:
    return ExperimentSpec.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
