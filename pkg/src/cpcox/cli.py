"""Command line interface.

Every subcommand writes its outputs plus ``manifest.json`` into ``--out``.
The manifest records the resolved arguments, library versions and a SHA-256
of every output, and ``cpcox replay MANIFEST --out DIR`` reruns it and
checks the outputs match byte for byte.

On failure a JSON object ``{"error": code, "message": ...}`` goes to stderr
and the exit status is 1 (2 for bad usage).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from ._backend import BACKEND
from .bootstrap import INTERVAL_FORMS, METHODS, BootstrapConfig, percentile_ci, run_bootstrap
from .data import dumps_dataset, read_dataset
from .errors import CPCoxError
from .estimators import FittedModel
from .harness import ExperimentSpec, km_curve_csv, load_spec, run_experiment, write_files
from .likelihood import ProfileFitConfig, fit_mple
from .limit_law import derive_limit_config, sample_limit_batch
from .rng import stream
from .simulate import ScenarioConfig, sample_dataset

log = logging.getLogger("cpcox")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _file_sha(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _versions() -> dict:
    return {"cpcox": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version(), "backend": BACKEND}


def _scenario(path, n=None) -> ScenarioConfig:
    cfg = ScenarioConfig.lagged_effect()
    if path:
        d = cfg.to_dict()
        d.update(json.loads(Path(path).read_text(encoding="utf-8")))
        cfg = ScenarioConfig.from_dict(d)
    return cfg.with_n(n) if n is not None else cfg


def _fit_cfg(window) -> ProfileFitConfig:
    return ProfileFitConfig(tuple(window) if window else None)


# -- subcommands -----------------------------------------------------------------
# each returns (files: dict[name -> text], details: dict, summary: dict)

def cmd_simulate(a):
    cfg = _scenario(a.config, a.n)
    data = sample_dataset(cfg, stream(a.seed))
    return ({"dataset.csv": dumps_dataset(data)}, {"scenario": cfg.to_dict()},
            {"n": data.n, "events": int(data.event.sum())})


def cmd_fit(a):
    data = read_dataset(a.data)
    fit = fit_mple(data, _fit_cfg(a.window))
    model = FittedModel.build(data, fit, grid_step=a.grid_step, bandwidth=a.bandwidth)
    files = {"fit.json": _dumps(fit.to_dict())}
    bz, sm = model.breslow, model.smooth_hazard
    files["breslow.csv"] = _csv_xy(bz.jump_times, bz.cumulative)
    files["smooth_hazard.csv"] = _csv_xy(sm.grid, sm.values)
    if model.censoring is not None:
        for k, curve in enumerate(model.censoring.curves):
            files[f"censoring_km_level{k}.csv"] = km_curve_csv(curve)
    details = {"bandwidth": sm.bandwidth, "fit_config": _fit_cfg(a.window).to_dict()}
    return files, details, {"theta_hat": fit.theta_hat.to_dict(), "loglik": fit.loglik,
                            "converged": fit.converged}


def _csv_xy(x, y) -> str:
    return "time,value\n" + "".join(f"{float(u)!r},{float(v)!r}\n" for u, v in zip(x, y))


def cmd_bootstrap(a):
    data = read_dataset(a.data)
    cfg = BootstrapConfig(a.method, a.replicates,
                          a.m_exponent if a.method == "m_out_of_n" else 1.0,
                          _fit_cfg(a.window), (a.seed,), a.level, interval_rate=a.interval_rate,
                          interval_form=a.interval_form)
    base = fit_mple(data, cfg.fit)
    draws = run_bootstrap(data, cfg, base=base, workers=a.threads)
    ci = percentile_ci(draws, base.theta_hat.zeta, cfg.interval_divisor(data.n), a.level, data.tau,
                       cfg.interval_form)
    interval = {"lower": ci.lower, "upper": ci.upper, "level": ci.level, "method": ci.method,
                "zeta_hat": base.theta_hat.zeta, "n": data.n, "m": draws.m,
                "failures": draws.failures, "replicates": cfg.replicates}
    return ({"draws.csv": draws.to_csv(), "interval.json": _dumps(interval)},
            {"bootstrap_config": cfg.to_dict()}, interval)


def cmd_limit_law(a):
    cfg = _scenario(a.config)
    lcfg = derive_limit_config(cfg, window=a.window)
    sample = sample_limit_batch(lcfg, a.draws, stream(a.seed))
    return ({"limit_config.json": _dumps(lcfg.to_dict()), "limit_draws.csv": sample.to_csv()},
            {"scenario": cfg.to_dict()},
            {"draws": a.draws, "median_phi_zeta": float(np.median(sample.phi_zeta))})


def cmd_experiment(a):
    spec = load_spec(a.config) if a.config else ExperimentSpec()
    d = spec.to_dict()
    if a.seed is not None:
        d["seed"] = a.seed
    if a.reps is not None:
        d["monte_carlo_reps"] = a.reps
    if a.sizes:
        d["sample_sizes"] = a.sizes
    if a.replicates is not None:
        for m in d["methods"]:
            m["replicates"] = a.replicates
    spec = ExperimentSpec.from_dict(d)
    rows, res = run_experiment(spec, workers=a.threads, progress=True)
    return (res["files"], {"spec": spec.to_dict(), **res["meta"]},
            {"coverage": [dict(zip(["method", "n", "coverage", "avg_length"],
                                   [r.method, r.n, r.coverage, r.avg_length])) for r in rows]})


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "bootstrap": cmd_bootstrap,
            "limit-law": cmd_limit_law, "experiment": cmd_experiment}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cpcox", description="Change-point Cox regression with bootstrap inference.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed_default=0):
        sp.add_argument("--seed", type=int, default=seed_default, help="root RNG seed")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--threads", type=int, default=1, help="worker processes")
        sp.add_argument("-v", "--verbose", action="store_true")

    sp = sub.add_parser("simulate", help="simulate a dataset")
    sp.add_argument("--config", help="JSON scenario overrides")
    sp.add_argument("--n", type=int, default=None)
    common(sp)

    sp = sub.add_parser("fit", help="fit the change-point model to a dataset CSV")
    sp.add_argument("data")
    sp.add_argument("--window", type=float, nargs=2, metavar=("LO", "HI"))
    sp.add_argument("--grid-step", type=float, default=None)
    sp.add_argument("--bandwidth", type=float, default=None)
    common(sp)

    sp = sub.add_parser("bootstrap", help="bootstrap interval for the change point")
    sp.add_argument("data")
    sp.add_argument("--method", choices=METHODS, default="smooth")
    sp.add_argument("--replicates", type=int, default=500)
    sp.add_argument("--m-exponent", type=float, default=0.8)
    sp.add_argument("--window", type=float, nargs=2, metavar=("LO", "HI"))
    sp.add_argument("--level", type=float, default=0.95)
    sp.add_argument("--interval-rate", choices=("n", "m"), default="n",
                    help="divide draw quantiles by n (default) or by m")
    sp.add_argument("--interval-form", choices=INTERVAL_FORMS, default="basic",
                    help="basic (reflect the draws about zeta_hat) or percentile")
    common(sp)

    sp = sub.add_parser("limit-law", help="sample the limiting law of the estimator")
    sp.add_argument("--config", help="JSON scenario overrides")
    sp.add_argument("--draws", type=int, default=100_000)
    sp.add_argument("--window", type=float, default=None)
    common(sp)

    sp = sub.add_parser("experiment", help="Monte-Carlo coverage study")
    sp.add_argument("--config", help="JSON experiment spec")
    sp.add_argument("--reps", type=int, default=None, help="override monte_carlo_reps")
    sp.add_argument("--sizes", type=int, nargs="+", default=None, help="override sample_sizes")
    sp.add_argument("--replicates", type=int, default=None, help="override bootstrap replicates")
    common(sp, seed_default=None)

    sp = sub.add_parser("replay", help="rerun a manifest and compare outputs")
    sp.add_argument("manifest")
    sp.add_argument("--out", required=True)
    sp.add_argument("--threads", type=int, default=None)
    sp.add_argument("-v", "--verbose", action="store_true")
    return p


def _resolved_args(a) -> dict:
    d = {k: v for k, v in vars(a).items() if k not in ("out", "verbose", "command")}
    if "data" in d:
        d["data"] = str(Path(d["data"]).resolve())
    if d.get("config"):
        d["config"] = str(Path(d["config"]).resolve())
    return d


def _inputs(a) -> dict:
    out = {}
    for key in ("data", "config"):
        path = getattr(a, key, None)
        if path:
            out[key] = {"path": str(Path(path).resolve()), "sha256": _file_sha(path)}
    return out


def run_command(a) -> dict:
    files, details, summary = COMMANDS[a.command](a)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    write_files(out, files)
    manifest = {"command": a.command, "args": _resolved_args(a), "inputs": _inputs(a),
                "versions": _versions(), "details": details,
                "outputs": {name: _sha256(text) for name, text in sorted(files.items())}}
    (out / "manifest.json").write_text(_dumps(manifest), encoding="utf-8")
    return summary


def replay(manifest_path, out, threads=None) -> dict:
    man = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    args = dict(man["args"])
    if threads is not None:
        args["threads"] = threads
    for key, info in man.get("inputs", {}).items():
        if _file_sha(info["path"]) != info["sha256"]:
            raise CPCoxError(f"input {info['path']} changed since the manifest was written")
    if man["versions"].get("backend") != BACKEND:
        log.warning("manifest was written with the %s backend, running %s",
                    man["versions"].get("backend"), BACKEND)
    ns = argparse.Namespace(command=man["command"], out=out, verbose=False, **args)
    run_command(ns)
    new = json.loads((Path(out) / "manifest.json").read_text(encoding="utf-8"))
    mismatched = sorted(k for k in set(man["outputs"]) | set(new["outputs"])
                        if man["outputs"].get(k) != new["outputs"].get(k))
    return {"replayed": man["command"], "identical": not mismatched, "mismatched": mismatched}


def main(argv=None) -> int:
    try:
        a = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        if a.command == "replay":
            res = replay(a.manifest, a.out, a.threads)
            print(json.dumps(res))
            if not res["identical"]:
                print(json.dumps({"error": "replay_mismatch", "message":
                                  f"outputs differ: {res['mismatched']}"}), file=sys.stderr)
                return 1
            return 0
        print(json.dumps(run_command(a), sort_keys=True))
        return 0
    except UsageError as e:
        print(json.dumps({"error": "usage", "message": str(e)}), file=sys.stderr)
        return 2
    except CPCoxError as e:
        print(json.dumps({"error": e.code, "message": str(e)}), file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError) as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
