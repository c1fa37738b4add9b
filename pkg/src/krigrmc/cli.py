"""Command-line front end.

    krigrmc price <config> [--out summary.json] [--diagnostics sites.csv] [--trace trace.csv]
    krigrmc export-design <config> --t <date> [--out design.csv]
    krigrmc bench <suite> [--out table.csv]
    krigrmc list

``<config>`` is a YAML file or the name of a bundled configuration.
Exit codes: 0 success, 2 invalid configuration, 3 surrogate fit failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import config as cfgmod
from .design import DomainInfeasibleError, write_design_csv
from .kriging import FitFailure
from .pricing import KrigingRMC
from .sequential import write_trace

SEED_ENV = "KRIGRMC_SEED"
EXIT_CONFIG = 2
EXIT_FIT = 3

SUITES = {
    "put1d": ["put1d"],
    "table1": ["put2d-lhs", "put2d-sobol", "put2d-sur"],
    "table2": ["maxcall3d-sobol"],
    "table3": ["put2d-sobol", "put2d-sqexp"],
    "table4": ["maxcall2d-poly", "maxcall2d-bw11"],
    "table4-5d": ["maxcall5d-poly", "maxcall5d-bw11"],
    "table5": ["sv5-lhs", "sv5-bw11"],
}

# published values the bench table is compared against
REFERENCE = {
    "put1d": 2.314, "put2d-lhs": 1.416, "put2d-sobol": 1.454, "put2d-sur": 1.450,
    "put2d-sqexp": 1.453, "maxcall3d-sobol": 11.177, "maxcall2d-poly": 7.93,
    "maxcall2d-bw11": 7.89, "maxcall5d-poly": 15.81, "maxcall5d-bw11": 16.32,
    "sv5-lhs": 16.06, "sv5-bw11": 16.03,
}

log = logging.getLogger("krigrmc")


def bundled_names():
    return sorted(p.name[:-5] for p in resources.files("krigrmc.configs").iterdir()
                  if p.name.endswith(".yaml"))


def resolve(name_or_path) -> Path | str:
    p = Path(name_or_path)
    if p.exists():
        return p
    if name_or_path in bundled_names():
        return resources.files("krigrmc.configs") / f"{name_or_path}.yaml"
    return p


def load_config(name_or_path, seed=None):
    src = resolve(name_or_path)
    try:
        text = Path(src).read_text() if isinstance(src, Path) else src.read_text()
    except OSError as exc:
        raise cfgmod.ConfigError(f"cannot read config: {exc.strerror}", None, str(name_or_path)) from None
    data = cfgmod.parse_text(text, str(name_or_path))
    if seed is None and os.environ.get(SEED_ENV):
        try:
            seed = int(os.environ[SEED_ENV])
        except ValueError:
            raise cfgmod.ConfigError(f"{SEED_ENV} must be an integer") from None
    return cfgmod.build(data, default_name=Path(str(name_or_path)).stem, seed=seed)


def _finite(v):
    return None if v is None or not math.isfinite(v) else float(v)


def run(rc, n_out=None, replications=None, diagnostics=None, trace=None):
    """Fit and value ``replications`` independent runs; returns the summary dict."""
    n_out = rc.n_out if n_out is None else n_out
    reps = rc.replications if replications is None else replications
    t0 = time.perf_counter()
    runs = []
    first = None
    for i in range(reps):
        est = rc.estimator.set_params(seed=rc.seed + i)
        est.fit(rc.problem)
        v, se = est.value(n_out=n_out, oos_seed=rc.oos_seed)
        entry = {"seed": rc.seed + i, "V": v, "SE": se,
                 "n_sims": int(est.n_sims_ + est.n_valuation_sims_)}
        if isinstance(est, KrigingRMC):
            entry["L_hat"] = {k: _finite(x) for k, x in est.result_.loss_series().items()}
        runs.append(entry)
        log.info("run %d/%d  V=%.4f  SE=%.4f", i + 1, reps, v, se)
        if first is None:
            first = est.result_ if isinstance(est, KrigingRMC) else None
            if first is not None and diagnostics:
                first.write_diagnostics(diagnostics)
            if first is not None and trace and any(r.trace for r in first.reports):
                write_trace(trace, first.reports)
    values = np.array([r["V"] for r in runs])
    return {
        "name": rc.name,
        "method": rc.raw["method"]["kind"],
        "seed": rc.seed,
        "oos_seed": rc.oos_seed,
        "n_out": n_out,
        "replications": reps,
        "V": float(values.mean()),
        "price": f"{values.mean():.4f}",
        "SE": float(np.mean([r["SE"] for r in runs])),
        "sd": float(values.std(ddof=1)) if reps > 1 else None,
        "L_hat": runs[0].get("L_hat", {}),
        "n_sims": runs[0]["n_sims"],
        "runs": runs,
        "wall_time": time.perf_counter() - t0,
    }


def cmd_price(args):
    rc = load_config(args.config, args.seed)
    summary = run(rc, args.n_out, args.replications, args.diagnostics, args.trace)
    text = json.dumps(summary, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    sd = f"  sd {summary['sd']:.4f}" if summary["sd"] is not None else ""
    print(f"{summary['name']}: V = {summary['price']}  (SE {summary['SE']:.4f}){sd}"
          f"  sims {summary['n_sims']}  {summary['wall_time']:.1f}s")
    return 0


def cmd_export(args):
    rc = load_config(args.config, args.seed)
    est = rc.estimator
    if not isinstance(est, KrigingRMC):
        raise cfgmod.ConfigError("export-design needs a kriging method block")
    try:
        k = rc.problem.grid.index_of(args.t)
    except ValueError as exc:
        raise cfgmod.ConfigError(str(exc)) from None
    if not 1 <= k <= rc.problem.grid.n_exercise - 1:
        raise cfgmod.ConfigError("--t must be an interior exercise date")
    est.fit(rc.problem, k_min=k)
    rep = next(r for r in est.reports_ if math.isclose(r.t, rc.problem.grid.time(k)))
    out = args.out or sys.stdout
    if out is sys.stdout:
        _write_design(sys.stdout, rep)
    else:
        write_design_csv(out, rep.sites, rep.means, rep.variances, rep.reps)
    return 0


def _write_design(fh, rep):
    d = rep.sites.shape[1]
    w = csv.writer(fh)
    w.writerow([f"x{j + 1}" for j in range(d)] + ["ybar", "var", "M"])
    for i in range(rep.sites.shape[0]):
        w.writerow([repr(float(v)) for v in rep.sites[i]]
                   + [repr(float(rep.means[i])), repr(float(rep.variances[i])), int(rep.reps[i])])


def cmd_bench(args):
    if args.suite not in SUITES:
        raise cfgmod.ConfigError(f"unknown suite {args.suite!r}; choose from {sorted(SUITES)}")
    rows = []
    for name in SUITES[args.suite]:
        rc = load_config(name, args.seed)
        s = run(rc, args.n_out, args.replications)
        rows.append([name, s["method"], s["price"], f"{s['SE']:.4f}",
                     "" if s["sd"] is None else f"{s['sd']:.4f}", s["replications"],
                     REFERENCE.get(name, ""), s["n_sims"], f"{s['wall_time']:.1f}"])
        print(f"{name:16s} V = {s['price']}  ref {REFERENCE.get(name, '-')}", flush=True)
    header = ["config", "method", "V", "SE", "sd", "runs", "reference", "n_sims", "wall_time"]
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def cmd_list(args):
    for name in bundled_names():
        print(name)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="krigrmc", description="Kriging regression Monte Carlo for Bermudan options")
    p.add_argument("--threads", type=int, default=None, help="cap on BLAS/OpenMP threads (default: all cores)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None, help=f"master seed (default: config, then ${SEED_ENV})")
        sp.add_argument("--n-out", type=int, default=None, help="out-of-sample paths")
        sp.add_argument("--replications", type=int, default=None)

    sp = sub.add_parser("price", help="fit a policy and value it out of sample")
    sp.add_argument("config")
    common(sp)
    sp.add_argument("--out", help="run-summary JSON path")
    sp.add_argument("--diagnostics", help="per-date, per-site CSV of the first run")
    sp.add_argument("--trace", help="sequential-design trace CSV of the first run")
    sp.set_defaults(func=cmd_price)

    sp = sub.add_parser("export-design", help="write the macro-design and batch stats at one date")
    sp.add_argument("config")
    sp.add_argument("--t", type=float, required=True, help="exercise date")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out", help="CSV path (default: stdout)")
    sp.set_defaults(func=cmd_export)

    sp = sub.add_parser("bench", help="run a bundled suite and emit a comparison table")
    sp.add_argument("suite", help=", ".join(sorted(SUITES)))
    common(sp)
    sp.add_argument("--out", help="CSV path (default: stdout)")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("list", help="list bundled configurations")
    sp.set_defaults(func=cmd_list)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if getattr(args, "replications", None) is not None and args.replications < 1:
        print("error: --replications must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except (cfgmod.ConfigError, DomainInfeasibleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FitFailure as exc:
        print(f"error: surrogate fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT


if __name__ == "__main__":
    sys.exit(main())
