"""Command line front end.

    flowprob estimate  --scenario S [--methods srd,kde,mc] [-N 100000] [--seed 0]
    flowprob optimize  --scenario S [--alpha 0.75] [--inlet]
    flowprob compare   --scenario S --runs 8
    flowprob reproduce [example1|example2|example3|gaslib11|water|all]

Exit codes: 0 success, 1 a reproduce tolerance was violated, 2 configuration
error, 3 solver error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from pathlib import Path

METHODS = ("srd", "kde", "mc")
TABLES = ("example1", "example2", "gaslib11", "example3", "water")
EXIT_GOLDEN, EXIT_CONFIG, EXIT_SOLVER = 1, 2, 3


class ConfigError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="builtin name or path to a scenario JSON file")
    common.add_argument("-N", type=int, default=None, help="sample count (default depends on the command)")
    common.add_argument("--seed", type=int, default=None, help="RNG seed (falls back to FLOWPROB_SEED, then 0)")
    common.add_argument("--alpha", type=float, default=None, help="probability level")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--threads", type=int, default=None, help="cap on BLAS/OpenMP worker threads")
    common.add_argument("--out", default=None, help="write the report here instead of stdout")
    common.add_argument("--plots", default=None, metavar="DIR", help="also render PNG figures (with CSV data)")
    common.add_argument("--no-timing", action="store_true", help="omit wall times for byte-identical output")

    p = argparse.ArgumentParser(prog="flowprob", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    est = sub.add_parser("estimate", parents=[common], help="feasibility probability per method")
    est.add_argument("--methods", default=None, help="comma list from srd,kde,mc (default: all that apply)")
    est.add_argument("--t-star", type=float, default=None, help="fixed observation time (transport scenarios)")
    opt = sub.add_parser("optimize", parents=[common], help="chance-constrained bounds")
    opt.add_argument("--inlet", action="store_true", help="optimize the supply pressure instead of upper bounds")
    cmp_ = sub.add_parser("compare", parents=[common], help="repeated runs with Student-t intervals")
    cmp_.add_argument("--methods", default="kde,mc")
    cmp_.add_argument("--runs", type=int, default=8)
    cmp_.add_argument("--t-star", type=float, default=None)
    rep = sub.add_parser("reproduce", parents=[common], help="rerun reference pipelines against golden values")
    rep.add_argument("table", nargs="?", default="all", choices=TABLES + ("all",))
    return p


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("FLOWPROB_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"FLOWPROB_SEED must be an integer, got {env!r}") from None


def _methods(text: str) -> list[str]:
    out = [m.strip().lower() for m in text.split(",") if m.strip()]
    if not out:
        raise ConfigError("select at least one method")
    bad = [m for m in out if m not in METHODS]
    if bad:
        raise ConfigError(f"unknown method(s) {bad}; choose from {list(METHODS)}")
    return out


def _scenario(args):
    from .scenarios import load_scenario

    if not args.scenario:
        raise ConfigError("--scenario is required")
    return load_scenario(args.scenario)


def _record(name, est, ms, timing: bool) -> dict:
    rec = {"scenario": name, "method": est.method, "N": est.n, "seed": est.seed, "value": est.value,
           "ci": list(est.ci) if est.ci is not None else None}
    rec["runtime_ms"] = round(ms, 3) if timing else None
    return rec


def _emit(records: list[dict], args) -> None:
    if args.format == "json":
        text = json.dumps(records, indent=2) + "\n"
    else:
        keys = []
        for r in records:
            keys += [k for k in r if k not in keys]
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in records:
            w.writerow({k: json.dumps(v) if isinstance(v, (list, dict)) else v for k, v in r.items()})
        text = buf.getvalue()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _check_n(n, default):
    n = default if n is None else n
    if n < 1:
        raise ConfigError("-N must be at least 1")
    return n


def _plots_estimate(sc, records, args, seed):
    from . import plotting

    out = Path(args.plots)
    plotting.estimate_bars(records, out, f"{sc.name}_estimates")
    n_plot = min(records[0]["N"] or 1000, 20000)
    if sc.kind == "stationary":
        _, p, valid = sc.samples(n_plot, seed)
        plotting.marginal_densities(p[valid], sc.observe, sc.lower, sc.upper, out, f"{sc.name}_pressures")
    else:
        tr = sc.traces(20, seed)
        plotting.trace_samples(sc.grid, tr, sc.observe, sc.lower, sc.upper, out, f"{sc.name}_traces",
                               sc.deterministic_traces())


def cmd_estimate(args) -> list[dict]:
    sc = _scenario(args)
    seed = _seed(args)
    n = _check_n(args.N, 100000)
    if args.methods is None:
        usable = sc.srd_capable or (sc.kind == "transport" and args.t_star is not None)
        methods = list(METHODS) if usable else ["kde", "mc"]
    else:
        methods = _methods(args.methods)
    records = []
    for m in methods:
        t0 = time.perf_counter()
        if sc.kind == "transport":
            est = sc.estimate(m, n, seed, t_star=args.t_star)
        else:
            if args.t_star is not None:
                raise ConfigError("--t-star applies to transport scenarios only")
            est = sc.estimate(m, n, seed)
        records.append(_record(sc.name, est, 1e3 * (time.perf_counter() - t0), not args.no_timing))
    if args.plots:
        _plots_estimate(sc, records, args, seed)
    return records


def cmd_compare(args) -> list[dict]:
    from .montecarlo import runs_interval

    sc = _scenario(args)
    seed = _seed(args)
    n = _check_n(args.N, 100000)
    if args.runs < 2:
        raise ConfigError("--runs must be at least 2")
    records = []
    for m in _methods(args.methods):
        t0 = time.perf_counter()
        vals = []
        for k in range(args.runs):
            kw = {"t_star": args.t_star} if sc.kind == "transport" else {}
            vals.append(sc.estimate(m, n, seed + k, **kw).value)
        lo, hi = runs_interval(vals)
        ms = 1e3 * (time.perf_counter() - t0)
        records.append({"scenario": sc.name, "method": m, "N": n, "seed": seed, "runs": args.runs,
                        "value": sum(vals) / len(vals), "ci": [lo, hi], "values": vals,
                        "runtime_ms": round(ms, 3) if not args.no_timing else None})
    if args.plots:
        from . import plotting

        plotting.estimate_bars(records, Path(args.plots), f"{sc.name}_compare")
    return records


def cmd_optimize(args) -> list[dict]:
    sc = _scenario(args)
    seed = _seed(args)
    n = _check_n(args.N, 100000)
    alpha = sc.alpha if args.alpha is None else args.alpha
    if not 0 < alpha < 1:
        raise ConfigError("--alpha must lie in (0, 1)")
    t0 = time.perf_counter()
    if args.inlet:
        if sc.kind != "stationary":
            raise ConfigError("--inlet applies to stationary scenarios only")
        res = sc.optimize_inlet(n, seed, alpha)
        det = None
        kind = "inlet_pressure"
    else:
        res = sc.optimize(n, seed, alpha)
        det = sc.deterministic().tolist()
        kind = "upper_contamination_bounds" if sc.kind == "transport" else "upper_pressure_bounds"
    ms = 1e3 * (time.perf_counter() - t0)
    rec = {"scenario": sc.name, "method": "kde", "N": n, "seed": seed, "alpha": alpha, "kind": kind,
           "nodes": list(sc.observe), "deterministic": det, "decision": res.x.tolist(),
           "value": res.estimate.value, "ci": None, "objective": res.objective, "mu": res.kkt.mu,
           "kkt": {"stationarity": res.kkt.stationarity, "feasibility": res.kkt.feasibility,
                   "complementarity": res.kkt.complementarity},
           "excluded_samples": res.excluded, "runtime_ms": round(ms, 3) if not args.no_timing else None}
    if args.plots and not args.inlet:
        from . import plotting

        import numpy as np

        out = Path(args.plots)
        marks = {"deterministic": det, "optimal": res.x.tolist()}
        if sc.kind == "stationary":
            _, p, valid = sc.samples(min(n, 20000), seed)
            plotting.marginal_densities(p[valid], sc.observe, sc.lower, res.x, out, f"{sc.name}_optimum", marks)
        else:
            _, hi = sc.min_max(min(n, 20000), seed)
            plotting.marginal_densities(hi, sc.observe, sc.lower, np.asarray(res.x), out,
                                        f"{sc.name}_optimum_maxima", marks)
    return [rec]


# -- golden values ------------------------------------------------------------------

def _golden_checks(table: str, n_override: int | None, seed: int):
    """Yield (check name, value, expected, tolerance description, passed)."""
    import numpy as np

    from .scenarios import load_scenario

    def n_or(default):
        return default if n_override is None else n_override

    sc = load_scenario(table)
    if table == "example1":
        n = n_or(50000)
        v = sc.estimate("srd", 2, seed).value
        yield "srd", v, 0.8275, "+-0.0005", abs(v - 0.8275) <= 5e-4
        for m in ("kde", "mc"):
            v = sc.estimate(m, n, seed).value
            yield m, v, [0.820, 0.835], "range", 0.820 <= v <= 0.835
    elif table == "example2":
        v = sc.estimate("srd", n_or(10000), seed).value
        yield "srd", v, 0.7495, "+-0.002", abs(v - 0.7495) <= 2e-3
    elif table == "gaslib11":
        n = n_or(100000)
        det = sc.deterministic()
        ref = np.array([46.10, 52.04, 51.08])
        yield "deterministic", det.tolist(), ref.tolist(), "+-0.05", bool(np.all(np.abs(det - ref) <= 0.05))
        for m in ("kde", "mc"):
            v = sc.estimate(m, n, seed).value
            yield m, v, [0.349, 0.362], "range", 0.349 <= v <= 0.362
        res = sc.optimize(n, seed)
        ref = np.array([47.51, 53.33, 52.44])
        ok = bool(np.all(np.abs(res.x - ref) <= 0.05)) and res.kkt.max_residual <= 1e-5
        yield "optimum", res.x.tolist(), ref.tolist(), "+-0.05, KKT<=1e-5", ok
    elif table == "example3":
        n = n_or(100000)
        kde = sc.estimate("kde", n, seed).value
        mc = sc.estimate("mc", n, seed).value
        yield "kde", kde, [0.740, 0.746], "range", 0.740 <= kde <= 0.746
        yield "mc", mc, [0.740, 0.746], "range", 0.740 <= mc <= 0.746
        yield "gap", abs(kde - mc), 0.0, "<=0.002", abs(kde - mc) <= 0.002
    elif table == "water":
        n = n_or(100000)
        det = sc.deterministic()
        ref = np.array([5.78, 6.39, 2.51])
        yield "deterministic", det.tolist(), ref.tolist(), "+-0.02", bool(np.all(np.abs(det - ref) <= 0.02))
        for m in ("kde", "mc"):
            v = sc.estimate(m, n, seed).value
            yield m, v, [0.373, 0.380], "range", 0.373 <= v <= 0.380
        res = sc.optimize(n, seed)
        ref = np.array([5.936, 6.560, 2.576])
        ok = bool(np.all(np.abs(res.x - ref) <= 0.01)) and res.kkt.max_residual <= 1e-5
        yield "optimum", res.x.tolist(), ref.tolist(), "+-0.01, KKT<=1e-5", ok


def cmd_reproduce(args) -> tuple[list[dict], bool]:
    seed = _seed(args)
    tables = TABLES if args.table == "all" else (args.table,)
    records, all_ok = [], True
    for table in tables:
        t0 = time.perf_counter()
        for name, value, expected, tol, ok in _golden_checks(table, args.N, seed):
            all_ok &= bool(ok)
            records.append({"table": table, "check": name, "value": value, "expected": expected,
                            "tolerance": tol, "pass": bool(ok), "seed": seed})
        if not args.no_timing:
            records[-1]["runtime_ms"] = round(1e3 * (time.perf_counter() - t0), 3)
    return records, all_ok


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            parser.error("--threads must be positive")
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    from .errors import FlowProbError, SchemaError, TopologyError
    from .scenarios import CapabilityError

    try:
        if args.command == "estimate":
            records, ok = cmd_estimate(args), True
        elif args.command == "compare":
            records, ok = cmd_compare(args), True
        elif args.command == "optimize":
            records, ok = cmd_optimize(args), True
        else:
            records, ok = cmd_reproduce(args)
    except (ConfigError, CapabilityError, SchemaError, TopologyError, FileNotFoundError, ValueError) as exc:
        print(f"flowprob: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FlowProbError as exc:
        print(f"flowprob: solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    _emit(records, args)
    return 0 if ok else EXIT_GOLDEN


if __name__ == "__main__":
    sys.exit(main())
