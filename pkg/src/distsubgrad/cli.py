"""Command-line front end: ``run``, ``bounds``, ``sweep`` and ``check-topology``.

Exit codes: 0 success, 1 configuration error, 2 failed check.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import (BoundError, alpha_term, bound_inputs, bound_report, bound_vs_empirical, disagreement_bound,
                     function_value_bound)
from .config import (SWEEPABLE, ConfigError, RunConfigFile, build_sim, build_topology, build_weights,
                     load_config, with_override)
from .engine import METRICS, AssumptionViolation, SimulationError, monte_carlo, write_csv
from .mixing import MixingError, verify_geometric_rate
from .problem import solve_reference

OUT_DIR_ENV = "DISTSUBGRAD_OUT_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_CHECK = 0, 1, 2

log = logging.getLogger("distsubgrad")


def _finite(x):
    """JSON-safe scalars: non-finite floats become strings."""
    if isinstance(x, dict):
        return {k: _finite(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_finite(v) for v in x]
    if isinstance(x, np.ndarray):
        return _finite(x.tolist())
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        x = x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


def _dump(obj) -> str:
    return json.dumps(_finite(obj), indent=2, sort_keys=True)


def _load(args) -> RunConfigFile:
    cfg = load_config(args.config, args.set or [])
    if getattr(args, "seed", None) is not None:
        cfg = with_override(cfg, "engine.seed", args.seed)
    if getattr(args, "replicas", None) is not None:
        cfg = with_override(cfg, "engine.replicas", args.replicas)
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out_dir or os.environ.get(OUT_DIR_ENV) or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _reference(sim, cfg: RunConfigFile):
    """``(f*, x*)`` from the config, else from the grid solver on bounded sets of dimension <= 3."""
    p = sim.problem
    if p.f_star is not None and p.x_star is not None:
        return p.f_star, p.x_star
    if p.constraint.bounded and p.dim <= 3:
        f, x = solve_reference(p)
        return (p.f_star if p.f_star is not None else f), (p.x_star if p.x_star is not None else x)
    return p.f_star, p.x_star


def _report(cfg: RunConfigFile, sim, trace=None, eps=None, ts=None):
    f_star, x_star = _reference(sim, cfg)
    inp = bound_inputs(sim, x_star, trace, eta=cfg.weights.eta)
    if ts is None:
        ts = cfg.checks.finite_time or sorted({t for t in (10, 100, 1000, sim.horizon) if t <= sim.horizon})
    return bound_report(inp, ts=ts, eps=eps), f_star


# ---------------------------------------------------------------- run


def _write_trace(agg, cfg: RunConfigFile, out: Path, fmt: str) -> Path:
    metrics = [m for m in METRICS if m in cfg.output.metrics]
    if fmt == "csv":
        path = out / f"{cfg.output.prefix}_trace.csv"
        write_csv(agg, path, metrics)
        return path
    path = out / f"{cfg.output.prefix}_trace.json"
    body = {"k": agg.ks, "alpha": agg.alpha}
    for name in metrics:
        body[name] = agg.mean[name]
        body[f"{name}_se"] = agg.se[name]
    path.write_text(_dump(body) + "\n", encoding="utf-8")
    return path


def summarize(cfg: RunConfigFile, sim, agg, report=None, f_star=None) -> dict:
    tr = agg.trace
    final = {
        "w": tr.w_final.mean(axis=0),
        "disagreement": agg.mean["disagreement"][-1],
        "f_w": agg.mean["f_w"][-1],
        "f_z": agg.mean["f_z"][-1],
        "f_y": agg.mean["f_y"][-1],
    }
    flags = {"consensus": bool(np.max(final["disagreement"]) < 1e-3)}
    if f_star is not None:
        flags["optimal"] = bool(abs(final["f_y"] - f_star) < 1e-3)
    out = {
        "version": __version__,
        "config_digest": cfg.digest(),
        "config": cfg.model_dump(mode="json"),
        "seed": cfg.engine.seed,
        "replicas": agg.n_replicas,
        "horizon": sim.horizon,
        "final": final,
        "flags": flags,
        "checks": {},
        "wall_time": tr.wall_time,
    }
    if cfg.checks.displacement:
        out["checks"]["displacement_violations"] = tr.displacement_violations
    if report is not None:
        out["bounds"] = report.to_dict()
        out["checks"]["bounds_passed"] = report.passed
    return out


def cmd_run(args) -> int:
    cfg = _load(args)
    sim = build_sim(cfg)
    out = _out_dir(args)
    try:
        agg = monte_carlo(sim, cfg.engine.replicas)
    except AssumptionViolation as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        for k in exc.windows[:20]:
            print(f"violating window: k={k}..{k + sim.weights.topology.Q}", file=sys.stderr)
        return EXIT_CHECK
    except MixingError as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except SimulationError as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    report = f_star = None
    if cfg.checks.bounds:
        report, f_star = _report(cfg, sim, agg.trace, eps=cfg.checks.eps)
        bound_vs_empirical(report, agg, f_star, tail=cfg.checks.tail)
    else:
        f_star = sim.problem.f_star
    summary = summarize(cfg, sim, agg, report, f_star)
    trace_path = _write_trace(agg, cfg, out, args.format or cfg.output.format)
    summary_path = out / f"{cfg.output.prefix}_summary.json"
    summary_path.write_text(_dump(summary) + "\n", encoding="utf-8")
    print(f"trace: {trace_path}")
    print(f"summary: {summary_path}")
    failed = []
    if cfg.checks.displacement and agg.trace.displacement_violations:
        failed.append(f"{agg.trace.displacement_violations} displacement violations")
    if report is not None and report.passed is False:
        failed += [f"{e.name}{'' if e.t is None else f'@t={e.t}'} margin {e.margin:.4g}"
                   for e in report.entries if e.verdict is False]
    if failed:
        print("check failed: " + "; ".join(failed), file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


# ---------------------------------------------------------------- bounds


def cmd_bounds(args) -> int:
    cfg = _load(args)
    sim = build_sim(cfg)
    try:
        report, _ = _report(cfg, sim, eps=args.eps, ts=args.t or None)
    except BoundError as exc:
        raise ConfigError("problem.set", str(exc)) from None
    text = report.to_json()
    print(text)
    if args.out_dir:
        (_out_dir(args) / f"{cfg.output.prefix}_bounds.json").write_text(text + "\n", encoding="utf-8")
    return EXIT_OK


# ---------------------------------------------------------------- sweep


SWEEP_COLUMNS = ["parameter", "value", "disagreement_bound", "function_value_bound", "alpha_term",
                 "tail_disagreement", "tail_f_z_excess"]


def sweep_rows(cfg: RunConfigFile, parameter: str, values, simulate: bool = True) -> list[dict]:
    if parameter not in SWEEPABLE:
        raise ConfigError("sweep", f"{parameter!r} is not sweepable; choose one of {sorted(SWEEPABLE)}")
    rows = []
    for value in values:
        point = with_override(cfg, SWEEPABLE[parameter], value)
        if parameter == "alpha" and point.stepsize.kind != "constant":
            point = with_override(point, "stepsize.kind", "constant")
        if parameter == "m":
            point = with_override(point, "engine.initial", None)
        sim = build_sim(point)
        _, x_star = _reference(sim, point)
        inp = bound_inputs(sim, x_star, eta=point.weights.eta)
        row = {"parameter": parameter, "value": value, "disagreement_bound": disagreement_bound(inp),
               "function_value_bound": function_value_bound(inp), "alpha_term": alpha_term(inp),
               "tail_disagreement": math.nan, "tail_f_z_excess": math.nan}
        if simulate:
            agg = monte_carlo(sim, point.engine.replicas)
            mask = agg.tail_mask(point.checks.tail) & (agg.ks >= 1)
            row["tail_disagreement"] = float(np.max(agg.mean["disagreement"][mask].mean(axis=0)))
            f_star, _ = _reference(sim, point)
            if f_star is not None:
                row["tail_f_z_excess"] = float(np.max(agg.mean["f_z"][mask].mean(axis=0)) - f_star)
        rows.append(row)
    return rows


def _parse_values(text: str) -> list:
    import yaml
    items = [t.strip() for t in text.split(",") if t.strip()]
    return [yaml.safe_load(t) for t in items]


def cmd_sweep(args) -> int:
    cfg = _load(args)
    rows = sweep_rows(cfg, args.parameter, _parse_values(args.values), simulate=not args.bounds_only)
    out = _out_dir(args)
    path = out / f"{cfg.output.prefix}_sweep_{args.parameter}.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})
    print(path.read_text(encoding="utf-8"), end="")
    return EXIT_OK


# ---------------------------------------------------------------- check-topology


def cmd_check_topology(args) -> int:
    cfg = _load(args)
    topo = build_topology(cfg.topology)
    horizon = args.horizon or cfg.engine.horizon
    bad = topo.verify(max(horizon, topo.Q))
    result = {"m": topo.m, "Q": topo.Q, "kind": topo.kind, "horizon": horizon, "violating_windows": bad[:100],
              "n_violations": len(bad)}
    try:
        weights = build_weights(cfg, topo)
        weights.validate(horizon)
        result["eta"] = weights.eta(horizon)
    except (ConfigError, MixingError) as exc:
        result["weights_error"] = str(exc)
    if not bad and "weights_error" not in result and args.rate and topo.m > 1:
        rep = verify_geometric_rate(weights, 0, min(horizon, 1000))
        result["geometric_rate"] = {"theta": rep.theta, "beta": rep.beta, "worst_ratio": rep.worst_ratio,
                                    "violations": rep.violations[:100]}
        if rep.violations:
            result["rate_violated"] = True
    print(_dump(result))
    for k in bad[:20]:
        print(f"violating window: k={k}..{k + topo.Q}", file=sys.stderr)
    if bad or "weights_error" in result or result.get("rate_violated"):
        return EXIT_CHECK
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML run configuration")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config entry by dotted path (repeatable)")
    common.add_argument("--seed", type=int, help="override engine.seed")
    common.add_argument("--replicas", type=int, help="override engine.replicas")
    common.add_argument("--out-dir", help=f"output directory (default ${OUT_DIR_ENV} or ./out)")
    common.add_argument("--format", choices=("csv", "json"), help="trace format (default from config)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="distsubgrad", description="Simulate distributed projected stochastic subgradient methods and evaluate their bounds.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="simulate and write trace + summary")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bounds", parents=[common], help="evaluate closed-form bounds (no simulation)")
    p.add_argument("--eps", type=float, help="target accuracy for the stopping rule")
    p.add_argument("--t", type=int, action="append", help="finite-time bound sample (repeatable)")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("sweep", parents=[common], help="one summary row per parameter value")
    p.add_argument("--parameter", required=True, help=f"one of {', '.join(SWEEPABLE)}")
    p.add_argument("--values", default="", help="comma-separated values")
    p.add_argument("--bounds-only", action="store_true", help="skip simulation, tabulate bounds only")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check-topology", parents=[common], help="verify Q-window connectivity and weights")
    p.add_argument("--horizon", type=int, help="window horizon (default engine.horizon)")
    p.add_argument("--rate", action="store_true", help="also verify the geometric mixing rate")
    p.set_defaults(func=cmd_check_topology)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
