"""Command-line front end.

Subcommands load a model plus an instance, run one stage of the pipeline,
and emit JSON (or CSV for bench). Numeric report fields are rounded to nine
significant digits so reruns with the same seed are byte-identical.

Exit codes for verify: 0 safe, 1 unsafe, 2 gap or timeout, 3 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import bab, complementarity as cc, oracle, toynets
from .bounds import EMPTY_SPLITS, ibp_bounds, optimize_relaxation
from .network import (
    NetworkFormatError,
    load_instance,
    load_network,
    save_instance,
    save_network,
)

EXIT_SAFE = 0
EXIT_UNSAFE = 1
EXIT_GAP = 2
EXIT_ERROR = 3

TIMEOUT_ENV = "RELUVERIFY_TIMEOUT"


def _round_sig(value, digits=9):
    if isinstance(value, float):
        if not math.isfinite(value):
            return value
        return float(f"{value:.{digits}g}")
    if isinstance(value, dict):
        return {k: _round_sig(v, digits) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_round_sig(v, digits) for v in value]
    return value


class _JsonEncoder(json.JSONEncoder):
    def default(self, o):
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, float) and not math.isfinite(o):
            return str(o)
        return super().default(o)


def _emit(report: dict, output: str | None):
    text = json.dumps(_round_sig(_sanitize(report)), indent=2, cls=_JsonEncoder)
    if output:
        with open(output, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _sanitize(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None if math.isnan(value) else ("inf" if value > 0 else "-inf")
    if isinstance(value, dict):
        return {k: _sanitize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_sanitize(v) for v in value]
    if isinstance(value, np.ndarray):
        return _sanitize(value.tolist())
    if isinstance(value, (np.floating, np.integer)):
        return _sanitize(value.item())
    return value


def _load(args):
    network = load_network(args.model)
    instance = load_instance(args.instance, network)
    overrides = {}
    if getattr(args, "epsilon", None) is not None:
        overrides["gap_tol"] = args.epsilon
    if getattr(args, "t_max", None) is not None:
        overrides["max_rounds"] = args.t_max
    if getattr(args, "tau_max", None) not in (None, "auto"):
        overrides["resolve_period"] = int(args.tau_max)
    if getattr(args, "align_weight", None) is not None:
        overrides["align_weight"] = args.align_weight
    if getattr(args, "eps_comp", None) is not None:
        overrides["comp_tol"] = args.eps_comp
    if overrides:
        from dataclasses import replace

        instance = replace(instance, **overrides)
    return network, instance


def cmd_verify(args) -> int:
    network, instance = _load(args)
    timeout = args.timeout
    if timeout is None:
        timeout = float(os.environ.get(TIMEOUT_ENV, bab.DEFAULT_TIMEOUT))
    cert = bab.verify(
        instance,
        seed=args.seed,
        timeout=timeout,
        auto_resolve_period=getattr(args, "tau_max", None) == "auto",
    )
    _emit(cert.to_dict(), args.output)
    return {bab.SAFE: EXIT_SAFE, bab.UNSAFE: EXIT_UNSAFE, bab.GAP: EXIT_GAP}[cert.verdict]


def cmd_bounds(args) -> int:
    network, instance = _load(args)
    t0 = time.perf_counter()
    bounds = ibp_bounds(network, instance.x0, instance.delta, instance.norm)
    root_lb = optimize_relaxation(
        network, instance.spec, instance, EMPTY_SPLITS, bounds=bounds
    )
    report = {
        "lower_bound": root_lb,
        "layers": [
            {"lower": lo.tolist(), "upper": up.tolist()}
            for lo, up in zip(bounds.lower, bounds.upper)
        ],
        "unstable": sorted([list(key) for key in bounds.unstable]),
        "time_s": time.perf_counter() - t0,
    }
    _emit(report, args.output)
    return EXIT_SAFE


def cmd_upper(args) -> int:
    network, instance = _load(args)
    t0 = time.perf_counter()
    bounds = ibp_bounds(network, instance.x0, instance.delta, instance.norm)
    problem = cc.build_problem(network, instance.spec, instance, bounds, EMPTY_SPLITS)
    sol = cc.solve(problem, seed=args.seed)
    report = {
        "objective": sol.objective,
        "x": sol.x.tolist(),
        "status": sol.status,
        "kkt_residual": sol.kkt_residual,
        "ipm_iterations": sol.ipm_iterations,
        "pattern": {str(k): int(v) for k, v in sorted(sol.pattern.items())},
        "undecided": [list(k) for k in sol.undecided],
        "time_s": time.perf_counter() - t0,
    }
    if args.dump_problem:
        report["problem"] = problem.debug_dict()
    _emit(report, args.output)
    return EXIT_SAFE


def cmd_oracle(args) -> int:
    network, instance = _load(args)
    t0 = time.perf_counter()
    try:
        f_star, x_star, regions = oracle.global_min(
            network, instance.spec, instance, pattern_cap=args.pattern_cap
        )
    except oracle.PatternCapError as exc:
        _emit({"error": str(exc), "unstable": exc.count}, args.output)
        return EXIT_ERROR
    report = {
        "f_star": f_star,
        "x_star": x_star.tolist(),
        "regions_solved": regions,
        "time_s": time.perf_counter() - t0,
    }
    _emit(report, args.output)
    return EXIT_SAFE


def _bench_case(task):
    model_path, instance_path, seed, pattern_cap, epsilon = task
    network = load_network(model_path)
    instance = load_instance(instance_path, network)
    if epsilon is not None:
        from dataclasses import replace

        instance = replace(instance, gap_tol=epsilon)
    name = os.path.splitext(os.path.basename(instance_path))[0]

    t0 = time.perf_counter()
    bounds = ibp_bounds(network, instance.x0, instance.delta, instance.norm)
    lb_root = optimize_relaxation(
        network, instance.spec, instance, EMPTY_SPLITS, bounds=bounds
    )
    time_lb = time.perf_counter() - t0

    t0 = time.perf_counter()
    problem = cc.build_problem(network, instance.spec, instance, bounds, EMPTY_SPLITS)
    sol = cc.solve(problem, seed=seed)
    ub_nlp = sol.objective if sol.feasible else math.inf
    if sol.feasible:
        # same polish step the verifier applies to its incumbents
        from .network import spec_value

        _, x_pol = cc.region_lp_polish(
            network, instance.spec, instance, sol.pattern, bounds=bounds
        )
        if x_pol is not None:
            ub_nlp = min(ub_nlp, spec_value(network, instance.spec, x_pol))
    time_ub = time.perf_counter() - t0

    ub_pgd, _ = oracle.pgd_upper_bound(network, instance.spec, instance, seed=seed)

    skipped = False
    f_star = None
    try:
        f_star, _, _ = oracle.global_min(
            network, instance.spec, instance, pattern_cap=pattern_cap, bounds=bounds
        )
    except oracle.PatternCapError:
        skipped = True

    cert = bab.verify(instance, seed=seed)
    history = [(name, r, lo, up) for r, lo, up in cert.history]

    delta_err = abs(ub_nlp - f_star) if f_star is not None and math.isfinite(ub_nlp) else None
    rel_err = (
        delta_err / abs(f_star)
        if delta_err is not None and f_star not in (None, 0.0)
        else None
    )
    row = {
        "case": name,
        "f_star": "skipped-cap" if skipped else f_star,
        "lb_root": lb_root,
        "ub_nlp": ub_nlp if math.isfinite(ub_nlp) else "",
        "ub_pgd": ub_pgd,
        "abs_err": delta_err,
        "rel_err": rel_err,
        "time_lb": time_lb,
        "time_ub": time_ub,
    }
    return row, history, math.isfinite(ub_nlp)


def cmd_bench(args) -> int:
    paths = sorted(
        os.path.join(args.instances, f)
        for f in os.listdir(args.instances)
        if f.endswith(".json")
    )
    if not paths:
        print(f"no instance files in {args.instances}", file=sys.stderr)
        return EXIT_ERROR
    tasks = [(args.model, p, args.seed, args.pattern_cap, args.epsilon) for p in paths]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_bench_case, tasks))
    else:
        results = [_bench_case(t) for t in tasks]

    fields = [
        "case", "f_star", "lb_root", "ub_nlp", "ub_pgd",
        "abs_err", "rel_err", "time_lb", "time_ub",
    ]
    out_path = args.output or "bench.csv"
    with open(out_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        produced = 0
        for row, _, has_upper in results:
            produced += has_upper
            writer.writerow({k: _fmt_csv(row[k]) for k in fields})
        phi = 100.0 * produced / len(results)
        writer.writerow({"case": "aggregate", "f_star": f"phi={_fmt_csv(phi)}%"})

    history_path = os.path.splitext(out_path)[0] + "_history.csv"
    with open(history_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["case", "round", "lower", "upper"])
        for _, history, _ in results:
            for name, r, lo, up in history:
                writer.writerow([name, r, _fmt_csv(lo), _fmt_csv(up)])
    print(f"wrote {out_path} and {history_path}")
    return EXIT_SAFE


def _fmt_csv(value):
    if value is None:
        return ""
    if isinstance(value, float):
        if not math.isfinite(value):
            return "inf" if value > 0 else "-inf"
        return f"{value:.9g}"
    return value


def cmd_gen_toy(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    if args.kind == "two-neuron":
        net = toynets.two_neuron_net()
        instance = toynets.two_neuron_instance(gap_tol=0.01)
        save_network(net, os.path.join(args.out_dir, "two_neuron_model.json"))
        save_instance(instance, os.path.join(args.out_dir, "two_neuron_instance.json"))
        print(f"wrote two_neuron_model.json and two_neuron_instance.json to {args.out_dir}")
        return EXIT_SAFE
    widths = tuple(int(w) for w in args.widths.split(","))
    for i in range(args.count):
        seed = args.seed + i
        instance = toynets.random_instance(widths, seed, delta=args.delta)
        save_network(instance.network, os.path.join(args.out_dir, f"random_{seed}_model.json"))
        save_instance(instance, os.path.join(args.out_dir, f"random_{seed}_instance.json"))
    print(f"wrote {args.count} random model/instance pairs to {args.out_dir}")
    return EXIT_SAFE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reluverify",
        description="Verify ReLU network robustness with two-sided bounds.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_instance=True):
        p.add_argument("--model", required=True, help="model JSON path")
        if needs_instance:
            p.add_argument("--instance", required=True, help="instance JSON path")
        p.add_argument("--output", help="report path (stdout when omitted)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--epsilon", type=float, default=None, help="gap tolerance override")
        p.add_argument("--t-max", dest="t_max", type=int, default=None)
        p.add_argument("--tau-max", dest="tau_max", default=None,
                       help="upper-bound re-solve period, integer or 'auto'")
        p.add_argument("--lambda", dest="align_weight", type=float, default=None)
        p.add_argument("--eps-comp", dest="eps_comp", type=float, default=None)

    p_verify = sub.add_parser("verify", help="full branch-and-bound verification")
    common(p_verify)
    p_verify.add_argument("--timeout", type=float, default=None,
                          help=f"wall clock cap in seconds (env {TIMEOUT_ENV})")
    p_verify.set_defaults(func=cmd_verify)

    p_bounds = sub.add_parser("bounds", help="layer intervals and root lower bound")
    common(p_bounds)
    p_bounds.set_defaults(func=cmd_bounds)

    p_upper = sub.add_parser("upper", help="one activation-exact upper-bound solve")
    common(p_upper)
    p_upper.add_argument("--dump-problem", action="store_true",
                         help="include the assembled program in the report")
    p_upper.set_defaults(func=cmd_upper)

    p_oracle = sub.add_parser("oracle", help="exact minimum by pattern enumeration")
    common(p_oracle)
    p_oracle.add_argument("--pattern-cap", type=int, default=20)
    p_oracle.set_defaults(func=cmd_oracle)

    p_bench = sub.add_parser("bench", help="run a directory of instances, emit CSV")
    p_bench.add_argument("--model", required=True)
    p_bench.add_argument("--instances", required=True, help="directory of instance JSONs")
    p_bench.add_argument("--output", help="CSV path (default bench.csv)")
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--epsilon", type=float, default=None)
    p_bench.add_argument("--pattern-cap", type=int, default=20)
    p_bench.add_argument("--workers", type=int, default=1)
    p_bench.set_defaults(func=cmd_bench)

    p_gen = sub.add_parser("gen-toy", help="emit example networks and instances")
    p_gen.add_argument("--kind", choices=["two-neuron", "random"], default="two-neuron")
    p_gen.add_argument("--out-dir", default=".")
    p_gen.add_argument("--widths", default="2,8,8,2")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--count", type=int, default=1)
    p_gen.add_argument("--delta", type=float, default=0.1)
    p_gen.set_defaults(func=cmd_gen_toy)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (OSError, NetworkFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
