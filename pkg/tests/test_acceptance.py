"""Acceptance suite: every criterion as one test with a printed verdict line.

The sweep fixtures are deliberately desk-scale (2-8-8-2 networks, radii 0.05
and 0.2) so the exact enumeration oracle stays fast; each criterion states
its tolerance inline.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from reluverify import toynets
from reluverify.bab import SAFE, UNSAFE, verify
from reluverify.bounds import ACTIVE, INACTIVE, SplitSet, ibp_bounds, optimize_relaxation
from reluverify.complementarity import (
    build_problem,
    make_warm_start,
    region_lp_polish,
    solve,
)
from reluverify.network import forward_eval, spec_value
from reluverify.oracle import global_min

SWEEP_SEEDS = 50
SWEEP_DELTAS = (0.05, 0.2)


def _report(name, ok, detail=""):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f" ({detail})" if detail else ""))
    assert ok, f"{name}: {detail}"


def _sweep_instances():
    cases = []
    for delta in SWEEP_DELTAS:
        for seed in range(SWEEP_SEEDS):
            cases.append(
                toynets.random_instance(
                    (2, 8, 8, 2), seed=seed, delta=delta,
                    gap_tol=1e-3, max_rounds=80,
                )
            )
    return cases


@pytest.fixture(scope="module")
def sweep_results():
    """Oracle, bound, upper-bound, and full-verify results for 100 cases."""
    t0 = time.perf_counter()
    rows = []
    for idx, inst in enumerate(_sweep_instances()):
        bounds = ibp_bounds(inst.network, inst.x0, inst.delta, inst.norm)
        f_star, _, _ = global_min(inst.network, inst.spec, inst, bounds=bounds)
        lb = optimize_relaxation(inst.network, inst.spec, inst, bounds=bounds)
        sol = solve(build_problem(inst.network, inst.spec, inst, bounds), seed=idx)
        upper = sol.objective if sol.feasible else math.inf
        value, x = region_lp_polish(
            inst.network, inst.spec, inst, sol.pattern, bounds=bounds
        )
        if x is not None:
            upper = min(upper, spec_value(inst.network, inst.spec, x))
        cert = verify(inst, seed=idx)
        rows.append(
            {
                "instance": inst,
                "f_star": f_star,
                "lb": lb,
                "upper": upper,
                "cert": cert,
            }
        )
    elapsed = time.perf_counter() - t0
    return rows, elapsed


def test_worked_example_end_to_end():
    t0 = time.perf_counter()
    inst = toynets.two_neuron_instance(gap_tol=0.01)
    cert = verify(inst, seed=0)
    f_star, x_star, _ = global_min(inst.network, inst.spec, inst)
    elapsed = time.perf_counter() - t0
    ok = (
        cert.verdict == UNSAFE
        and abs(cert.counterexample[0] + 1.0) <= 1e-4
        and cert.global_upper <= -2.9 + 1e-4
        and abs(f_star + 2.9) <= 1e-8
        and elapsed < 1.0
    )
    _report(
        "worked-example end to end",
        ok,
        f"verdict={cert.verdict} cex={cert.counterexample} "
        f"upper={cert.global_upper:.6f} f*={f_star:.10f} {elapsed:.2f}s",
    )


def test_soundness_sandwich_100_cases(sweep_results):
    rows, elapsed = sweep_results
    sandwich_ok = bracket_ok = 0
    for row in rows:
        f_star, lb, upper, cert = row["f_star"], row["lb"], row["upper"], row["cert"]
        if f_star <= upper + 1e-6 and lb <= f_star + 1e-6:
            sandwich_ok += 1
        if cert.global_lower - 1e-6 <= f_star <= cert.global_upper + 1e-6:
            bracket_ok += 1
    ok = sandwich_ok == len(rows) == bracket_ok and elapsed < 300.0
    _report(
        "soundness sandwich over 100 cases",
        ok,
        f"sandwich {sandwich_ok}/{len(rows)}, bracket {bracket_ok}/{len(rows)}, "
        f"{elapsed:.0f}s",
    )


def test_upper_bound_tightness(sweep_results):
    rows, _ = sweep_results
    rel_errs = []
    produced = 0
    for row in rows:
        if math.isfinite(row["upper"]):
            produced += 1
            if row["f_star"] != 0:
                rel_errs.append(
                    abs(row["upper"] - row["f_star"]) / abs(row["f_star"])
                )
    phi = produced / len(rows)
    median_rel = float(np.median(rel_errs))
    ok = phi == 1.0 and median_rel <= 1e-2
    _report(
        "upper-bound tightness",
        ok,
        f"phi={100 * phi:.0f}% median rel err={median_rel:.2e}",
    )


def test_softening_insensitivity():
    worst = 0.0
    fixtures = [toynets.two_neuron_instance()] + [
        toynets.random_instance((2, 8, 8, 2), seed=s, delta=0.1) for s in range(10)
    ]
    for idx, inst in enumerate(fixtures):
        bounds = ibp_bounds(inst.network, inst.x0, inst.delta, inst.norm)
        values = {}
        for comp_tol in (1e-8, 1e-5):
            ii = replace(inst, comp_tol=comp_tol)
            sol = solve(build_problem(ii.network, ii.spec, ii, bounds), seed=idx)
            upper = sol.objective
            _, x = region_lp_polish(ii.network, ii.spec, ii, sol.pattern, bounds=bounds)
            if x is not None:
                upper = min(upper, spec_value(ii.network, ii.spec, x))
            values[comp_tol] = upper
        worst = max(worst, abs(values[1e-8] - values[1e-5]))
    ok = worst <= 1e-4
    _report("softening insensitivity", ok, f"max |ub(1e-8)-ub(1e-5)|={worst:.2e}")


def test_warm_start_speedup():
    warm_iters, cold_iters = [], []
    seed = 0
    while len(warm_iters) < 50 and seed < 40:
        inst = toynets.random_instance((2, 8, 8, 2), seed=seed, delta=0.1)
        bounds = ibp_bounds(inst.network, inst.x0, inst.delta)
        parent = build_problem(inst.network, inst.spec, inst, bounds)
        psol = solve(parent, seed=seed)
        if psol.feasible:
            for key in sorted(bounds.unstable)[:2]:
                for phase in (ACTIVE, INACTIVE):
                    child = build_problem(
                        inst.network, inst.spec, inst, bounds, SplitSet({key: phase})
                    )
                    warm = make_warm_start(psol, parent, child)
                    w = solve(child, warm=warm, seed=seed)
                    c = solve(child, seed=seed, restarts=0)
                    if w.feasible and c.feasible:
                        warm_iters.append(w.ipm_iterations)
                        cold_iters.append(c.ipm_iterations)
        seed += 1
    ratio = float(np.median(warm_iters)) / float(np.median(cold_iters))
    ok = len(warm_iters) >= 50 and ratio <= 0.7
    _report(
        "warm-start speedup",
        ok,
        f"{len(warm_iters)} re-solves, median warm {np.median(warm_iters):.0f} "
        f"vs cold {np.median(cold_iters):.0f} (ratio {ratio:.2f})",
    )


def test_pattern_aligned_branching_directional():
    rows = []
    wins = 0
    used = 0
    seed = 0
    while used < 10 and seed < 60:
        inst = toynets.random_instance(
            (2, 8, 8, 2), seed=seed, delta=0.3, gap_tol=1e-9, max_rounds=25
        )
        bounds = ibp_bounds(inst.network, inst.x0, inst.delta)
        seed += 1
        if len(bounds.unstable) < 8:
            continue
        used += 1
        aligned = verify(replace(inst, align_weight=0.1), seed=seed)
        baseline = verify(replace(inst, align_weight=0.0), seed=seed)
        f_star, _, _ = global_min(inst.network, inst.spec, inst, bounds=bounds)
        assert aligned.global_lower <= f_star + 1e-6
        assert baseline.global_lower <= f_star + 1e-6
        win = aligned.global_lower >= baseline.global_lower - 1e-12
        wins += win
        rows.append((seed - 1, aligned.global_lower, baseline.global_lower, win))
    print("seed  lb(lambda=0.1)  lb(lambda=0)   aligned>=baseline")
    for s, a, b, w in rows:
        print(f"{s:4d}  {a:14.6f}  {b:12.6f}   {w}")
    ok = used >= 10 and wins / used >= 0.6
    _report(
        "pattern-aligned branching directional",
        ok,
        f"{wins}/{used} instances at or above the baseline",
    )


def test_monotone_certificates(sweep_results):
    rows, _ = sweep_results
    violations = 0
    for row in rows:
        hist = row["cert"].history
        lows = [h[1] for h in hist]
        ups = [h[2] for h in hist]
        if not all(b >= a - 1e-9 for a, b in zip(lows, lows[1:])):
            violations += 1
        if not all(b <= a + 1e-9 for a, b in zip(ups, ups[1:])):
            violations += 1
        gaps = [u - l for l, u in zip(lows, ups)]
        if not all(b <= a + 1e-9 for a, b in zip(gaps, gaps[1:])):
            violations += 1
    _report("monotone certificates", violations == 0, f"{violations} violations")


def test_exact_reformulation_of_relu_encoding():
    """Random feasible assignments of the pair encoding evaluate to exactly
    the network margin: z = p - q with p = post-activation, p q = 0."""
    rng = np.random.default_rng(0)
    worst = 0.0
    for case in range(10):
        inst = toynets.random_instance((2, 8, 8, 2), seed=case, delta=0.5)
        bounds = ibp_bounds(inst.network, inst.x0, inst.delta)
        problem = build_problem(inst.network, inst.spec, inst, bounds)
        for _ in range(100):
            x = inst.x0 + rng.uniform(-inst.delta, inst.delta, size=2)
            v = np.zeros(problem.num_vars)
            v[:2] = x
            h = x
            for k in range(inst.network.num_hidden_layers):
                z = inst.network.weights[k] @ h + inst.network.biases[k]
                for j, zj in enumerate(z):
                    v[problem.var_index[("z", k, j)]] = zj
                    if ("p", k, j) in problem.var_index:
                        v[problem.var_index[("p", k, j)]] = max(zj, 0.0)
                        v[problem.var_index[("q", k, j)]] = max(-zj, 0.0)
                h = np.maximum(z, 0.0)
            assert problem.ipm.primal_infeasibility(v) <= 1e-9
            encoded = problem.ipm.objective(v)
            exact = spec_value(inst.network, inst.spec, x)
            worst = max(worst, abs(encoded - exact) / (1.0 + abs(exact)))
    ok = worst <= 1e-5
    _report(
        "exact pair encoding on 1000 assignments", ok, f"max rel gap {worst:.2e}"
    )
