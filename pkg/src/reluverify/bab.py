"""Branch-and-bound orchestration and certificates.

The loop keeps a queue of phase-assignment domains. Each round pops the
domain with the smallest certified lower bound, splits its highest-scoring
unstable neuron, bounds both children with split-aware propagation, and
periodically re-solves the activation-exact upper-bound program on the
child in hand (warm-started when the last solved ancestor is its immediate
parent). The global lower bound is the minimum over everything still alive
or already resolved, the global upper bound the running minimum of exact
margins at feasible points, so the gap can only shrink.

An upper bound below zero stops everything immediately with a
counterexample that is re-verified by exact forward evaluation; the loop
owns the queue while child bounding itself is pure and could fan out.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import complementarity as cc
from .bounds import (
    ACTIVE,
    INACTIVE,
    EMPTY_SPLITS,
    SplitSet,
    ibp_bounds,
    optimize_relaxation,
)
from .branching import base_scores, pattern_aligned_scores, pick_branch_neuron, select_domain
from .network import VerificationInstance, spec_value

__all__ = ["Domain", "Certificate", "Metrics", "verify", "compute_metrics"]

SAFE = "safe"
UNSAFE = "unsafe"
GAP = "gap"

DEFAULT_TIMEOUT = 600.0


@dataclass
class Domain:
    """One live subproblem: a phase assignment plus its certified bounds."""

    splits: SplitSet
    lower: float
    upper: float
    depth: int
    insertion_seq: int
    warm: tuple | None = None  # (MpccSolution, MpccProblem) of nearest solved ancestor
    opt_state: tuple | None = None  # inherited relaxation slopes/multipliers


@dataclass(frozen=True)
class Certificate:
    """Verification outcome with the bound bracket and run counters."""

    verdict: str
    global_lower: float
    global_upper: float
    gap: float
    counterexample: np.ndarray | None
    rounds: int
    nlp_solves: int
    domains_pruned: int
    wall_time: float
    history: tuple = ()

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "lower": self.global_lower,
            "upper": self.global_upper,
            "gap": self.gap,
            "counterexample": None
            if self.counterexample is None
            else [float(v) for v in self.counterexample],
            "rounds": self.rounds,
            "nlp_solves": self.nlp_solves,
            "domains_pruned": self.domains_pruned,
            "time_s": self.wall_time,
            "history": [
                {"round": r, "lower": lo, "upper": up} for r, lo, up in self.history
            ],
        }


@dataclass(frozen=True)
class Metrics:
    """Upper-bound quality against ground truth, aggregated over cases."""

    abs_err: float
    rel_err: float
    upper_rate: float
    reference: float | None = None
    per_case: tuple = ()


class _Run:
    """Mutable state of one verification run."""

    def __init__(self, instance: VerificationInstance, seed: int):
        self.instance = instance
        self.seed = seed
        self.queue: list[Domain] = []
        self.seq = 0
        self.tau = 0
        self.nlp_solves = 0
        self.pruned = 0
        self.resolved_floor = math.inf  # min lower bound over pruned/resolved domains
        self.upper = math.inf
        self.counterexample = None
        self.incumbent_pattern: dict | None = None
        self.history: list[tuple] = []

    def push(self, domain: Domain):
        self.queue.append(domain)

    def global_lower(self) -> float:
        live = min((d.lower for d in self.queue), default=math.inf)
        return min(live, self.resolved_floor)

    def record_upper(self, value: float, x: np.ndarray):
        """Monotone update: only a strictly smaller exact value replaces ū."""
        if value < self.upper:
            self.upper = value
            self.counterexample = x


def _solve_domain_nlp(run: _Run, problem: cc.MpccProblem, warm_from: tuple | None, seed: int):
    """One upper-bound solve (warm when the ancestor is one split away)."""
    warm = None
    if warm_from is not None:
        parent_sol, parent_problem = warm_from
        warm = cc.make_warm_start(parent_sol, parent_problem, problem)
    sol = cc.solve(problem, warm=warm, seed=seed, tol=1e-7)
    run.nlp_solves += 1
    return sol


def _register_solution(run: _Run, problem: cc.MpccProblem, sol: cc.MpccSolution, polish: bool):
    """Fold a feasible solve into the incumbent: exact value, pattern, polish."""
    instance = run.instance
    if not sol.feasible:
        return None
    exact = spec_value(instance.network, instance.spec, sol.x)
    run.record_upper(exact, sol.x)
    run.incumbent_pattern = dict(sol.pattern)
    if polish:
        value, x = cc.region_lp_polish(
            instance.network,
            instance.spec,
            instance,
            sol.pattern,
            bounds=problem.bounds,
        )
        if x is not None:
            exact_polish = spec_value(instance.network, instance.spec, x)
            run.record_upper(exact_polish, x)
    return exact


def verify(
    instance: VerificationInstance,
    seed: int = 0,
    opt_iters: int = 20,
    timeout: float = DEFAULT_TIMEOUT,
    auto_resolve_period: bool = False,
    polish: bool = True,
) -> Certificate:
    """Run the full verification loop and emit a certificate.

    Terminates with verdict "safe" (lower bound positive), "unsafe" (exact
    counterexample found), or "gap" (bracket of width at most the instance
    tolerance, or a round/time cap hit). Identical instance and seed give an
    identical certificate.
    """
    t_start = time.perf_counter()
    net, spec = instance.network, instance.spec
    run = _Run(instance, seed)

    # root bounding: intermediate intervals plus optimized lower bound
    bounds = ibp_bounds(net, instance.x0, instance.delta, instance.norm)
    root_lb, root_state = optimize_relaxation(
        net, spec, instance, EMPTY_SPLITS, iters=opt_iters, bounds=bounds,
        return_state=True,
    )
    run.history.append((0, root_lb, math.inf))
    if root_lb > 0:
        return _certificate(run, SAFE, root_lb, t_start, rounds=0)

    # root incumbent: one upper-bound solve, early unsafe on a negative value
    root_problem = cc.build_problem(net, spec, instance, bounds, EMPTY_SPLITS)
    root_sol = _solve_domain_nlp(run, root_problem, None, seed)
    _register_solution(run, root_problem, root_sol, polish)
    run.history[-1] = (0, root_lb, run.upper)
    if run.upper < 0:
        return _certificate(run, UNSAFE, root_lb, t_start, rounds=0)

    resolve_period = instance.resolve_period
    if auto_resolve_period:
        resolve_period = _calibrate_resolve_period(run, bounds, root_problem, opt_iters)

    warm_root = (root_sol, root_problem) if root_sol.feasible else None
    run.push(
        Domain(
            splits=EMPTY_SPLITS,
            lower=root_lb,
            upper=run.upper,
            depth=0,
            insertion_seq=run.seq,
            warm=warm_root,
            opt_state=root_state,
        )
    )
    run.seq += 1

    rounds = 0
    gap = run.upper - run.global_lower()
    while gap > instance.gap_tol and run.queue and rounds < instance.max_rounds:
        if time.perf_counter() - t_start > timeout:
            break
        rounds += 1
        domain = select_domain(run.queue)

        free = [key for key in bounds.unstable_sorted() if key not in domain.splits]
        if not free:
            # fully assigned: resolve the leaf exactly and retire it
            value, x = cc.region_lp_polish(
                net, spec, instance, _splits_to_pattern(domain.splits), bounds=bounds
            )
            if x is not None:
                run.record_upper(spec_value(net, spec, x), x)
                run.resolved_floor = min(run.resolved_floor, max(value, domain.lower))
            else:
                # empty leaf region; keep its old bound as a conservative floor
                run.resolved_floor = min(run.resolved_floor, domain.lower)
            run.pruned += 1
            gap = run.upper - run.global_lower()
            run.history.append((rounds, run.global_lower(), run.upper))
            if run.upper < 0:
                return _certificate(run, UNSAFE, run.global_lower(), t_start, rounds)
            continue

        scores = base_scores(net, spec, instance, bounds, domain.splits)
        candidates = sorted(scores, key=lambda key: (-scores[key], key))[:3]
        branch_scores = pattern_aligned_scores(
            scores,
            candidates,
            run.incumbent_pattern,
            instance.align_weight,
            domain.splits,
            bounds.unstable,
        )
        neuron = pick_branch_neuron(branch_scores)

        # explore the pattern-consistent child first (pushed first, FIFO ties)
        phases = [ACTIVE, INACTIVE]
        if run.incumbent_pattern is not None and run.incumbent_pattern.get(neuron) == 0:
            phases = [INACTIVE, ACTIVE]

        stop_unsafe = False
        for phase in phases:
            child_splits = domain.splits.with_split(neuron[0], neuron[1], phase)
            lb_raw, child_state = optimize_relaxation(
                net, spec, instance, child_splits, iters=opt_iters, bounds=bounds,
                init_state=domain.opt_state, return_state=True,
            )
            run.tau += 1
            if math.isinf(lb_raw):
                run.pruned += 1  # empty region, contributes nothing
                continue
            lb_child = max(lb_raw, domain.lower)

            child = Domain(
                splits=child_splits,
                lower=lb_child,
                upper=domain.upper,
                depth=domain.depth + 1,
                insertion_seq=run.seq,
                warm=domain.warm,
                opt_state=child_state,
            )
            run.seq += 1

            if run.tau > resolve_period:
                problem = cc.build_problem(net, spec, instance, bounds, child_splits)
                sol = _solve_domain_nlp(run, problem, domain.warm, seed + run.seq)
                run.tau = 0
                if sol.feasible:
                    exact = _register_solution(run, problem, sol, polish)
                    child.upper = min(child.upper, exact)
                    child.warm = (sol, problem)
                    if exact < 0:
                        stop_unsafe = True
                        break

            if child.lower > 0:
                run.pruned += 1
                run.resolved_floor = min(run.resolved_floor, child.lower)
                continue
            run.push(child)

        lower = run.global_lower()
        gap = run.upper - lower
        run.history.append((rounds, lower, run.upper))
        if stop_unsafe or run.upper < 0:
            return _certificate(run, UNSAFE, lower, t_start, rounds)

    lower = run.global_lower()
    if lower > 0:
        verdict = SAFE
    elif run.upper < 0:
        verdict = UNSAFE
    else:
        verdict = GAP
    return _certificate(run, verdict, lower, t_start, rounds)


def _splits_to_pattern(splits: SplitSet) -> dict:
    return {key: (1 if phase == ACTIVE else 0) for key, phase in splits.assignments.items()}


def _calibrate_resolve_period(run: _Run, bounds, root_problem, opt_iters) -> int:
    """Measure one bound pass and one upper solve; period = cost ratio."""
    instance = run.instance
    t0 = time.perf_counter()
    optimize_relaxation(
        instance.network, instance.spec, instance, EMPTY_SPLITS,
        iters=opt_iters, bounds=bounds,
    )
    bound_cost = max(time.perf_counter() - t0, 1e-9)
    t0 = time.perf_counter()
    cc.solve(root_problem, seed=run.seed, restarts=0)
    nlp_cost = time.perf_counter() - t0
    return max(1, math.ceil(nlp_cost / bound_cost))


def _certificate(run: _Run, verdict: str, lower: float, t_start: float, rounds: int) -> Certificate:
    counterexample = None
    if verdict == UNSAFE:
        counterexample = run.counterexample
        check = spec_value(run.instance.network, run.instance.spec, counterexample)
        if not check < 0:
            raise AssertionError(
                f"unsafe verdict with nonnegative margin {check}; solver inconsistency"
            )
    upper = run.upper
    gap = upper - lower
    return Certificate(
        verdict=verdict,
        global_lower=lower,
        global_upper=upper,
        gap=gap,
        counterexample=counterexample,
        rounds=rounds,
        nlp_solves=run.nlp_solves,
        domains_pruned=run.pruned,
        wall_time=time.perf_counter() - t_start,
        history=tuple(run.history),
    )


def compute_metrics(certificates, oracle_values) -> Metrics:
    """Bound-quality metrics over a case set.

    oracle_values aligns with certificates; None marks a missing reference,
    which drops the case from the error aggregates but still counts it in
    the upper-bounding rate. A case "produces" an upper bound when some
    feasible solve or polish gave a finite value.
    """
    per_case = []
    abs_errs, rel_errs = [], []
    produced = 0
    for cert, ref in zip(certificates, oracle_values):
        has_upper = math.isfinite(cert.global_upper)
        if has_upper:
            produced += 1
        if ref is None or not has_upper:
            per_case.append(
                Metrics(
                    abs_err=math.nan,
                    rel_err=math.nan,
                    upper_rate=1.0 if has_upper else 0.0,
                    reference=ref,
                )
            )
            continue
        abs_err = abs(cert.global_upper - ref)
        rel_err = abs_err / abs(ref) if ref != 0 else math.inf
        abs_errs.append(abs_err)
        rel_errs.append(rel_err)
        per_case.append(
            Metrics(abs_err=abs_err, rel_err=rel_err, upper_rate=1.0, reference=ref)
        )
    count = max(len(per_case), 1)
    return Metrics(
        abs_err=float(np.mean(abs_errs)) if abs_errs else math.nan,
        rel_err=float(np.mean(rel_errs)) if rel_errs else math.nan,
        upper_rate=produced / count,
        reference=None,
        per_case=tuple(per_case),
    )
