"""Activation-exact upper bounds via complementarity-constrained programs.

Each unstable, unsplit ReLU is encoded exactly by a nonnegative pair (p, q)
with z = p - q and post-activation p, plus a softened product constraint
p * q <= comp_tol. Stable neurons are inlined as identity or zero, and split
neurons become sign-restricted linear neurons with no pair. Any feasible
point of the resulting program evaluates the real network at a real input,
so its objective is a sound upper bound on the true minimum margin.

Solutions are immutable; separate solves share no state and can run
concurrently.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .bounds import (
    ACTIVE,
    INACTIVE,
    EMPTY_SPLITS,
    LayerBounds,
    SplitSet,
    effective_intervals,
    ibp_bounds,
)
from .ipm import IpmOptions, IpmProblem, IpmResult, IpmStart, solve_ipm
from .network import ReluNetwork, Specification, VerificationInstance, spec_value

__all__ = [
    "MpccProblem",
    "MpccSolution",
    "WarmStart",
    "build_problem",
    "solve",
    "classify_partition",
    "make_warm_start",
    "region_lp_polish",
]

log = logging.getLogger(__name__)

SOLVED = "solved"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class MpccProblem:
    """Assembled program for one domain: variables, constraints, objective.

    var_keys name every variable: ("x", i), ("z", layer, j), and ("p"/"q",
    layer, j) for each unstable unsplit neuron. eq_keys / ineq_keys name the
    constraint rows so warm starts can carry multipliers across the
    single-neuron rebuilds between a parent and its child.
    """

    network: ReluNetwork
    spec: Specification
    instance: VerificationInstance
    bounds: LayerBounds
    splits: SplitSet
    var_keys: tuple
    var_index: dict
    eq_keys: tuple
    ineq_keys: tuple
    pair_neurons: tuple  # unsplit unstable (layer, j), sorted
    ipm: IpmProblem

    @property
    def num_vars(self) -> int:
        return self.ipm.n

    def pair_index(self, layer: int, j: int) -> int:
        return self.pair_neurons.index((layer, j))

    def debug_dict(self) -> dict:
        """Problem in a plain-JSON form for external cross-checking."""
        eq = self.ipm.a_eq
        triples = []
        for r in range(eq.shape[0]):
            cols = np.nonzero(eq[r])[0]
            triples.append(
                {
                    "key": list(self.eq_keys[r]),
                    "terms": [[str(self.var_keys[c]), float(eq[r, c])] for c in cols],
                    "rhs": float(self.ipm.b_eq[r]),
                }
            )
        ineq = []
        g_lin, g_off = self.ipm.g_lin, self.ipm.g_off
        for r in range(g_lin.shape[0]):
            cols = np.nonzero(g_lin[r])[0]
            ineq.append(
                {
                    "key": list(self.ineq_keys[r]),
                    "terms": [[str(self.var_keys[c]), float(g_lin[r, c])] for c in cols],
                    "offset": float(g_off[r]),
                }
            )
        for k, (i, j) in enumerate(self.ipm.comp_pairs):
            ineq.append(
                {
                    "key": list(self.ineq_keys[g_lin.shape[0] + k]),
                    "product": [str(self.var_keys[i]), str(self.var_keys[j])],
                    "eps": self.ipm.comp_eps,
                }
            )
        return {
            "variables": [str(k) for k in self.var_keys],
            "objective": {
                "terms": [
                    [str(self.var_keys[c]), float(self.ipm.obj[c])]
                    for c in np.nonzero(self.ipm.obj)[0]
                ],
                "const": float(self.ipm.obj_const),
            },
            "equalities": triples,
            "inequalities": ineq,
        }


@dataclass(frozen=True)
class WarmStart:
    v: np.ndarray
    eq_duals: dict
    ineq_duals: dict


@dataclass(frozen=True)
class MpccSolution:
    """One solve outcome: feasible input point, bound value, and pattern.

    x is projected exactly into the input region, and objective is the exact
    network margin there, so a feasible solution is a certified upper bound
    by evaluation. solver_objective keeps the raw program value; the gap
    between the two is the decode error of the softened encoding.
    """

    x: np.ndarray
    objective: float
    solver_objective: float
    p: np.ndarray
    q: np.ndarray
    eq_duals: dict
    ineq_duals: dict
    pattern: dict            # (layer, j) -> 0/1 over the full unstable set
    active: tuple            # pairs with p clearly positive
    inactive: tuple          # pairs with q clearly positive
    undecided: tuple         # pairs where both are near zero (or both large)
    status: str
    kkt_residual: float
    ipm_iterations: int
    primal_infeasibility: float = 0.0

    @property
    def feasible(self) -> bool:
        return self.status in (SOLVED, MAX_ITER)


def build_problem(
    network: ReluNetwork,
    spec: Specification,
    instance: VerificationInstance,
    bounds: LayerBounds,
    splits: SplitSet = EMPTY_SPLITS,
) -> MpccProblem:
    """Assemble the domain program.

    Splitting a neuron that is not in the unstable set is rejected with its
    index; a split neuron contributes no pair and no product constraint, only
    the sign restriction on its pre-activation.
    """
    for key in splits.assignments:
        if key not in bounds.unstable:
            raise ValueError(f"cannot split stable neuron {key}")

    lows, ups, _ = effective_intervals(bounds, splits)
    hidden = network.num_hidden_layers
    d = network.input_dim
    x0 = instance.x0
    delta = instance.delta

    pair_neurons = tuple(
        sorted(key for key in bounds.unstable if key not in splits)
    )

    var_keys = [("x", i) for i in range(d)]
    var_keys += [("z", k, j) for k in range(hidden) for j in range(len(lows[k]))]
    for k, j in pair_neurons:
        var_keys.append(("p", k, j))
        var_keys.append(("q", k, j))
    var_index = {key: i for i, key in enumerate(var_keys)}
    n = len(var_keys)

    pair_set = set(pair_neurons)

    def post_activation_terms(k: int, j: int):
        """Variables making up the post-activation of hidden neuron (k, j)."""
        if (k, j) in pair_set:
            return [(var_index[("p", k, j)], 1.0)]
        if (k, j) in splits:
            phase = splits.assignments[(k, j)]
        else:
            phase = ACTIVE if lows[k][j] >= 0 else INACTIVE
        if phase == ACTIVE:
            return [(var_index[("z", k, j)], 1.0)]
        return []

    eq_rows, eq_rhs, eq_keys = [], [], []

    def add_eq(key, terms, rhs):
        row = np.zeros(n)
        for idx, coef in terms:
            row[idx] += coef
        eq_rows.append(row)
        eq_rhs.append(rhs)
        eq_keys.append(key)

    for k in range(hidden):
        w, b = network.weights[k], network.biases[k]
        for j in range(w.shape[0]):
            terms = [(var_index[("z", k, j)], 1.0)]
            if k == 0:
                for i in range(d):
                    if w[j, i] != 0.0:
                        terms.append((var_index[("x", i)], -w[j, i]))
            else:
                for jj in range(w.shape[1]):
                    if w[j, jj] == 0.0:
                        continue
                    for idx, coef in post_activation_terms(k - 1, jj):
                        terms.append((idx, -w[j, jj] * coef))
            add_eq(("layer", k, j), terms, float(b[j]))
    for k, j in pair_neurons:
        add_eq(
            ("pq", k, j),
            [
                (var_index[("z", k, j)], 1.0),
                (var_index[("p", k, j)], -1.0),
                (var_index[("q", k, j)], 1.0),
            ],
            0.0,
        )

    g_rows, g_off, ineq_keys = [], [], []

    def add_ineq(key, terms, off):
        row = np.zeros(n)
        for idx, coef in terms:
            row[idx] += coef
        g_rows.append(row)
        g_off.append(off)
        ineq_keys.append(key)

    if delta == 0.0:
        for i in range(d):
            add_eq(("xfix", i), [(var_index[("x", i)], 1.0)], float(x0[i]))
    else:
        for i in range(d):
            add_ineq(("xlo", i), [(var_index[("x", i)], 1.0)], float(delta - x0[i]))
            add_ineq(("xhi", i), [(var_index[("x", i)], -1.0)], float(delta + x0[i]))

    for k in range(hidden):
        for j in range(len(lows[k])):
            lo, up = float(lows[k][j]), float(ups[k][j])
            if lo == up:
                add_eq(("zfix", k, j), [(var_index[("z", k, j)], 1.0)], lo)
                continue
            add_ineq(("zlo", k, j), [(var_index[("z", k, j)], 1.0)], -lo)
            add_ineq(("zhi", k, j), [(var_index[("z", k, j)], -1.0)], up)
    for k, j in pair_neurons:
        add_ineq(("p", k, j), [(var_index[("p", k, j)], 1.0)], 0.0)
        add_ineq(("q", k, j), [(var_index[("q", k, j)], 1.0)], 0.0)

    comp_pairs = [
        (var_index[("p", k, j)], var_index[("q", k, j)]) for k, j in pair_neurons
    ]
    for k, j in pair_neurons:
        ineq_keys.append(("comp", k, j))

    ball = None
    if instance.norm == "two" and delta > 0.0:
        ineq_keys.append(("ball",))
        ball = (np.arange(d), x0.copy(), delta)

    c = spec.objective_vector(network.output_dim)
    row_out = c @ network.weights[-1]
    obj = np.zeros(n)
    for j in range(network.weights[-1].shape[1]):
        if row_out[j] == 0.0:
            continue
        for idx, coef in post_activation_terms(hidden - 1, j):
            obj[idx] += row_out[j] * coef
    obj_const = float(c @ network.biases[-1])

    ipm = IpmProblem(
        n=n,
        obj=obj,
        obj_const=obj_const,
        a_eq=np.array(eq_rows).reshape(len(eq_rows), n),
        b_eq=np.array(eq_rhs),
        g_lin=np.array(g_rows).reshape(len(g_rows), n) if g_rows else None,
        g_off=np.array(g_off) if g_rows else None,
        comp_pairs=np.array(comp_pairs, dtype=int) if comp_pairs else None,
        comp_eps=instance.comp_tol,
        ball=ball,
    )
    return MpccProblem(
        network=network,
        spec=spec,
        instance=instance,
        bounds=bounds,
        splits=splits,
        var_keys=tuple(var_keys),
        var_index=var_index,
        eq_keys=tuple(eq_keys),
        ineq_keys=tuple(ineq_keys),
        pair_neurons=pair_neurons,
        ipm=ipm,
    )


def _start_from_input(problem: MpccProblem, x: np.ndarray) -> IpmStart:
    """Interior-ish start: evaluate the network at x and split z into (p, q).

    The point satisfies the affine rows and exact complementarity; active
    nonnegativity rows are handled by the solver's slack push.
    """
    net = problem.network
    v = np.zeros(problem.num_vars)
    v[: net.input_dim] = x
    lows, ups, _ = effective_intervals(problem.bounds, problem.splits)
    h = x
    for k in range(net.num_hidden_layers):
        z = net.weights[k] @ h + net.biases[k]
        # respect split phases so downstream layers see the restricted value
        for (kk, j), phase in problem.splits.assignments.items():
            if kk == k:
                z[j] = min(max(z[j], lows[k][j]), ups[k][j])
        for j in range(z.shape[0]):
            v[problem.var_index[("z", k, j)]] = z[j]
        post = np.maximum(z, 0.0)
        for kk, j in problem.pair_neurons:
            if kk == k:
                v[problem.var_index[("p", k, j)]] = max(z[j], 0.0)
                v[problem.var_index[("q", k, j)]] = max(-z[j], 0.0)
        zero_mask = np.array(
            [
                (k, j) in problem.splits and problem.splits.assignments[(k, j)] == INACTIVE
                for j in range(z.shape[0])
            ]
        )
        post[zero_mask] = 0.0
        h = post
    return IpmStart(v=v)


def _random_inputs(problem: MpccProblem, count: int, seed: int):
    inst = problem.instance
    rng = np.random.default_rng(seed)
    d = inst.network.input_dim
    points = []
    for _ in range(count):
        x = inst.x0 + rng.uniform(-inst.delta, inst.delta, size=d)
        if inst.norm == "two":
            off = x - inst.x0
            r = np.linalg.norm(off)
            if r > inst.delta and r > 0:
                x = inst.x0 + off * (inst.delta / r)
        points.append(x)
    return points


def classify_partition(p_star, q_star, tol: float | None = None):
    """Split pairs into clearly-active / clearly-inactive / undecided.

    pattern bit is 1 on the active side, 0 on the inactive side, and for
    undecided pairs follows the sign of p - q with ties going to 0.
    """
    p = np.asarray(p_star, dtype=float)
    q = np.asarray(q_star, dtype=float)
    if tol is None:
        scale = max(1.0, float(np.max(np.abs(p), initial=0.0)), float(np.max(np.abs(q), initial=0.0)))
        tol = 1e-5 * scale
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    active, inactive, undecided, pattern = [], [], [], []
    for j in range(p.shape[0]):
        if p[j] > tol and q[j] <= tol:
            active.append(j)
            pattern.append(1)
        elif q[j] > tol and p[j] <= tol:
            inactive.append(j)
            pattern.append(0)
        else:
            undecided.append(j)
            pattern.append(1 if p[j] - q[j] > 0 else 0)
    return active, inactive, undecided, np.array(pattern, dtype=np.int8)


def _project_input(instance: VerificationInstance, x: np.ndarray) -> np.ndarray:
    """Clip the solver's input point exactly into the perturbation region."""
    x0, delta = instance.x0, instance.delta
    x = np.clip(x, x0 - delta, x0 + delta)
    if instance.norm == "two" and delta > 0:
        off = x - x0
        r = np.linalg.norm(off)
        if r > delta and r > 0:
            x = x0 + off * (delta / r)
    return x


def _solution_from_result(problem: MpccProblem, res: IpmResult, iters_total: int) -> MpccSolution:
    v = res.v
    net = problem.network
    x = _project_input(problem.instance, v[: net.input_dim])
    p = np.array([v[problem.var_index[("p", k, j)]] for k, j in problem.pair_neurons])
    q = np.array([v[problem.var_index[("q", k, j)]] for k, j in problem.pair_neurons])
    act_i, inact_i, und_i, bits = classify_partition(p, q)
    pattern = {}
    for idx, key in enumerate(problem.pair_neurons):
        pattern[key] = int(bits[idx])
    for key, phase in problem.splits.assignments.items():
        pattern[key] = 1 if phase == ACTIVE else 0
    if res.status == "solved":
        status = SOLVED
    elif res.primal_infeasibility <= 1e-6:
        status = MAX_ITER
    else:
        status = INFEASIBLE
    eq_duals = {key: float(res.lam[i]) for i, key in enumerate(problem.eq_keys)}
    ineq_duals = {key: float(res.mu[i]) for i, key in enumerate(problem.ineq_keys)}
    exact = spec_value(net, problem.spec, x)
    return MpccSolution(
        x=x,
        objective=exact,
        solver_objective=res.objective,
        p=p,
        q=q,
        eq_duals=eq_duals,
        ineq_duals=ineq_duals,
        pattern=pattern,
        active=tuple(problem.pair_neurons[i] for i in act_i),
        inactive=tuple(problem.pair_neurons[i] for i in inact_i),
        undecided=tuple(problem.pair_neurons[i] for i in und_i),
        status=status,
        kkt_residual=res.kkt_residual,
        ipm_iterations=iters_total,
        primal_infeasibility=res.primal_infeasibility,
    )


def solve(
    problem: MpccProblem,
    warm: WarmStart | None = None,
    seed: int = 0,
    restarts: int = 2,
    tol: float = 1e-7,
    max_iter: int = 100,
) -> MpccSolution:
    """Solve the domain program; returns the best feasible local solution.

    A warm start runs once from the provided iterate; if that attempt does
    not reach a feasible point, the cold multi-start path runs as fallback.
    Cold solves start from the box center plus `restarts` random feasible
    inputs and keep the lowest objective. ipm_iterations counts iterations
    over every attempt made, which is the real cost of the call.
    """
    options = IpmOptions(tol=tol, max_iter=max_iter)
    kappa = options.kappa_push
    total_iters = 0

    if warm is not None:
        lam0 = np.array([warm.eq_duals.get(key, 0.0) for key in problem.eq_keys])
        mu0 = np.array([max(warm.ineq_duals.get(key, kappa), kappa) for key in problem.ineq_keys])
        res = solve_ipm(problem.ipm, IpmStart(v=warm.v, lam=lam0, mu=mu0, warm=True), options)
        total_iters += res.iterations
        if res.status == "solved" or res.primal_infeasibility <= 1e-6:
            return _solution_from_result(problem, res, total_iters)
        log.info("warm start failed (infeasible best iterate), falling back to cold")

    starts = [problem.instance.x0.copy()]
    starts += _random_inputs(problem, restarts, seed)
    best = None
    for x_init in starts:
        res = solve_ipm(problem.ipm, _start_from_input(problem, x_init), options)
        total_iters += res.iterations
        if res.status != "solved" and res.kkt_residual <= 1e-3:
            # near-solved: one restart from the best iterate often snaps in
            retry = solve_ipm(
                problem.ipm,
                IpmStart(v=res.v, lam=res.lam, mu=res.mu, warm=True),
                options,
            )
            total_iters += retry.iterations
            if (retry.status == "solved") or retry.kkt_residual < res.kkt_residual:
                res = retry
        feasible = res.status == "solved" or res.primal_infeasibility <= 1e-6
        rank = (
            0 if res.status == "solved" else (1 if feasible else 2),
            res.objective if feasible else res.primal_infeasibility,
        )
        if best is None or rank < best[0]:
            best = (rank, res)
    return _solution_from_result(problem, best[1], total_iters)


def make_warm_start(
    parent_solution: MpccSolution,
    parent_problem: MpccProblem,
    child_problem: MpccProblem,
) -> WarmStart | None:
    """Map a parent solve onto a child that fixes one more neuron's phase.

    Primal values are copied by variable name, the split neuron's value is
    projected strictly into its fixed phase, equality multipliers carry over
    by row name, and multipliers for rows new to the child start at the
    interiority push (the solver clips slacks the same way). Any structural
    difference other than a single extra phase fixing returns None, which
    callers treat as "use a cold start".
    """
    new_splits = {
        key: phase
        for key, phase in child_problem.splits.assignments.items()
        if key not in parent_problem.splits.assignments
    }
    same_base = parent_problem.splits.assignments.items() <= child_problem.splits.assignments.items()
    if len(new_splits) > 1 or not same_base:
        log.info(
            "warm start fallback: child differs from parent by %d phase fixings",
            len(new_splits),
        )
        return None

    kappa = IpmOptions().kappa_push
    parent_vals = dict(zip(parent_problem.var_keys, parent_solution_vector(parent_problem, parent_solution)))
    v = np.zeros(child_problem.num_vars)
    for i, key in enumerate(child_problem.var_keys):
        v[i] = parent_vals.get(key, kappa)

    for (layer, j), phase in new_splits.items():
        z_idx = child_problem.var_index[("z", layer, j)]
        if phase == ACTIVE:
            v[z_idx] = max(v[z_idx], kappa)
        else:
            v[z_idx] = min(v[z_idx], -kappa)

    eq_duals = dict(parent_solution.eq_duals)
    ineq_duals = dict(parent_solution.ineq_duals)
    return WarmStart(v=v, eq_duals=eq_duals, ineq_duals=ineq_duals)


def parent_solution_vector(problem: MpccProblem, solution: MpccSolution) -> np.ndarray:
    """Reassemble the flat variable vector of a solution for its problem."""
    net = problem.network
    v = np.zeros(problem.num_vars)
    v[: net.input_dim] = solution.x
    # replay the network equations to recover z values consistent with x
    lows, ups, _ = effective_intervals(problem.bounds, problem.splits)
    pair_pos = {key: i for i, key in enumerate(problem.pair_neurons)}
    h = solution.x
    for k in range(net.num_hidden_layers):
        z = net.weights[k] @ h + net.biases[k]
        post = np.zeros_like(z)
        for j in range(z.shape[0]):
            key = (k, j)
            if key in pair_pos:
                post[j] = solution.p[pair_pos[key]]
                z[j] = solution.p[pair_pos[key]] - solution.q[pair_pos[key]]
                v[problem.var_index[("p", k, j)]] = solution.p[pair_pos[key]]
                v[problem.var_index[("q", k, j)]] = solution.q[pair_pos[key]]
            elif key in problem.splits:
                phase = problem.splits.assignments[key]
                post[j] = z[j] if phase == ACTIVE else 0.0
            else:
                post[j] = z[j] if lows[k][j] >= 0 else 0.0
            v[problem.var_index[("z", k, j)]] = z[j]
        h = post
    return v


def region_lp_polish(
    network: ReluNetwork,
    spec: Specification,
    instance: VerificationInstance,
    pattern: dict,
    bounds: LayerBounds | None = None,
    tol: float = 1e-9,
) -> tuple[float, np.ndarray | None]:
    """Exact solve of the domain with every unstable phase fixed by pattern.

    Fixing all phases removes every pair variable and product constraint, so
    the program is linear and the interior-point method solves it globally.
    Returns (+inf, None) when the pattern region is empty.
    """
    if bounds is None:
        bounds = ibp_bounds(network, instance.x0, instance.delta, instance.norm)
    missing = [key for key in bounds.unstable if key not in pattern]
    if missing:
        raise ValueError(f"pattern must cover all unstable neurons, missing {missing}")
    splits = SplitSet(
        {key: (ACTIVE if pattern[key] else INACTIVE) for key in bounds.unstable}
    )
    problem = build_problem(network, spec, instance, bounds, splits)
    sol = solve(problem, seed=0, restarts=0, tol=tol, max_iter=200)
    if not sol.feasible:
        return math.inf, None
    return sol.objective, sol.x
