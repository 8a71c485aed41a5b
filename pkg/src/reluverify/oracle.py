"""Exact desk-scale ground truth by activation-pattern enumeration.

With every unstable ReLU assigned a phase, each hidden pre-activation is an
affine function of the input, so a pattern region is a polytope in input
space and the minimum of the margin over it is a linear program (plus one
quadratic ball row for two-norm regions). Enumerating feasible patterns
depth-first with per-prefix feasibility checks visits only the linear
regions the input set actually touches, which keeps the search far below
the 2^|U| worst case. Regions are closed (each face belongs to both
adjacent patterns), so the minimum is attained regardless of tie handling.

The same interior-point core as the upper-bound solver does the numeric
work, but the subproblems here are built independently in input space, so
the two routes cross-check each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bounds import LayerBounds, ibp_bounds
from .ipm import IpmOptions, IpmProblem, IpmStart, solve_ipm
from .network import ReluNetwork, Specification, VerificationInstance, forward_eval, spec_value

__all__ = [
    "PatternRegion",
    "PatternCapError",
    "global_min",
    "solve_pattern_lp",
    "pgd_upper_bound",
]

FEAS_TOL = 1e-9


class PatternCapError(ValueError):
    """Refusal to enumerate: too many unstable neurons for exact search."""

    def __init__(self, count: int, cap: int):
        super().__init__(
            f"{count} unstable neurons exceed the enumeration cap of {cap}"
        )
        self.count = count
        self.cap = cap


@dataclass(frozen=True)
class PatternRegion:
    """One fixed activation pattern: its feasibility, optimum, and argmin."""

    pattern: dict
    feasible: bool
    value: float
    argmin: np.ndarray | None


class _AffineLayers:
    """Affine maps x -> z^(k) for a (partial) phase assignment.

    maps[k] = (M, m) with z^(k) = M x + m, available for layer k once all
    earlier layers have assigned phases.
    """

    def __init__(self, network: ReluNetwork, bounds: LayerBounds):
        self.network = network
        self.bounds = bounds
        self.d = network.input_dim

    def first_layer(self):
        return self.network.weights[0].copy(), self.network.biases[0].copy()

    def next_layer(self, k: int, m_mat: np.ndarray, m_off: np.ndarray, bits: np.ndarray):
        """Compose layer k's post-activation (given phase bits) with layer k+1."""
        gate = bits.astype(float)
        post_mat = gate[:, None] * m_mat
        post_off = gate * m_off
        w = self.network.weights[k + 1]
        return w @ post_mat, w @ post_off + self.network.biases[k + 1]


def _stable_bits(bounds: LayerBounds, k: int) -> np.ndarray:
    # 1 for certified-active, 0 for certified-inactive, -1 for unstable
    lo, up = bounds.lower[k], bounds.upper[k]
    bits = np.full(lo.shape, -1, dtype=np.int8)
    bits[lo >= 0] = 1
    bits[up <= 0] = 0
    return bits


def _region_problem(instance, rows, offs, obj, obj_const, margin_var: bool):
    """Input-space program: min obj . x (or max margin) over the region."""
    d = instance.network.input_dim
    n = d + (1 if margin_var else 0)
    x0, delta = instance.x0, instance.delta

    g_rows, g_off = [], []
    if delta == 0.0:
        a_eq = np.hstack([np.eye(d), np.zeros((d, n - d))])
        b_eq = x0.copy()
    else:
        a_eq = None
        b_eq = None
        eye = np.eye(d)
        for i in range(d):
            row = np.zeros(n)
            row[:d] = eye[i]
            g_rows.append(row.copy())
            g_off.append(float(delta - x0[i]))
            row2 = np.zeros(n)
            row2[:d] = -eye[i]
            g_rows.append(row2)
            g_off.append(float(delta + x0[i]))
    for row, off in zip(rows, offs):
        full = np.zeros(n)
        full[:d] = row
        if margin_var:
            full[d] = -1.0  # sign-margin t: row . x + off - t >= 0
        g_rows.append(full)
        g_off.append(float(off))

    ball = None
    if instance.norm == "two" and delta > 0.0:
        ball = (np.arange(d), x0.copy(), delta)

    objective = np.zeros(n)
    if margin_var:
        objective[d] = -1.0  # maximize t
    else:
        objective[:d] = obj
    return IpmProblem(
        n=n,
        obj=objective,
        obj_const=obj_const if not margin_var else 0.0,
        a_eq=a_eq,
        b_eq=b_eq,
        g_lin=np.array(g_rows) if g_rows else None,
        g_off=np.array(g_off) if g_rows else None,
        ball=ball,
    )


def _region_feasible(instance, rows, offs) -> bool:
    """Closed-region feasibility via the max-margin program."""
    if not rows:
        return True
    problem = _region_problem(instance, rows, offs, None, 0.0, margin_var=True)
    d = instance.network.input_dim
    v0 = np.zeros(problem.n)
    v0[:d] = instance.x0
    v0[d] = min([row @ instance.x0 + off for row, off in zip(rows, offs)] + [0.0]) - 0.1
    res = solve_ipm(problem, IpmStart(v=v0), IpmOptions(tol=1e-9, max_iter=200))
    margin = res.v[d]
    return margin >= -FEAS_TOL


def _region_minimum(instance, rows, offs, obj, obj_const):
    problem = _region_problem(instance, rows, offs, obj, obj_const, margin_var=False)
    d = instance.network.input_dim
    v0 = np.zeros(problem.n)
    v0[:d] = instance.x0
    res = solve_ipm(problem, IpmStart(v=v0), IpmOptions(tol=1e-9, max_iter=200))
    feasible = res.status == "solved" or res.primal_infeasibility <= 1e-7
    return feasible, res.objective, res.v[:d].copy()


def _pattern_rows(instance, bounds, assignment):
    """Sign rows for a full pattern, plus the affine objective over x."""
    net = instance.network
    aff = _AffineLayers(net, bounds)
    m_mat, m_off = aff.first_layer()
    rows, offs = [], []
    hidden = net.num_hidden_layers
    for k in range(hidden):
        stable = _stable_bits(bounds, k)
        bits = np.where(stable >= 0, stable, 0).astype(np.int8)
        for (kk, j), bit in assignment.items():
            if kk == k:
                bits[j] = bit
        for kk, j in bounds.unstable:
            if kk != k:
                continue
            bit = assignment[(kk, j)]
            sign = 1.0 if bit == 1 else -1.0
            rows.append(sign * m_mat[j])
            offs.append(sign * m_off[j])
        if k + 1 < hidden:
            m_mat, m_off = aff.next_layer(k, m_mat, m_off, bits)
        else:
            gate = bits.astype(float)
            post_mat = gate[:, None] * m_mat
            post_off = gate * m_off
    c = instance.spec.objective_vector(net.output_dim)
    row_out = c @ net.weights[-1]
    obj = row_out @ post_mat
    obj_const = float(row_out @ post_off + c @ net.biases[-1])
    return rows, offs, obj, obj_const


def solve_pattern_lp(
    network: ReluNetwork,
    spec: Specification,
    instance: VerificationInstance,
    pattern,
    bounds: LayerBounds | None = None,
) -> PatternRegion:
    """Exact optimum of the margin over one pattern-fixed region.

    pattern maps every unstable (layer, neuron) to a phase bit; a sequence is
    also accepted and is matched against the sorted unstable set.
    """
    if bounds is None:
        bounds = ibp_bounds(network, instance.x0, instance.delta, instance.norm)
    keys = bounds.unstable_sorted()
    if isinstance(pattern, dict):
        assignment = {key: int(pattern[key]) for key in keys}
    else:
        bits = list(pattern)
        if len(bits) != len(keys):
            raise ValueError(
                f"pattern length {len(bits)} != number of unstable neurons {len(keys)}"
            )
        assignment = {key: int(bit) for key, bit in zip(keys, bits)}
    rows, offs, obj, obj_const = _pattern_rows(instance, bounds, assignment)
    if not _region_feasible(instance, rows, offs):
        return PatternRegion(pattern=assignment, feasible=False, value=math.inf, argmin=None)
    ok, value, x = _region_minimum(instance, rows, offs, obj, obj_const)
    if not ok:
        return PatternRegion(pattern=assignment, feasible=False, value=math.inf, argmin=None)
    return PatternRegion(pattern=assignment, feasible=True, value=value, argmin=x)


def global_min(
    network: ReluNetwork,
    spec: Specification,
    instance: VerificationInstance,
    pattern_cap: int = 20,
    bounds: LayerBounds | None = None,
) -> tuple[float, np.ndarray, int]:
    """Exact minimum margin by depth-first enumeration of feasible patterns.

    Refuses instances with more unstable neurons than pattern_cap. Returns
    (f_star, x_star, regions_solved) where regions_solved counts the leaf
    programs actually optimized.
    """
    if bounds is None:
        bounds = ibp_bounds(network, instance.x0, instance.delta, instance.norm)
    unstable = bounds.unstable_sorted()
    if len(unstable) > pattern_cap:
        raise PatternCapError(len(unstable), pattern_cap)

    net = network
    aff = _AffineLayers(net, bounds)
    hidden = net.num_hidden_layers
    best = [math.inf, None, 0]

    c = spec.objective_vector(net.output_dim)
    row_out = c @ net.weights[-1]

    def descend(k, m_mat, m_off, assignment, rows, offs):
        stable = _stable_bits(bounds, k)
        layer_unstable = [j for (kk, j) in unstable if kk == k]

        def assign(idx, bits_so_far):
            if idx == len(layer_unstable):
                bits = np.where(stable >= 0, stable, 0).astype(np.int8)
                for j, bit in bits_so_far.items():
                    bits[j] = bit
                if k + 1 < hidden:
                    nm, no = aff.next_layer(k, m_mat, m_off, bits)
                    descend(k + 1, nm, no, assignment, rows, offs)
                else:
                    gate = bits.astype(float)
                    obj = row_out @ (gate[:, None] * m_mat)
                    obj_const = float(row_out @ (gate * m_off) + c @ net.biases[-1])
                    ok, value, x = _region_minimum(instance, rows, offs, obj, obj_const)
                    best[2] += 1
                    if ok and value < best[0]:
                        best[0] = value
                        best[1] = x
                return
            j = layer_unstable[idx]
            for bit in (1, 0):
                sign = 1.0 if bit else -1.0
                rows.append(sign * m_mat[j])
                offs.append(sign * m_off[j])
                assignment[(k, j)] = bit
                if _region_feasible(instance, rows, offs):
                    assign(idx + 1, {**bits_so_far, j: bit})
                rows.pop()
                offs.pop()
                del assignment[(k, j)]

        assign(0, {})

    m_mat, m_off = aff.first_layer()
    descend(0, m_mat, m_off, {}, [], [])

    if best[1] is None:
        raise RuntimeError("no feasible pattern region found; bounds are inconsistent")
    return float(best[0]), best[1], int(best[2])


def pgd_upper_bound(
    network: ReluNetwork,
    spec: Specification,
    instance: VerificationInstance,
    steps: int = 100,
    restarts: int = 5,
    step_size: float | None = None,
    seed: int = 0,
) -> tuple[float, np.ndarray]:
    """Projected gradient descent on the margin over the input region.

    Subgradient through each ReLU follows the current activation pattern;
    infinity-norm regions take sign steps, two-norm regions normalized
    gradient steps with ball projection. Every iterate is feasible, so the
    best exact margin seen is always a sound upper bound.
    """
    if steps < 1 or restarts < 1:
        raise ValueError("steps and restarts must be >= 1")
    x0, delta = instance.x0, instance.delta
    d = network.input_dim
    if step_size is None:
        step_size = max(2.5 * delta / steps, 1e-12)
    rng = np.random.default_rng(seed)
    c = spec.objective_vector(network.output_dim)

    def project(x):
        if instance.norm == "two":
            off = x - x0
            r = np.linalg.norm(off)
            if r > delta and r > 0:
                return x0 + off * (delta / r)
            return x
        return np.clip(x, x0 - delta, x0 + delta)

    def grad(x):
        _, preacts, pattern = forward_eval(network, x)
        row = c @ network.weights[-1]
        for k in range(network.num_hidden_layers - 1, -1, -1):
            row = (row * pattern[k]) @ network.weights[k]
        return row

    best_val = spec_value(network, spec, x0)
    best_x = x0.copy()
    for r in range(restarts):
        if r == 0:
            x = x0.copy()
        else:
            x = project(x0 + rng.uniform(-delta, delta, size=d))
        val = spec_value(network, spec, x)
        if val < best_val:
            best_val, best_x = val, x.copy()
        for _ in range(steps):
            g = grad(x)
            if instance.norm == "two":
                nrm = np.linalg.norm(g)
                if nrm > 0:
                    x = project(x - step_size * g / nrm)
            else:
                x = project(x - step_size * np.sign(g))
            val = spec_value(network, spec, x)
            if val < best_val:
                best_val, best_x = val, x.copy()
    return float(best_val), best_x
