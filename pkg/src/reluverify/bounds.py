"""Certified bounds: interval propagation and backward linear bound propagation.

Lower bounds on the specification margin over an input region come from a
backward pass that relaxes each unstable ReLU with the standard triangle
(chord above, a slope-alpha line below) and handles split neurons exactly.
Split sign constraints additionally enter through nonnegative multipliers on
the pre-activations, which a projected-gradient ascent can optimize jointly
with the relaxation slopes.

Everything here is a pure function of immutable inputs; bound computations
for different domains can run concurrently without shared state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .network import ReluNetwork, Specification, VerificationInstance

__all__ = [
    "ACTIVE",
    "INACTIVE",
    "LayerBounds",
    "LinearBound",
    "SplitSet",
    "ibp_bounds",
    "crown_lower_bound",
    "optimize_relaxation",
]

ACTIVE = 1
INACTIVE = 0

# neuron handling during the backward pass
_ZERO, _PASS, _RELAX = 0, 1, 2


@dataclass(frozen=True)
class LayerBounds:
    """Certified pre-activation intervals for every hidden layer.

    unstable collects the (layer, neuron) pairs whose interval strictly
    straddles zero; only those ever need splitting or complementarity
    variables. Indices are 0-based.
    """

    lower: list
    upper: list
    unstable: frozenset

    def __post_init__(self):
        for k, (lo, up) in enumerate(zip(self.lower, self.upper)):
            if np.any(lo > up):
                raise ValueError(f"layer {k}: lower bound exceeds upper bound")

    @property
    def num_unstable(self) -> int:
        return len(self.unstable)

    def unstable_sorted(self) -> list[tuple[int, int]]:
        return sorted(self.unstable)


@dataclass(frozen=True)
class LinearBound:
    """Affine lower bound coeffs . x + offset <= f(x) on its domain."""

    coeffs: np.ndarray
    offset: float

    def value(self, x) -> float:
        return float(self.coeffs @ np.asarray(x, dtype=float) + self.offset)


@dataclass(frozen=True)
class SplitSet:
    """Partial ReLU phase assignment: (layer, neuron) -> ACTIVE or INACTIVE."""

    assignments: dict = field(default_factory=dict)

    def __post_init__(self):
        for key, phase in self.assignments.items():
            if phase not in (ACTIVE, INACTIVE):
                raise ValueError(f"split {key}: phase must be ACTIVE or INACTIVE")

    def with_split(self, layer: int, neuron: int, phase: int) -> "SplitSet":
        if (layer, neuron) in self.assignments:
            raise ValueError(f"neuron ({layer}, {neuron}) already split")
        new = dict(self.assignments)
        new[(layer, neuron)] = phase
        return SplitSet(new)

    def validate(self, bounds: LayerBounds) -> None:
        for key in self.assignments:
            if key not in bounds.unstable:
                raise ValueError(f"split of non-unstable neuron {key}")

    def __len__(self):
        return len(self.assignments)

    def __contains__(self, key):
        return key in self.assignments


EMPTY_SPLITS = SplitSet({})


def input_box(x0: np.ndarray, delta: float) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned box around x0. For the two-norm this is the enclosing box
    of the ball, a sound but looser region for lower bounds."""
    return x0 - delta, x0 + delta


def ibp_bounds(network: ReluNetwork, x0, delta: float, norm: str = "inf") -> LayerBounds:
    """Interval pre-activation bounds for every hidden layer.

    norm='two' is handled through the enclosing box, so the intervals stay
    sound for the ball (documented relaxation).
    """
    x0 = np.asarray(x0, dtype=float)
    lo, hi = input_box(x0, delta)
    lows, ups = [], []
    for i, (w, b) in enumerate(zip(network.weights, network.biases)):
        mid = (hi + lo) / 2.0
        rad = (hi - lo) / 2.0
        center = w @ mid + b
        spread = np.abs(w) @ rad
        zl, zu = center - spread, center + spread
        if i < len(network.weights) - 1:
            lows.append(zl)
            ups.append(zu)
            lo, hi = np.maximum(zl, 0.0), np.maximum(zu, 0.0)
    unstable = frozenset(
        (k, int(j))
        for k, (zl, zu) in enumerate(zip(lows, ups))
        for j in np.nonzero((zl < 0) & (zu > 0))[0]
    )
    return LayerBounds(lower=lows, upper=ups, unstable=unstable)


def effective_intervals(bounds: LayerBounds, splits: SplitSet):
    """Root intervals with the split neurons clipped to their fixed phase.

    Returns (lows, ups, feasible). Fixing active raises the lower bound to 0,
    fixing inactive drops the upper bound to 0; if that crosses, the split
    set is infeasible. Intervals of other neurons are kept frozen from the
    root pass.
    """
    lows = [lo.copy() for lo in bounds.lower]
    ups = [up.copy() for up in bounds.upper]
    feasible = True
    for (k, j), phase in splits.assignments.items():
        if phase == ACTIVE:
            lows[k][j] = max(lows[k][j], 0.0)
        else:
            ups[k][j] = min(ups[k][j], 0.0)
        if lows[k][j] > ups[k][j]:
            feasible = False
    return lows, ups, feasible


def _categories(lows, ups, splits: SplitSet):
    cats = []
    for k, (lo, up) in enumerate(zip(lows, ups)):
        cat = np.full(lo.shape, _RELAX, dtype=np.int8)
        cat[lo >= 0] = _PASS
        cat[up <= 0] = _ZERO
        cats.append(cat)
    for (k, j), phase in splits.assignments.items():
        cats[k][j] = _PASS if phase == ACTIVE else _ZERO
    return cats


def _default_alphas(lows, ups, cats):
    # adaptive init: slope 1 when the interval leans positive, else 0
    return [
        np.where(up >= -lo, 1.0, 0.0) * (cat == _RELAX)
        for lo, up, cat in zip(lows, ups, cats)
    ]


def _split_signs(widths, splits: SplitSet):
    signs = [np.zeros(w) for w in widths]
    for (k, j), phase in splits.assignments.items():
        signs[k][j] = 1.0 if phase == ACTIVE else -1.0
    return signs


def _backward_pass(network, c_out, x0, delta, lows, ups, cats, alphas, betas_arr,
                   signs, want_grad=False):
    """One backward sweep of the relaxed objective minus split multipliers.

    Returns (lb, coeffs, offset, layer_rows, grad_alpha, grad_beta) where
    layer_rows[k] is the coefficient row over the post-activations of hidden
    layer k (used by branching scores), and the gradients are with respect to
    the relaxation slopes and the split multipliers at the current point.
    """
    hidden = network.num_hidden_layers
    w_out = network.weights[-1]
    b_out = network.biases[-1]

    a = c_out @ w_out
    offset = float(c_out @ b_out)
    layer_rows = [None] * hidden
    lam_cache = [None] * hidden
    a_cache = [None] * hidden
    slope_cache = [None] * hidden
    icept_cache = [None] * hidden

    for k in range(hidden - 1, -1, -1):
        layer_rows[k] = a
        lo, up, cat = lows[k], ups[k], cats[k]
        relax = cat == _RELAX
        width = np.where(relax, up - lo, 1.0)
        slope = np.where(relax, up / width, 0.0)
        icept = np.where(relax, -slope * lo, 0.0)

        lam = np.zeros_like(a)
        pas = cat == _PASS
        lam[pas] = a[pas]
        pos = relax & (a >= 0)
        neg = relax & (a < 0)
        lam[pos] = alphas[k][pos] * a[pos]
        lam[neg] = slope[neg] * a[neg]
        offset += float(a[neg] @ icept[neg])
        lam = lam - betas_arr[k] * signs[k]

        a_cache[k] = a
        lam_cache[k] = lam
        slope_cache[k] = slope
        icept_cache[k] = icept

        offset += float(lam @ network.biases[k])
        a = lam @ network.weights[k]

    lb = float(a @ x0 - delta * np.abs(a).sum() + offset)

    grad_alpha = grad_beta = None
    if want_grad:
        grad_alpha = [np.zeros_like(al) for al in alphas]
        grad_beta = [np.zeros_like(be) for be in betas_arr]
        g_a = x0 - delta * np.sign(a)
        for k in range(hidden):
            g_lam = network.weights[k] @ g_a + network.biases[k]
            grad_beta[k] = -signs[k] * g_lam
            a_k = a_cache[k]
            cat = cats[k]
            relax = cat == _RELAX
            pos = relax & (a_k >= 0)
            grad_alpha[k][pos] = a_k[pos] * g_lam[pos]
            g_a = np.zeros_like(a_k)
            pas = cat == _PASS
            g_a[pas] = g_lam[pas]
            g_a[pos] = alphas[k][pos] * g_lam[pos]
            neg = relax & (a_k < 0)
            g_a[neg] = slope_cache[k][neg] * g_lam[neg] + icept_cache[k][neg]

    return lb, a, offset, layer_rows, grad_alpha, grad_beta


def interval_objective_bound(network, spec, x0, delta, bounds, splits=EMPTY_SPLITS):
    """Lower bound on the margin from pure interval arithmetic on the domain.

    Propagates fresh intervals through the split-clipped ReLUs, intersecting
    with the frozen root intervals at every layer.
    """
    lows, ups, feasible = effective_intervals(bounds, splits)
    if not feasible:
        return math.inf
    cats = _categories(lows, ups, splits)
    x0 = np.asarray(x0, dtype=float)
    lo, hi = input_box(x0, delta)
    for k in range(network.num_hidden_layers):
        w, b = network.weights[k], network.biases[k]
        mid, rad = (hi + lo) / 2.0, (hi - lo) / 2.0
        center = w @ mid + b
        spread = np.abs(w) @ rad
        zl = np.maximum(center - spread, lows[k])
        zu = np.minimum(center + spread, ups[k])
        zu = np.maximum(zu, zl)  # guard against empty intersection noise
        cat = cats[k]
        lo = np.where(cat == _ZERO, 0.0, np.maximum(zl, 0.0))
        hi = np.where(cat == _ZERO, 0.0, np.maximum(zu, 0.0))
    c = spec.objective_vector(network.output_dim)
    row = c @ network.weights[-1]
    mid, rad = (hi + lo) / 2.0, (hi - lo) / 2.0
    return float(row @ mid - np.abs(row) @ rad + c @ network.biases[-1])


def _prepare(network, spec, bounds, splits, betas):
    lows, ups, feasible = effective_intervals(bounds, splits)
    if not feasible:
        return None
    splits.validate(bounds)
    cats = _categories(lows, ups, splits)
    widths = network.hidden_widths
    signs = _split_signs(widths, splits)
    if betas is None:
        betas_arr = [np.zeros(w) for w in widths]
    else:
        betas_arr = [np.asarray(b, dtype=float) for b in betas]
        for b in betas_arr:
            if np.any(b < 0):
                raise ValueError("split multipliers must be nonnegative")
    c_out = spec.objective_vector(network.output_dim)
    return lows, ups, cats, signs, betas_arr, c_out


def crown_lower_bound(
    network: ReluNetwork,
    spec: Specification,
    x0,
    delta: float,
    norm: str = "inf",
    bounds: LayerBounds | None = None,
    splits: SplitSet = EMPTY_SPLITS,
    betas=None,
) -> tuple[float, LinearBound | None]:
    """Backward linear lower bound on the margin over the split domain.

    Returns (lb, linear) with linear.coeffs . x + linear.offset <= f(x) for
    every x in the region that satisfies the split sign constraints. The
    returned lb is the better of the backward bound and the interval
    objective bound, so it never falls below plain interval arithmetic.
    An infeasible split set (bound crossing after phase fixing) yields
    (+inf, None), which branch-and-bound treats as a pruned domain.
    """
    x0 = np.asarray(x0, dtype=float)
    if bounds is None:
        bounds = ibp_bounds(network, x0, delta, norm)
    prep = _prepare(network, spec, bounds, splits, betas)
    if prep is None:
        return math.inf, None
    lows, ups, cats, signs, betas_arr, c_out = prep
    alphas = _default_alphas(lows, ups, cats)
    lb_bw, a, offset, _, _, _ = _backward_pass(
        network, c_out, x0, delta, lows, ups, cats, alphas, betas_arr, signs
    )
    lb_ibp = interval_objective_bound(network, spec, x0, delta, bounds, splits)
    if lb_ibp > lb_bw:
        return lb_ibp, LinearBound(np.zeros_like(x0), lb_ibp)
    return lb_bw, LinearBound(a, offset)


def backward_coefficient_rows(network, spec, x0, delta, bounds, splits=EMPTY_SPLITS):
    """Coefficient row over each hidden layer's post-activations from one
    plain backward pass, for branching scores. None if the splits are
    infeasible."""
    x0 = np.asarray(x0, dtype=float)
    prep = _prepare(network, spec, bounds, splits, None)
    if prep is None:
        return None
    lows, ups, cats, signs, betas_arr, c_out = prep
    alphas = _default_alphas(lows, ups, cats)
    _, _, _, rows, _, _ = _backward_pass(
        network, c_out, x0, delta, lows, ups, cats, alphas, betas_arr, signs
    )
    return rows


def optimize_relaxation(
    network: ReluNetwork,
    spec: Specification,
    instance: VerificationInstance,
    splits: SplitSet = EMPTY_SPLITS,
    iters: int = 20,
    step: float = 0.1,
    decay: float = 0.98,
    bounds: LayerBounds | None = None,
    init_state: tuple | None = None,
    return_state: bool = False,
):
    """Projected-gradient ascent over relaxation slopes and split multipliers.

    Slopes live in [0, 1], multipliers in [0, inf). Returns the best bound
    seen, so the result is monotone in the iteration budget and never below
    the iteration-0 value (which equals crown_lower_bound). A non-finite
    gradient stops the ascent at the best bound so far.

    init_state warm-starts the ascent from a related domain's (slopes,
    multipliers); with return_state the tuple (lb, state) comes back so
    children can inherit.
    """
    if iters < 0:
        raise ValueError("iters must be >= 0")
    x0 = instance.x0
    delta = instance.delta
    if bounds is None:
        bounds = ibp_bounds(network, x0, delta, instance.norm)
    prep = _prepare(network, spec, bounds, splits, None)
    if prep is None:
        return (math.inf, None) if return_state else math.inf
    lows, ups, cats, signs, betas_arr, c_out = prep
    if init_state is not None:
        alphas = [np.clip(a.copy(), 0.0, 1.0) for a in init_state[0]]
        betas_arr = [np.maximum(b.copy(), 0.0) for b in init_state[1]]
    else:
        alphas = _default_alphas(lows, ups, cats)
    best = interval_objective_bound(network, spec, x0, delta, bounds, splits)
    best_state = (tuple(a.copy() for a in alphas), tuple(b.copy() for b in betas_arr))

    step_t = step
    for it in range(iters + 1):
        want_grad = it < iters
        lb, _, _, _, g_alpha, g_beta = _backward_pass(
            network, c_out, x0, delta, lows, ups, cats, alphas, betas_arr, signs,
            want_grad=want_grad,
        )
        if lb > best:
            best = lb
            best_state = (tuple(a.copy() for a in alphas), tuple(b.copy() for b in betas_arr))
        if not want_grad:
            break
        finite = all(np.isfinite(g).all() for g in g_alpha) and all(
            np.isfinite(g).all() for g in g_beta
        )
        if not finite:
            break
        for k in range(len(alphas)):
            alphas[k] = np.clip(alphas[k] + step_t * g_alpha[k], 0.0, 1.0)
            betas_arr[k] = np.maximum(betas_arr[k] + step_t * g_beta[k], 0.0)
        step_t *= decay
    if return_state:
        return best, best_state
    return best
