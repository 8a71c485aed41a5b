"""Neuron selection for branch-and-bound splits.

Stage one assigns every unsplit unstable neuron a cheap estimate of the
bound improvement from resolving it: the magnitude of its backward
coefficient times the chord intercept of its relaxation triangle. Stage two
re-scores the top few candidates by actually bounding both children and
taking the smaller improvement. The final score blends in how well the
a-consistent child agrees with the incumbent activation pattern from the
last upper-bound solve, weighted by the instance's alignment weight; weight
zero reproduces the plain filtered-strong-branching order exactly.

Scoring is pure; the domain queue helpers assume a single mutator at a time.
"""

from __future__ import annotations

from dataclasses import dataclass

from .bounds import (
    ACTIVE,
    INACTIVE,
    LayerBounds,
    SplitSet,
    backward_coefficient_rows,
    crown_lower_bound,
    effective_intervals,
)
from .network import ReluNetwork, Specification, VerificationInstance

__all__ = [
    "BranchScore",
    "base_scores",
    "alignment_fraction",
    "pattern_aligned_scores",
    "select_domain",
]

RESCORE_CANDIDATES = 3


@dataclass(frozen=True)
class BranchScore:
    """Score for splitting one neuron: base estimate plus pattern alignment."""

    neuron: tuple
    base: float
    alignment: float
    combined: float

    def __post_init__(self):
        if not 0.0 <= self.alignment <= 1.0:
            raise ValueError("alignment fraction must lie in [0, 1]")


def base_scores(
    network: ReluNetwork,
    spec: Specification,
    instance: VerificationInstance,
    bounds: LayerBounds,
    splits: SplitSet,
    candidates: int = RESCORE_CANDIDATES,
) -> dict:
    """Improvement estimates for every unsplit unstable neuron.

    Cheap stage: |backward coefficient| times the chord intercept
    u * (-l) / (u - l). The top `candidates` neurons are then re-scored by
    bounding both children and taking the minimum improvement over the
    current domain bound. Raises when no unstable neuron is left to split.
    """
    free = [key for key in bounds.unstable_sorted() if key not in splits]
    if not free:
        raise ValueError("no unstable neurons available for branching")

    x0, delta, norm = instance.x0, instance.delta, instance.norm
    rows = backward_coefficient_rows(network, spec, x0, delta, bounds, splits)
    if rows is None:
        raise ValueError("split set is infeasible; nothing to score")
    lows, ups, _ = effective_intervals(bounds, splits)

    scores = {}
    for k, j in free:
        lo, up = lows[k][j], ups[k][j]
        intercept = up * (-lo) / (up - lo) if up > lo else 0.0
        scores[(k, j)] = abs(rows[k][j]) * intercept

    top = sorted(free, key=lambda key: (-scores[key], key))[:candidates]
    parent_lb, _ = crown_lower_bound(
        network, spec, x0, delta, norm, bounds=bounds, splits=splits
    )
    for key in top:
        child_gains = []
        for phase in (ACTIVE, INACTIVE):
            lb, _ = crown_lower_bound(
                network,
                spec,
                x0,
                delta,
                norm,
                bounds=bounds,
                splits=splits.with_split(key[0], key[1], phase),
            )
            child_gains.append(lb - parent_lb)
        scores[key] = min(child_gains)
    return scores


def alignment_fraction(splits: SplitSet, incumbent_pattern: dict, unstable) -> float:
    """Fraction of unstable neurons whose fixed phase matches the incumbent.

    Unsplit neurons never count as matches, and the denominator is the full
    unstable set, so the value is order-independent and lives in [0, 1].
    """
    total = len(unstable)
    if total == 0:
        return 0.0
    matched = 0
    for key, phase in splits.assignments.items():
        bit = 1 if phase == ACTIVE else 0
        if incumbent_pattern.get(key) == bit:
            matched += 1
    return matched / total


def pattern_aligned_scores(
    base: dict,
    candidate_splits,
    incumbent_pattern: dict | None,
    align_weight: float,
    current_splits: SplitSet,
    unstable,
) -> list[BranchScore]:
    """Combine base scores with the alignment of the pattern-consistent child.

    For each candidate neuron the child that follows the incumbent's phase
    gains one more matched split; its alignment fraction scales the weight.
    With weight zero the ordering is exactly the base ordering.
    """
    if align_weight < 0:
        raise ValueError("alignment weight must be nonnegative")
    out = []
    for key in candidate_splits:
        if incumbent_pattern is None or key not in incumbent_pattern:
            align = alignment_fraction(current_splits, incumbent_pattern or {}, unstable)
        else:
            phase = ACTIVE if incumbent_pattern[key] == 1 else INACTIVE
            child = current_splits.with_split(key[0], key[1], phase)
            align = alignment_fraction(child, incumbent_pattern, unstable)
        out.append(
            BranchScore(
                neuron=key,
                base=base[key],
                alignment=align,
                combined=base[key] + align_weight * align,
            )
        )
    return out


def pick_branch_neuron(scores: list[BranchScore]) -> tuple:
    """Highest combined score; ties resolved toward the lowest (layer, index)."""
    if not scores:
        raise ValueError("empty score list")
    best = max(scores, key=lambda s: (s.combined, [-c for c in s.neuron]))
    return best.neuron


def select_domain(queue: list):
    """Pop the domain with the smallest lower bound, FIFO among ties.

    Signals termination on an empty queue by raising IndexError. The queue
    is a plain list of objects with .lower and .insertion_seq; callers must
    serialize access.
    """
    if not queue:
        raise IndexError("domain queue is empty")
    best = min(range(len(queue)), key=lambda i: (queue[i].lower, queue[i].insertion_seq))
    return queue.pop(best)
