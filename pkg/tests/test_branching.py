import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reluverify import toynets
from reluverify.bounds import ACTIVE, INACTIVE, EMPTY_SPLITS, SplitSet, ibp_bounds
from reluverify.branching import (
    BranchScore,
    alignment_fraction,
    base_scores,
    pattern_aligned_scores,
    pick_branch_neuron,
    select_domain,
)


class FakeDomain:
    def __init__(self, lower, seq):
        self.lower = lower
        self.insertion_seq = seq


class TestBaseScores:
    def test_singleton_unstable_returned(self):
        # tiny box: engineer a single unstable neuron artificially
        inst = toynets.random_instance((2, 8, 8, 2), seed=10, delta=0.1)
        b = ibp_bounds(inst.network, inst.x0, inst.delta)
        keys = b.unstable_sorted()
        splits = SplitSet(
            {k: ACTIVE for k in keys[1:]}
        )
        scores = base_scores(inst.network, inst.spec, inst, b, splits)
        assert set(scores) == {keys[0]}

    def test_hinge_root_scores_both(self, hinge_instance, hinge_bounds):
        scores = base_scores(
            hinge_instance.network, hinge_instance.spec, hinge_instance,
            hinge_bounds, EMPTY_SPLITS,
        )
        assert set(scores) == {(0, 0), (0, 1)}

    def test_rescoring_counts_four_child_bounds(self, hinge_instance, hinge_bounds, monkeypatch):
        import reluverify.branching as br

        calls = {"n": 0}
        original = br.crown_lower_bound

        def counting(*args, **kwargs):
            calls["n"] += 1
            return original(*args, **kwargs)

        monkeypatch.setattr(br, "crown_lower_bound", counting)
        base_scores(
            hinge_instance.network, hinge_instance.spec, hinge_instance,
            hinge_bounds, EMPTY_SPLITS,
        )
        # one parent evaluation plus two children for each of the two neurons
        assert calls["n"] == 1 + 4

    def test_no_unstable_raises(self):
        inst = toynets.two_neuron_instance(delta=0.0, x0=np.array([0.3]))
        b = ibp_bounds(inst.network, inst.x0, 0.0)
        with pytest.raises(ValueError, match="no unstable"):
            base_scores(inst.network, inst.spec, inst, b, EMPTY_SPLITS)


class TestAlignment:
    def test_no_splits_zero(self):
        assert alignment_fraction(EMPTY_SPLITS, {(0, 0): 1}, {(0, 0)}) == 0.0

    def test_full_match_one(self):
        unstable = {(0, 0), (0, 1)}
        splits = SplitSet({(0, 0): ACTIVE, (0, 1): INACTIVE})
        pattern = {(0, 0): 1, (0, 1): 0}
        assert alignment_fraction(splits, pattern, unstable) == 1.0

    def test_half_match(self):
        unstable = {(0, 0), (0, 1), (1, 0), (1, 1)}
        splits = SplitSet({(0, 0): ACTIVE, (0, 1): ACTIVE})
        pattern = {(0, 0): 1, (0, 1): 1, (1, 0): 0, (1, 1): 0}
        assert alignment_fraction(splits, pattern, unstable) == 0.5

    def test_mismatched_split_not_counted(self):
        unstable = {(0, 0), (0, 1)}
        splits = SplitSet({(0, 0): ACTIVE})
        assert alignment_fraction(splits, {(0, 0): 0, (0, 1): 1}, unstable) == 0.0

    @settings(max_examples=40, deadline=None)
    @given(perm_seed=st.integers(0, 1000))
    def test_order_invariance(self, perm_seed):
        rng = np.random.default_rng(perm_seed)
        unstable = [(0, j) for j in range(6)]
        phases = rng.integers(0, 2, 6)
        pattern = {key: int(rng.integers(0, 2)) for key in unstable}
        order = rng.permutation(6)
        splits = EMPTY_SPLITS
        values = []
        for idx in order:
            key = unstable[idx]
            splits = splits.with_split(key[0], key[1], int(phases[idx]))
        values.append(alignment_fraction(splits, pattern, set(unstable)))
        direct = SplitSet({unstable[i]: int(phases[i]) for i in range(6)})
        assert alignment_fraction(direct, pattern, set(unstable)) == values[0]


class TestCombined:
    def test_combination_arithmetic(self):
        scores = pattern_aligned_scores(
            base={(0, 0): 2.0},
            candidate_splits=[(0, 0)],
            incumbent_pattern={(0, 0): 1, (0, 1): 0},
            align_weight=0.1,
            current_splits=SplitSet({(0, 1): INACTIVE}),
            unstable={(0, 0), (0, 1)},
        )
        [score] = scores
        # child fixing (0,0) active matches both of the two unstable neurons
        assert score.alignment == 1.0
        assert score.combined == pytest.approx(2.0 + 0.1 * 1.0)
        assert score.combined == score.base + 0.1 * score.alignment

    def test_zero_weight_reduces_to_base_order(self):
        inst = toynets.random_instance((2, 8, 8, 2), seed=3, delta=0.2)
        b = ibp_bounds(inst.network, inst.x0, inst.delta)
        base = base_scores(inst.network, inst.spec, inst, b, EMPTY_SPLITS)
        candidates = sorted(base, key=lambda k: (-base[k], k))[:3]
        pattern = {key: 1 for key in b.unstable}
        plain = pattern_aligned_scores(base, candidates, pattern, 0.0, EMPTY_SPLITS, b.unstable)
        assert pick_branch_neuron(plain) == max(
            candidates, key=lambda k: (base[k], [-c for c in k])
        )

    def test_weight_monotone_for_matching_split(self):
        base = {(0, 0): 1.0, (0, 1): 1.0}
        pattern = {(0, 0): 1, (0, 1): 0}
        unstable = {(0, 0), (0, 1)}
        prev = None
        for lam in (0.0, 0.1, 0.5, 1.0):
            scores = {
                s.neuron: s.combined
                for s in pattern_aligned_scores(
                    base, [(0, 0), (0, 1)], pattern, lam, EMPTY_SPLITS, unstable
                )
            }
            diff = scores[(0, 0)] - scores[(0, 1)]
            if prev is not None:
                assert diff >= prev - 1e-12
            prev = diff

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            pattern_aligned_scores({}, [], {}, -0.1, EMPTY_SPLITS, set())

    def test_ties_break_to_lowest_index(self):
        scores = [
            BranchScore(neuron=(1, 3), base=1.0, alignment=0.0, combined=1.0),
            BranchScore(neuron=(0, 5), base=1.0, alignment=0.0, combined=1.0),
            BranchScore(neuron=(0, 2), base=1.0, alignment=0.0, combined=1.0),
        ]
        assert pick_branch_neuron(scores) == (0, 2)


class TestSelectDomain:
    def test_min_lower_bound_wins(self):
        queue = [FakeDomain(-1.0, 0), FakeDomain(-0.2, 1), FakeDomain(0.5, 2)]
        assert select_domain(queue).lower == -1.0
        assert len(queue) == 2

    def test_fifo_among_ties(self):
        queue = [FakeDomain(-1.0, 5), FakeDomain(-1.0, 2), FakeDomain(-1.0, 9)]
        assert select_domain(queue).insertion_seq == 2

    def test_singleton(self):
        queue = [FakeDomain(3.0, 0)]
        assert select_domain(queue).lower == 3.0
        assert not queue

    def test_empty_signals_termination(self):
        with pytest.raises(IndexError):
            select_domain([])
