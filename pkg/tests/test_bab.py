import math

import numpy as np
import pytest

from reluverify import toynets
from reluverify.bab import GAP, SAFE, UNSAFE, Certificate, compute_metrics, verify
from reluverify.network import spec_value
from reluverify.oracle import global_min

from conftest import sample_box


def test_hinge_unsafe_at_root(hinge_instance):
    cert = verify(toynets.two_neuron_instance(gap_tol=0.01), seed=0)
    assert cert.verdict == UNSAFE
    assert cert.counterexample == pytest.approx([-1.0], abs=1e-4)
    assert cert.global_upper <= -2.9 + 1e-4
    assert cert.rounds == 0
    assert spec_value(
        hinge_instance.network, hinge_instance.spec, cert.counterexample
    ) < 0


def test_point_domain_safe_without_branching():
    inst = toynets.two_neuron_instance(delta=0.0, x0=np.array([1.0]))
    cert = verify(inst, seed=0)
    assert cert.verdict == SAFE
    assert cert.rounds == 0
    assert cert.nlp_solves == 0
    assert cert.global_lower > 0


def test_bracket_and_verdict_signs_against_oracle():
    for seed in range(8):
        inst = toynets.random_instance(
            (2, 8, 8, 2), seed=seed, delta=0.2, gap_tol=1e-3, max_rounds=80
        )
        cert = verify(inst, seed=seed)
        f_star, _, _ = global_min(inst.network, inst.spec, inst)
        assert cert.global_lower - 1e-6 <= f_star <= cert.global_upper + 1e-6
        if cert.verdict == SAFE:
            assert f_star > 0
        if cert.verdict == UNSAFE:
            assert f_star < 0


def test_histories_monotone():
    for seed in (3, 6):
        inst = toynets.random_instance(
            (2, 8, 8, 2), seed=seed, delta=0.2, gap_tol=1e-3, max_rounds=40
        )
        cert = verify(inst, seed=seed)
        lows = [h[1] for h in cert.history]
        ups = [h[2] for h in cert.history]
        assert all(b >= a - 1e-9 for a, b in zip(lows, lows[1:]))
        assert all(b <= a + 1e-9 for a, b in zip(ups, ups[1:]))
        gaps = [u - l for l, u in zip(lows, ups)]
        assert all(b <= a + 1e-9 for a, b in zip(gaps, gaps[1:]))


def test_unsafe_counterexample_reverified():
    for seed in range(16):
        inst = toynets.random_instance(
            (2, 8, 8, 2), seed=seed, delta=0.25, gap_tol=1e-3, max_rounds=40
        )
        cert = verify(inst, seed=seed)
        if cert.verdict == UNSAFE:
            assert spec_value(inst.network, inst.spec, cert.counterexample) < 0
            return
    pytest.skip("no unsafe instance in the sweep")


def _batch_margin(instance, points):
    h = points
    for w, b in zip(instance.network.weights[:-1], instance.network.biases[:-1]):
        h = np.maximum(h @ w.T + b, 0.0)
    logits = h @ instance.network.weights[-1].T + instance.network.biases[-1]
    c = instance.spec.objective_vector(instance.network.output_dim)
    return logits @ c


def test_safe_certificate_sampling_never_falsified():
    checked = False
    for seed in range(12):
        inst = toynets.random_instance(
            (2, 8, 8, 2), seed=seed, delta=0.1, gap_tol=1e-3, max_rounds=40
        )
        cert = verify(inst, seed=seed)
        if cert.verdict != SAFE:
            continue
        checked = True
        margins = _batch_margin(inst, sample_box(inst, 100_000, seed + 1))
        assert margins.min() >= 0
    if not checked:
        pytest.skip("no safe instance in the sweep")


def test_determinism():
    inst = toynets.random_instance(
        (2, 8, 8, 2), seed=3, delta=0.2, gap_tol=1e-3, max_rounds=30
    )
    a = verify(inst, seed=3)
    b = verify(inst, seed=3)
    assert a.global_lower == b.global_lower
    assert a.global_upper == b.global_upper
    assert a.rounds == b.rounds
    assert a.history == b.history


def test_gap_certificate_on_round_cap():
    inst = toynets.random_instance(
        (2, 8, 8, 2), seed=6, delta=0.2, gap_tol=1e-9, max_rounds=5
    )
    cert = verify(inst, seed=6)
    assert cert.verdict == GAP
    assert cert.gap == pytest.approx(cert.global_upper - cert.global_lower)
    assert cert.rounds <= 5


def test_timeout_yields_gap_not_crash():
    inst = toynets.random_instance(
        (2, 8, 8, 2), seed=6, delta=0.2, gap_tol=1e-9, max_rounds=100_000
    )
    cert = verify(inst, seed=6, timeout=0.5)
    assert cert.verdict in (GAP, SAFE, UNSAFE)
    assert cert.wall_time < 5.0


def test_certificate_json_roundtrip(hinge_instance):
    cert = verify(toynets.two_neuron_instance(gap_tol=0.01), seed=0)
    data = cert.to_dict()
    assert data["verdict"] == "unsafe"
    assert data["counterexample"] == pytest.approx([-1.0], abs=1e-4)
    assert data["history"][0]["round"] == 0


def test_pruning_sound_on_small_fixture():
    """A verdict-safe run that pruned domains implies the oracle minimum is
    positive, so no pruned-safe domain hid a counterexample."""
    checked = 0
    for seed, delta in ((3, 0.15), (11, 0.2), (15, 0.2)):
        inst = toynets.random_instance(
            (2, 8, 8, 2), seed=seed, delta=delta, gap_tol=1e-3, max_rounds=60
        )
        cert = verify(inst, seed=seed)
        if cert.verdict == SAFE and cert.domains_pruned > 0:
            f_star, _, _ = global_min(inst.network, inst.spec, inst)
            assert f_star > 0
            checked += 1
    assert checked >= 2


def test_mid_round_unsafe_stops_immediately(monkeypatch):
    """If the root solve misses the violating region but a later re-solve
    finds it, the loop stops mid-round with a verified counterexample."""
    import reluverify.bab as bab_mod
    import reluverify.complementarity as cc

    inst = toynets.random_instance(
        (2, 8, 8, 2), seed=1, delta=0.2, gap_tol=1e-6,
        max_rounds=50, resolve_period=1,
    )
    true_cert = verify(inst, seed=1)
    assert true_cert.verdict == UNSAFE  # this seed has a negative minimum

    original_solve = cc.solve
    calls = {"n": 0}

    def blinded_root(problem, warm=None, seed=0, **kwargs):
        calls["n"] += 1
        sol = original_solve(problem, warm=warm, seed=seed, **kwargs)
        if calls["n"] == 1 and sol.objective < 0:
            # pretend the root landed at the harmless nominal point
            return cc.MpccSolution(
                x=inst.x0.copy(),
                objective=spec_value(inst.network, inst.spec, inst.x0),
                solver_objective=spec_value(inst.network, inst.spec, inst.x0),
                p=sol.p, q=sol.q, eq_duals=sol.eq_duals,
                ineq_duals=sol.ineq_duals, pattern=sol.pattern,
                active=sol.active, inactive=sol.inactive,
                undecided=sol.undecided, status=sol.status,
                kkt_residual=sol.kkt_residual,
                ipm_iterations=sol.ipm_iterations,
            )
        return sol

    monkeypatch.setattr(bab_mod.cc, "solve", blinded_root)
    cert = verify(inst, seed=1, polish=False)
    assert cert.verdict == UNSAFE
    assert cert.rounds > 0
    assert spec_value(inst.network, inst.spec, cert.counterexample) < 0


def test_auto_resolve_period_runs():
    inst = toynets.random_instance(
        (2, 8, 8, 2), seed=3, delta=0.2, gap_tol=1e-3, max_rounds=10
    )
    cert = verify(inst, seed=3, auto_resolve_period=True)
    assert cert.verdict in (SAFE, UNSAFE, GAP)


class TestMetrics:
    def _cert(self, upper):
        return Certificate(
            verdict=GAP, global_lower=-1.0, global_upper=upper,
            gap=upper + 1.0 if math.isfinite(upper) else math.inf,
            counterexample=None, rounds=1, nlp_solves=1, domains_pruned=0,
            wall_time=0.1,
        )

    def test_metric_arithmetic(self):
        m = compute_metrics([self._cert(-2.8999)], [-2.9])
        assert m.abs_err == pytest.approx(1e-4, abs=1e-12)
        assert m.rel_err == pytest.approx(1e-4 / 2.9, abs=1e-12)
        assert m.upper_rate == 1.0

    def test_exact_upper_zero_error(self):
        m = compute_metrics([self._cert(-2.9)], [-2.9])
        assert m.abs_err == 0.0 and m.rel_err == 0.0

    def test_rate_counts_missing_oracle(self):
        certs = [self._cert(-1.0), self._cert(math.inf), self._cert(0.5)]
        m = compute_metrics(certs, [-1.1, None, None])
        assert m.upper_rate == pytest.approx(2 / 3)
        assert len(m.per_case) == 3

    def test_all_feasible_full_rate(self):
        certs = [self._cert(float(i)) for i in range(10)]
        m = compute_metrics(certs, [float(i) for i in range(10)])
        assert m.upper_rate == 1.0
