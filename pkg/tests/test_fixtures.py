"""Cross-language fixture checks against the exported trainer bundles.

The trainer (a separate TypeScript package) emits models, instances, a
manifest, and a crosscheck file with its own forward-pass outputs; these
tests confirm both sides compute the same networks and that the exported
instances run through the full verification pipeline soundly.
"""

import json
import math
import os

import numpy as np
import pytest

import reluverify as rv
from reluverify import oracle
from reluverify.bab import verify
from reluverify.bounds import ibp_bounds, optimize_relaxation
from reluverify.complementarity import build_problem, region_lp_polish, solve
from reluverify.network import forward_eval, spec_value

FIXTURE_ROOT = os.path.join(os.path.dirname(__file__), "..", "fixtures")


def fixture_dirs():
    if not os.path.isdir(FIXTURE_ROOT):
        return []
    return sorted(
        os.path.join(FIXTURE_ROOT, d)
        for d in os.listdir(FIXTURE_ROOT)
        if os.path.isfile(os.path.join(FIXTURE_ROOT, d, "model.json"))
    )


pytestmark = pytest.mark.skipif(
    not fixture_dirs(), reason="no exported fixtures present"
)


def instances_of(path):
    net = rv.load_network(os.path.join(path, "model.json"))
    names = sorted(f for f in os.listdir(path) if f.startswith("instance_"))
    return net, [rv.load_instance(os.path.join(path, f), net) for f in names]


@pytest.mark.parametrize("path", fixture_dirs())
def test_crosscheck_forward_agreement(path):
    net = rv.load_network(os.path.join(path, "model.json"))
    record = json.load(open(os.path.join(path, "crosscheck.json")))
    assert len(record["inputs"]) == 100
    worst = 0.0
    for x, expected in zip(record["inputs"], record["logits"]):
        logits, _, _ = forward_eval(net, np.array(x))
        worst = max(worst, float(np.max(np.abs(logits - np.array(expected)))))
    assert worst <= 1e-5
    print(f"{os.path.basename(path)}: max forward disagreement {worst:.2e}")


@pytest.mark.parametrize("path", fixture_dirs())
def test_manifest_unstable_counts_match(path):
    net, instances = instances_of(path)
    manifest = json.load(open(os.path.join(path, "manifest.json")))
    assert manifest["test_accuracy"] >= 0.8
    for inst, row in zip(instances, manifest["instances"]):
        bounds = ibp_bounds(net, inst.x0, inst.delta, inst.norm)
        assert len(bounds.unstable) == row["unstable"]
        assert len(bounds.unstable) <= manifest["unstable_cap"]
        margin = spec_value(net, inst.spec, inst.x0)
        assert margin == pytest.approx(row["clean_margin"], abs=1e-9)
        assert margin > 0


def test_blobs_instances_run_full_pipeline():
    path = next(p for p in fixture_dirs() if "blobs" in p)
    net, instances = instances_of(path)
    for idx, inst in enumerate(instances):
        bounds = ibp_bounds(net, inst.x0, inst.delta, inst.norm)
        f_star, _, _ = oracle.global_min(net, inst.spec, inst, bounds=bounds)
        lb = optimize_relaxation(net, inst.spec, inst, bounds=bounds)
        sol = solve(build_problem(net, inst.spec, inst, bounds), seed=idx)
        upper = sol.objective if sol.feasible else math.inf
        value, x = region_lp_polish(net, inst.spec, inst, sol.pattern, bounds=bounds)
        if x is not None:
            upper = min(upper, spec_value(net, inst.spec, x))
        assert lb <= f_star + 1e-6
        assert f_star <= upper + 1e-6
        cert = verify(inst, seed=idx)
        assert cert.global_lower - 1e-6 <= f_star <= cert.global_upper + 1e-6
        if cert.verdict == "safe":
            assert f_star > 0
        if cert.verdict == "unsafe":
            assert f_star < 0


def test_digits_instances_bounds_and_upper_sound():
    path = next(p for p in fixture_dirs() if "digits" in p)
    net, instances = instances_of(path)
    inst = instances[0]
    bounds = ibp_bounds(net, inst.x0, inst.delta, inst.norm)
    lb = optimize_relaxation(net, inst.spec, inst, bounds=bounds)
    sol = solve(build_problem(net, inst.spec, inst, bounds), seed=0, restarts=0)
    assert sol.feasible
    assert lb <= sol.objective + 1e-6
    pgd_val, _ = oracle.pgd_upper_bound(net, inst.spec, inst, seed=0)
    assert lb <= pgd_val + 1e-9
    # the exact enumeration stays tractable at the exported radius; its LP
    # tolerance grows with the 784-dim row count, hence the 1e-6 margins
    f_star, _, regions = oracle.global_min(net, inst.spec, inst, bounds=bounds)
    assert lb <= f_star + 1e-6 <= sol.objective + 2e-6
    assert pgd_val >= f_star - 1e-6
    print(
        f"digits instance 0: lb={lb:.4f} f*={f_star:.4f} "
        f"ub={sol.objective:.4f} regions={regions}"
    )
