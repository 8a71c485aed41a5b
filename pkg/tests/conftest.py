import numpy as np
import pytest

from reluverify import toynets
from reluverify.bounds import ibp_bounds


@pytest.fixture
def hinge_instance():
    """Scalar 2-neuron example: f(x) = 2x - 0.9 on [-1, 1], minimum -2.9."""
    return toynets.two_neuron_instance()


@pytest.fixture
def hinge_bounds(hinge_instance):
    return ibp_bounds(
        hinge_instance.network, hinge_instance.x0, hinge_instance.delta
    )


def sample_box(instance, count, seed):
    rng = np.random.default_rng(seed)
    d = instance.network.input_dim
    pts = instance.x0 + rng.uniform(-instance.delta, instance.delta, size=(count, d))
    if instance.norm == "two":
        off = pts - instance.x0
        norms = np.linalg.norm(off, axis=1, keepdims=True)
        scale = np.minimum(1.0, instance.delta / np.maximum(norms, 1e-30))
        pts = instance.x0 + off * scale
    return pts
