"""Small deterministic networks used by tests, benchmarks, and `gen-toy`."""

from __future__ import annotations

import numpy as np

from .network import ReluNetwork, Specification, VerificationInstance


def two_neuron_net() -> ReluNetwork:
    """Scalar-input net with one 2-neuron hidden layer and a scalar output.

    On [-1, 1] the output simplifies to 2x - 0.9 with minimum -2.9 at x = -1,
    which makes every stage of the pipeline checkable by hand.
    """
    w1 = np.array([[2.0], [-1.0]])
    b1 = np.array([-1.0, 0.5])
    w2 = np.array([[1.0, -2.0]])
    b2 = np.array([0.1])
    return ReluNetwork([w1, w2], [b1, b2])


def two_neuron_instance(**overrides) -> VerificationInstance:
    """Verification instance for two_neuron_net over x in [-1, 1]."""
    kwargs = dict(
        network=two_neuron_net(),
        x0=np.array([0.0]),
        delta=1.0,
        spec=Specification(label=0, target=None),
        norm="inf",
    )
    kwargs.update(overrides)
    return VerificationInstance(**kwargs)


def random_net(widths, seed: int, weight_scale: float = 1.0) -> ReluNetwork:
    """Random dense network with He-style init, deterministic in the seed.

    widths lists every dimension, e.g. (2, 8, 8, 2).
    """
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        w = rng.standard_normal((fan_out, fan_in)) * weight_scale * np.sqrt(2.0 / fan_in)
        b = rng.standard_normal(fan_out) * 0.1
        weights.append(w)
        biases.append(b)
    return ReluNetwork(weights, biases)


def random_instance(
    widths,
    seed: int,
    delta: float = 0.1,
    norm: str = "inf",
    weight_scale: float = 1.0,
    **overrides,
) -> VerificationInstance:
    """Random network plus a margin spec between the top-two logits at x0.

    The label is the argmax at the nominal point and the target the runner-up,
    so the clean margin is positive and the verification question nontrivial.
    """
    net = random_net(widths, seed, weight_scale)
    rng = np.random.default_rng(seed + 100_003)
    x0 = rng.uniform(-1.0, 1.0, size=widths[0])
    h = x0
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        h = np.maximum(w @ h + b, 0.0)
    logits = net.weights[-1] @ h + net.biases[-1]
    order = np.argsort(logits)
    label, target = int(order[-1]), int(order[-2])
    kwargs = dict(
        network=net,
        x0=x0,
        delta=delta,
        spec=Specification(label=label, target=target),
        norm=norm,
    )
    kwargs.update(overrides)
    return VerificationInstance(**kwargs)
