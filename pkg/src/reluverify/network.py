"""Fully connected ReLU networks, output specifications, and verification instances.

A network is a stack of affine layers; every layer except the last is
followed by a ReLU. The specification is a linear functional of the output
logits whose nonnegativity over the input region is the property to verify.
All evaluation in this module is exact (no relaxation anywhere).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NetworkFormatError",
    "SchemaError",
    "DimensionError",
    "NonFiniteError",
    "ReluNetwork",
    "Specification",
    "VerificationInstance",
    "forward_eval",
    "spec_value",
    "load_network",
    "save_network",
    "load_instance",
    "save_instance",
]


class NetworkFormatError(ValueError):
    """Base class for model/instance validation failures."""


class SchemaError(NetworkFormatError):
    """File content does not match the documented JSON schema."""


class DimensionError(NetworkFormatError):
    """Layer dimensions do not chain, or an input has the wrong size."""

    def __init__(self, message: str, layer: int | None = None):
        super().__init__(message)
        self.layer = layer


class NonFiniteError(NetworkFormatError):
    """A weight, bias, or input entry is NaN or infinite."""


class ReluNetwork:
    """Feedforward ReLU network: affine layers with ReLU on all but the last.

    Immutable after construction and safe to share across workers.
    """

    def __init__(self, weights, biases):
        if len(weights) != len(biases):
            raise SchemaError(
                f"got {len(weights)} weight matrices but {len(biases)} bias vectors"
            )
        if len(weights) < 2:
            raise DimensionError(
                "network needs at least one hidden layer (>= 2 affine layers)"
            )
        self.weights = [np.array(w, dtype=float) for w in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1:
                raise SchemaError(f"layer {i}: weights must be 2-D and bias 1-D")
            if w.shape[0] != b.shape[0]:
                raise DimensionError(
                    f"layer {i}: weight rows {w.shape[0]} != bias length {b.shape[0]}",
                    layer=i,
                )
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise DimensionError(
                    f"layer {i}: input dim {w.shape[1]} != layer {i-1} output dim "
                    f"{self.weights[i - 1].shape[0]}",
                    layer=i,
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise NonFiniteError(f"layer {i}: non-finite weight or bias entry")
        for w in self.weights:
            w.setflags(write=False)
        for b in self.biases:
            b.setflags(write=False)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def num_hidden_layers(self) -> int:
        return len(self.weights) - 1

    @property
    def hidden_widths(self) -> list[int]:
        return [w.shape[0] for w in self.weights[:-1]]

    def __repr__(self):
        dims = [self.input_dim] + [w.shape[0] for w in self.weights]
        return f"ReluNetwork({'-'.join(str(d) for d in dims)})"


@dataclass(frozen=True)
class Specification:
    """Linear output property: the margin logits[label] - logits[target].

    For scalar-output networks the raw logit itself is the property; that is
    expressed by ``target=None``.
    """

    label: int
    target: int | None = None

    def validate(self, output_dim: int) -> None:
        if not 0 <= self.label < output_dim:
            raise SchemaError(f"label {self.label} out of range for {output_dim} outputs")
        if self.target is not None:
            if not 0 <= self.target < output_dim:
                raise SchemaError(
                    f"target {self.target} out of range for {output_dim} outputs"
                )
            if self.target == self.label:
                raise SchemaError("label and target class must differ")

    def objective_vector(self, output_dim: int) -> np.ndarray:
        """Coefficients c such that the margin is c . logits."""
        self.validate(output_dim)
        c = np.zeros(output_dim)
        c[self.label] = 1.0
        if self.target is not None:
            c[self.target] = -1.0
        return c


# Documented defaults for the optional instance fields.
DEFAULT_GAP_TOL = 1e-3
DEFAULT_MAX_ROUNDS = 10_000
DEFAULT_RESOLVE_PERIOD = 20
DEFAULT_ALIGN_WEIGHT = 0.1
DEFAULT_COMP_TOL = 1e-6

COMP_TOL_BAND = (1e-8, 1e-5)


@dataclass(frozen=True)
class VerificationInstance:
    """One verification problem: network, perturbation region, and tolerances.

    gap_tol is the target width of the final bound bracket; max_rounds caps
    branch-and-bound rounds; resolve_period is the number of bound
    computations between upper-bound re-solves; align_weight blends the
    incumbent activation pattern into branching scores; comp_tol softens the
    complementarity products in the upper-bound problem.
    """

    network: ReluNetwork
    x0: np.ndarray
    delta: float
    spec: Specification
    norm: str = "inf"
    gap_tol: float = DEFAULT_GAP_TOL
    max_rounds: int = DEFAULT_MAX_ROUNDS
    resolve_period: int = DEFAULT_RESOLVE_PERIOD
    align_weight: float = DEFAULT_ALIGN_WEIGHT
    comp_tol: float = DEFAULT_COMP_TOL

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=float)
        object.__setattr__(self, "x0", x0)
        if x0.ndim != 1 or x0.shape[0] != self.network.input_dim:
            raise DimensionError(
                f"x0 has dimension {x0.shape} but network input dim is "
                f"{self.network.input_dim}",
                layer=0,
            )
        if not np.isfinite(x0).all():
            raise NonFiniteError("x0 has a non-finite entry")
        if self.delta < 0:
            raise SchemaError("delta must be nonnegative")
        if self.norm not in ("inf", "two"):
            raise SchemaError(f"norm must be 'inf' or 'two', got {self.norm!r}")
        if self.gap_tol <= 0:
            raise SchemaError("gap tolerance must be positive")
        if self.max_rounds <= 0 or self.resolve_period <= 0:
            raise SchemaError("round caps must be positive integers")
        if self.align_weight < 0:
            raise SchemaError("alignment weight must be nonnegative")
        if self.comp_tol <= 0:
            raise SchemaError("complementarity softening must be positive")
        lo, hi = COMP_TOL_BAND
        if not lo <= self.comp_tol <= hi:
            warnings.warn(
                f"comp_tol={self.comp_tol:g} outside the recommended band "
                f"[{lo:g}, {hi:g}]",
                stacklevel=2,
            )
        self.spec.validate(self.network.output_dim)


def forward_eval(network: ReluNetwork, x) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
    """Exact forward pass.

    Returns (logits, preacts, pattern): the output logits, the pre-activation
    vector of every layer (hidden layers then output), and one binary vector
    per hidden layer with bit 1 iff the pre-activation is strictly positive
    (a neuron sitting exactly at zero gets bit 0).
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != network.input_dim:
        raise DimensionError(
            f"input has shape {x.shape} but layer 0 expects dim {network.input_dim}",
            layer=0,
        )
    preacts = []
    pattern = []
    h = x
    for i, (w, b) in enumerate(zip(network.weights, network.biases)):
        z = w @ h + b
        preacts.append(z)
        if i < len(network.weights) - 1:
            bits = (z > 0).astype(np.int8)
            pattern.append(bits)
            h = np.maximum(z, 0.0)
        else:
            h = z
    return h, preacts, pattern


def spec_value(network: ReluNetwork, spec: Specification, x) -> float:
    """Exact margin value c . logits at x (no relaxation)."""
    logits, _, _ = forward_eval(network, x)
    c = spec.objective_vector(network.output_dim)
    return float(c @ logits)


def network_to_dict(network: ReluNetwork) -> dict:
    return {
        "layers": [
            {"weights": w.tolist(), "bias": b.tolist()}
            for w, b in zip(network.weights, network.biases)
        ]
    }


def network_from_dict(data) -> ReluNetwork:
    if not isinstance(data, dict) or "layers" not in data:
        raise SchemaError("model JSON must be an object with a 'layers' array")
    layers = data["layers"]
    if not isinstance(layers, list) or not layers:
        raise SchemaError("'layers' must be a nonempty array")
    weights, biases = [], []
    for i, layer in enumerate(layers):
        if not isinstance(layer, dict) or "weights" not in layer or "bias" not in layer:
            raise SchemaError(f"layer {i} must be an object with 'weights' and 'bias'")
        w = np.array(layer["weights"], dtype=float)
        b = np.array(layer["bias"], dtype=float)
        if w.ndim != 2:
            raise SchemaError(f"layer {i}: 'weights' must be a 2-D array")
        if b.ndim != 1:
            raise SchemaError(f"layer {i}: 'bias' must be a 1-D array")
        weights.append(w)
        biases.append(b)
    return ReluNetwork(weights, biases)


def save_network(network: ReluNetwork, path) -> None:
    """Write the model JSON. Python float repr round-trips bit-exactly."""
    with open(path, "w") as fh:
        json.dump(network_to_dict(network), fh)


def load_network(path) -> ReluNetwork:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"model file is not valid JSON: {exc}") from exc
    return network_from_dict(data)


def instance_to_dict(instance: VerificationInstance) -> dict:
    return {
        "x0": instance.x0.tolist(),
        "delta": instance.delta,
        "norm": instance.norm,
        "label": instance.spec.label,
        "target": instance.spec.target,
        "epsilon": instance.gap_tol,
        "t_max": instance.max_rounds,
        "tau_max": instance.resolve_period,
        "lambda": instance.align_weight,
        "eps_comp": instance.comp_tol,
    }


def instance_from_dict(data, network: ReluNetwork) -> VerificationInstance:
    if not isinstance(data, dict):
        raise SchemaError("instance JSON must be an object")
    for key in ("x0", "delta", "label"):
        if key not in data:
            raise SchemaError(f"instance JSON missing required key {key!r}")
    spec = Specification(label=int(data["label"]), target=_opt_int(data.get("target")))
    return VerificationInstance(
        network=network,
        x0=np.array(data["x0"], dtype=float),
        delta=float(data["delta"]),
        norm=str(data.get("norm", "inf")),
        spec=spec,
        gap_tol=float(data.get("epsilon", DEFAULT_GAP_TOL)),
        max_rounds=int(data.get("t_max", DEFAULT_MAX_ROUNDS)),
        resolve_period=int(data.get("tau_max", DEFAULT_RESOLVE_PERIOD)),
        align_weight=float(data.get("lambda", DEFAULT_ALIGN_WEIGHT)),
        comp_tol=float(data.get("eps_comp", DEFAULT_COMP_TOL)),
    )


def _opt_int(value):
    return None if value is None else int(value)


def save_instance(instance: VerificationInstance, path) -> None:
    with open(path, "w") as fh:
        json.dump(instance_to_dict(instance), fh)


def load_instance(path, network: ReluNetwork) -> VerificationInstance:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"instance file is not valid JSON: {exc}") from exc
    return instance_from_dict(data, network)
