"""Minimal dense-network engine.

Deterministic forward passes, hand-derived backward passes, plain SGD, and a
central finite-difference oracle for verifying any scalar loss defined on the
network output. Everything runs in float64 on numpy arrays; models are value
objects and every operation returns new state instead of mutating.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import InputError, NumericError, ParameterError, ParseError

ACTIVATIONS = ("relu", "identity")


@dataclass
class DenseLayer:
    """One fully-connected layer: out = act(weights @ x + bias).

    weights has shape (out_dim, in_dim); bias has shape (out_dim,).
    """

    weights: np.ndarray
    bias: np.ndarray
    activation: str

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2:
            raise InputError(f"layer weights must be 2-D, got shape {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise InputError(
                f"bias shape {self.bias.shape} does not match out_dim {self.weights.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise InputError(f"unknown activation {self.activation!r}")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise NumericError("layer parameters must be finite")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass
class MlpModel:
    """A dense feedforward classifier whose final layer emits raw logits.

    Args:
        layers: ordered dense layers; consecutive dimensions must chain.
        input_dim: expected feature count of the input batch.
        num_classes: size of the logit vector produced by the last layer.
    """

    layers: list[DenseLayer]
    input_dim: int
    num_classes: int

    def __post_init__(self):
        if not self.layers:
            raise InputError("model needs at least one layer")
        if self.layers[0].in_dim != self.input_dim:
            raise InputError(
                f"first layer expects {self.layers[0].in_dim} inputs, input_dim is {self.input_dim}"
            )
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.in_dim != prev.out_dim:
                raise InputError(
                    f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}"
                )
        last = self.layers[-1]
        if last.out_dim != self.num_classes:
            raise InputError(
                f"final layer emits {last.out_dim} values, num_classes is {self.num_classes}"
            )
        # The last layer stays linear so downstream losses see raw logits.
        if last.activation != "identity":
            raise InputError("final layer activation must be identity")

    def copy(self) -> "MlpModel":
        return copy.deepcopy(self)

    def parameters_equal(self, other: "MlpModel") -> bool:
        return len(self.layers) == len(other.layers) and all(
            np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)
            for a, b in zip(self.layers, other.layers)
        )


@dataclass
class ForwardCache:
    """Intermediate values of one forward pass, kept for the backward pass."""

    inputs: np.ndarray
    pre_activations: list[np.ndarray]
    activations: list[np.ndarray]


@dataclass
class Gradients:
    """Per-layer parameter gradients, shape-congruent with an MlpModel."""

    weight_grads: list[np.ndarray]
    bias_grads: list[np.ndarray]

    @classmethod
    def zeros_like(cls, model: MlpModel) -> "Gradients":
        return cls(
            [np.zeros_like(layer.weights) for layer in model.layers],
            [np.zeros_like(layer.bias) for layer in model.layers],
        )

    def scaled(self, factor: float) -> "Gradients":
        return Gradients(
            [factor * g for g in self.weight_grads],
            [factor * g for g in self.bias_grads],
        )

    def plus(self, other: "Gradients") -> "Gradients":
        if len(self.weight_grads) != len(other.weight_grads):
            raise InputError("gradient layer counts differ")
        return Gradients(
            [a + b for a, b in zip(self.weight_grads, other.weight_grads)],
            [a + b for a, b in zip(self.bias_grads, other.bias_grads)],
        )

    def max_abs(self) -> float:
        blocks = self.weight_grads + self.bias_grads
        return max(float(np.abs(g).max()) if g.size else 0.0 for g in blocks)


@dataclass
class OptimizerState:
    """Plain SGD with an optional momentum buffer."""

    learning_rate: float
    momentum: float = 0.0
    velocity: Gradients | None = field(default=None, repr=False)

    def __post_init__(self):
        # lr = 0 is allowed: a zero step must be an exact no-op.
        if self.learning_rate < 0:
            raise ParameterError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.momentum < 0:
            raise ParameterError(f"momentum must be >= 0, got {self.momentum}")


def init_mlp(
    input_dim: int,
    hidden_units: Sequence[int],
    num_classes: int,
    rng: np.random.Generator,
) -> MlpModel:
    """Build a relu MLP with uniform Glorot initialization and zero biases."""
    dims = [input_dim, *hidden_units, num_classes]
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        activation = "identity" if i == len(dims) - 2 else "relu"
        layers.append(DenseLayer(weights, np.zeros(fan_out), activation))
    return MlpModel(layers, input_dim, num_classes)


def _as_batch(batch: np.ndarray, input_dim: int) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != input_dim:
        raise InputError(
            f"batch must have shape (N, {input_dim}), got {batch.shape}"
        )
    return batch


def forward_logits(model: MlpModel, batch: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Run the network on a batch, returning (N, C) logits and the cache.

    The cache records every pre-activation and activation so that backward()
    can replay the chain rule without recomputation.
    """
    batch = _as_batch(batch, model.input_dim)
    pre, post = [], []
    act = batch
    for layer in model.layers:
        z = act @ layer.weights.T + layer.bias
        act = np.maximum(z, 0.0) if layer.activation == "relu" else z
        pre.append(z)
        post.append(act)
    logits = post[-1]
    if not np.isfinite(logits).all():
        raise NumericError("forward pass produced non-finite logits")
    return logits, ForwardCache(batch, pre, post)


def softmax_temperature(logits: np.ndarray, temperature: float) -> np.ndarray:
    """Temperature-softened softmax along the last axis.

    Computed in max-subtracted form; output rows are strictly positive and
    sum to 1. Accepts a single logit vector or an (N, C) batch.
    """
    if temperature <= 0:
        raise ParameterError(f"temperature must be > 0, got {temperature}")
    logits = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(logits).all():
        raise InputError("logits must be finite")
    scaled = logits / temperature
    scaled = scaled - scaled.max(axis=-1, keepdims=True)
    exps = np.exp(scaled)
    return exps / exps.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _check_labels(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise InputError(f"labels must be 1-D, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise InputError(f"labels must lie in [0, {num_classes})")
    return labels.astype(np.int64)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log softmax probability of the true class."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = _check_labels(labels, logits.shape[-1])
    if logits.shape[0] != labels.shape[0]:
        raise InputError("logits and labels disagree on batch size")
    logp = log_softmax(logits)
    return float(-logp[np.arange(labels.shape[0]), labels].mean())


def cross_entropy_gradient(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """d(cross_entropy)/d(logits): (softmax - onehot) / N."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = _check_labels(labels, logits.shape[-1])
    n = logits.shape[0]
    grad = softmax_temperature(logits, 1.0)
    grad[np.arange(n), labels] -= 1.0
    return grad / n


def softmax_temperature_backward(
    probs: np.ndarray, dprobs: np.ndarray, temperature: float
) -> np.ndarray:
    """Chain dL/dprobs back through softmax(logits / T) to dL/dlogits."""
    inner = (dprobs * probs).sum(axis=-1, keepdims=True)
    return probs * (dprobs - inner) / temperature


def backward(model: MlpModel, cache: ForwardCache, dlogits: np.ndarray) -> Gradients:
    """Backpropagate dL/dlogits through the cached forward pass."""
    dlogits = np.asarray(dlogits, dtype=np.float64)
    if dlogits.shape != cache.pre_activations[-1].shape:
        raise InputError(
            f"dlogits shape {dlogits.shape} does not match cached logits "
            f"{cache.pre_activations[-1].shape}"
        )
    weight_grads = [np.empty(0)] * len(model.layers)
    bias_grads = [np.empty(0)] * len(model.layers)
    delta = dlogits
    for idx in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[idx]
        if layer.activation == "relu":
            delta = delta * (cache.pre_activations[idx] > 0)
        prev_act = cache.inputs if idx == 0 else cache.activations[idx - 1]
        weight_grads[idx] = delta.T @ prev_act
        bias_grads[idx] = delta.sum(axis=0)
        if idx > 0:
            delta = delta @ layer.weights
    return Gradients(weight_grads, bias_grads)


def sgd_step(model: MlpModel, grads: Gradients, opt: OptimizerState) -> MlpModel:
    """One descent step; returns a new model, mutating only opt's momentum buffer."""
    if len(grads.weight_grads) != len(model.layers):
        raise InputError("gradient layer count does not match model")
    if opt.momentum > 0:
        if opt.velocity is None:
            opt.velocity = Gradients.zeros_like(model)
        opt.velocity = opt.velocity.scaled(opt.momentum).plus(grads)
        step = opt.velocity
    else:
        step = grads
    layers = [
        DenseLayer(
            layer.weights - opt.learning_rate * dw,
            layer.bias - opt.learning_rate * db,
            layer.activation,
        )
        for layer, dw, db in zip(model.layers, step.weight_grads, step.bias_grads)
    ]
    return MlpModel(layers, model.input_dim, model.num_classes)


def finite_diff_gradient(
    loss_fn: Callable[[MlpModel], float], model: MlpModel, epsilon: float = 1e-5
) -> Gradients:
    """Central-difference gradient of loss_fn over every model parameter.

    Exhaustive, so only usable on tiny models; this is the oracle against
    which all analytic gradients are checked.
    """
    if epsilon <= 0:
        raise ParameterError(f"epsilon must be > 0, got {epsilon}")

    def eval_perturbed(layer_idx: int, block: str, index: tuple, delta: float) -> float:
        probe = model.copy()
        layer = probe.layers[layer_idx]
        target = layer.weights if block == "w" else layer.bias
        target[index] += delta
        value = loss_fn(probe)
        if not np.isfinite(value):
            raise NumericError(
                f"loss became non-finite at layer {layer_idx} {block}{index}"
            )
        return float(value)

    grads = Gradients.zeros_like(model)
    for li, layer in enumerate(model.layers):
        for block, arr, out in (
            ("w", layer.weights, grads.weight_grads[li]),
            ("b", layer.bias, grads.bias_grads[li]),
        ):
            for index in np.ndindex(arr.shape):
                plus = eval_perturbed(li, block, index, epsilon)
                minus = eval_perturbed(li, block, index, -epsilon)
                out[index] = (plus - minus) / (2.0 * epsilon)
    return grads


def fit_classifier(
    model: MlpModel,
    features: np.ndarray,
    labels: np.ndarray,
    epochs: int,
    batch_size: int,
    opt: OptimizerState,
    rng: np.random.Generator,
) -> MlpModel:
    """Mini-batch cross-entropy SGD; returns the trained model."""
    features = _as_batch(features, model.input_dim)
    labels = _check_labels(labels, model.num_classes)
    n = features.shape[0]
    if n == 0:
        raise InputError("cannot fit on an empty dataset")
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            take = order[start : start + batch_size]
            logits, cache = forward_logits(model, features[take])
            grads = backward(model, cache, cross_entropy_gradient(logits, labels[take]))
            model = sgd_step(model, grads, opt)
    return model


def model_to_dict(model: MlpModel) -> dict:
    return {
        "input_dim": model.input_dim,
        "num_classes": model.num_classes,
        "layers": [
            {
                "in": layer.in_dim,
                "out": layer.out_dim,
                "activation": layer.activation,
                "weights": layer.weights.ravel().tolist(),
                "bias": layer.bias.tolist(),
            }
            for layer in model.layers
        ],
    }


def model_from_dict(doc: dict) -> MlpModel:
    try:
        layers = [
            DenseLayer(
                np.asarray(spec["weights"], dtype=np.float64).reshape(
                    spec["out"], spec["in"]
                ),
                np.asarray(spec["bias"], dtype=np.float64),
                spec["activation"],
            )
            for spec in doc["layers"]
        ]
        return MlpModel(layers, doc["input_dim"], doc["num_classes"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed model document: {exc}") from exc


def save_model(model: MlpModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n")


def load_model(path: str | Path) -> MlpModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", line=exc.lineno) from exc
    return model_from_dict(doc)
