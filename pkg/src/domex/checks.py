"""Gradient verification: analytic backprop vs central finite differences.

Every loss the package trains on gets its gradient checked end to end on
small seeded instances. The comparison is relative per element with an
absolute floor, since relative error is meaningless near zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import expansion, nn
from .errors import InputError

ABS_FLOOR = 1e-8
REL_TOL = 1e-4

CHECKED_LOSSES = ("cross_entropy", "bias", "preservation", "overall")


def gradient_discrepancy(
    analytic: nn.Gradients, numeric: nn.Gradients
) -> float:
    """Worst-case per-element error between two gradient sets.

    Elements where both magnitudes are below ABS_FLOOR are compared
    absolutely; the rest relatively against the larger magnitude.
    """
    worst = 0.0
    pairs = list(zip(analytic.weight_grads, numeric.weight_grads))
    pairs += list(zip(analytic.bias_grads, numeric.bias_grads))
    for a, b in pairs:
        diff = np.abs(a - b)
        scale = np.maximum(np.abs(a), np.abs(b))
        small = scale < ABS_FLOOR
        err = np.where(small, diff, diff / np.maximum(scale, ABS_FLOOR))
        if err.size:
            worst = max(worst, float(err.max()))
    return worst


@dataclass
class CheckResult:
    loss_name: str
    seed: int
    max_error: float

    @property
    def passed(self) -> bool:
        return self.max_error < REL_TOL


def _tiny_setup(seed: int):
    """Seeded small problem: 3 peer models, a mixed batch, labels."""
    rng = np.random.default_rng(seed)
    input_dim, num_classes, n = 4, 3, 6
    models = [nn.init_mlp(input_dim, [5], num_classes, rng) for _ in range(3)]
    batch = rng.normal(0.0, 1.0, size=(n, input_dim))
    labels = rng.integers(0, num_classes, size=n)
    ensemble = expansion.EnsembleState.initialize(models)
    # Nudge the trainable copies off their originals; otherwise the
    # preservation gradient is exactly zero and its check proves nothing.
    for model in ensemble.updated:
        for layer in model.layers:
            layer.weights = layer.weights + 0.05 * rng.standard_normal(
                layer.weights.shape
            )
            layer.bias = layer.bias + 0.05 * rng.standard_normal(layer.bias.shape)
    hp = expansion.Hyperparams(epochs=1, batch_size=n, seed=seed)
    weights = expansion.compute_weights(
        np.array([expansion.mean_entropy(m, batch) for m in ensemble.updated]),
        hp.weight_temperature,
    )
    return ensemble, batch, labels, weights, hp


def _analytic(loss_name: str, ensemble, batch, labels, weights, hp, corruption: float):
    model = ensemble.updated[0]
    if loss_name == "cross_entropy":
        logits, cache = nn.forward_logits(model, batch)
        grads = nn.backward(model, cache, nn.cross_entropy_gradient(logits, labels))
    elif loss_name == "bias":
        _, grads = expansion.bias_loss(ensemble, 0, batch, hp.temperature)
    elif loss_name == "preservation":
        _, grads = expansion.preservation_loss(ensemble, 0, batch, hp.temperature)
    elif loss_name == "overall":
        _, grads = expansion.overall_loss(ensemble, 0, batch, weights, hp)
    else:
        raise InputError(f"unknown loss {loss_name!r}; expected one of {CHECKED_LOSSES}")
    if corruption:
        grads.weight_grads[0] = grads.weight_grads[0] + corruption
    return grads


def _loss_fn(loss_name: str, ensemble, batch, labels, weights, hp):
    if loss_name == "cross_entropy":
        return lambda m: nn.cross_entropy(nn.forward_logits(m, batch)[0], labels)
    if loss_name == "bias":

        def f(m):
            probe = expansion.EnsembleState(
                ensemble.originals, [m] + ensemble.updated[1:]
            )
            return expansion.bias_loss(probe, 0, batch, hp.temperature)[0]

        return f
    if loss_name == "preservation":

        def f(m):
            probe = expansion.EnsembleState(
                ensemble.originals, [m] + ensemble.updated[1:]
            )
            return expansion.preservation_loss(probe, 0, batch, hp.temperature)[0]

        return f
    if loss_name == "overall":

        def f(m):
            probe = expansion.EnsembleState(
                ensemble.originals, [m] + ensemble.updated[1:]
            )
            return expansion.overall_loss(probe, 0, batch, weights, hp)[0]

        return f
    raise InputError(f"unknown loss {loss_name!r}; expected one of {CHECKED_LOSSES}")


def check_loss_gradient(
    loss_name: str, seed: int, corruption: float = 0.0
) -> CheckResult:
    """Compare one loss's backprop gradient against finite differences.

    corruption adds a constant to the analytic first-layer weight gradient;
    a nonzero value MUST make the check fail (the suite's negative control).
    """
    ensemble, batch, labels, weights, hp = _tiny_setup(seed)
    grads = _analytic(loss_name, ensemble, batch, labels, weights, hp, corruption)
    loss_fn = _loss_fn(loss_name, ensemble, batch, labels, weights, hp)
    numeric = nn.finite_diff_gradient(loss_fn, ensemble.updated[0])
    return CheckResult(loss_name, seed, gradient_discrepancy(grads, numeric))


def run_gradient_suite(
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4), corruption: float = 0.0
) -> list[CheckResult]:
    """Check every trained loss over the given seeds; returns all results."""
    return [
        check_loss_gradient(name, seed, corruption)
        for name in CHECKED_LOSSES
        for seed in seeds
    ]
