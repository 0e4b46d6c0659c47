"""Source-free multi-source domain expansion.

Given m classifiers pre-trained on different source domains and an unlabelled
batch of new-domain features, each classifier is updated so that its predicted
class-probability output on the new data agrees more with the
other classifiers (inter-model bias reduction) while staying close to its own
original output (preservation). Models whose outputs are high-entropy on the new
data classify it poorly, so they receive a larger share of the alignment
pressure; that share is a softmax over per-model mean entropies.

Models are updated strictly one at a time: while model i trains, every peer
and every original is a frozen constant, so gradients reach only model i's
parameters.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import xlogy

from .errors import InputError, ParameterError
from .nn import (
    Gradients,
    MlpModel,
    OptimizerState,
    backward,
    forward_logits,
    sgd_step,
    softmax_temperature,
    softmax_temperature_backward,
)


@dataclass
class Hyperparams:
    """Knobs of one expansion run.

    lam scales the alignment pressure against preservation;
    temperature softens the probability vectors being aligned; weight_temperature
    controls how sharply entropy differences translate into per-model
    weights. All randomness (batch shuffling) derives from seed.
    """

    lam: float = 10.0
    temperature: float = 3.0
    weight_temperature: float = 0.1
    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 7e-3
    momentum: float = 0.0
    seed: int = 0
    # The weighting entropies are measured on plain softmax output by
    # default; set this to soften them with `temperature` instead.
    entropy_at_alignment_temperature: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ParameterError(f"lam must be >= 0, got {self.lam}")
        if self.temperature <= 0:
            raise ParameterError(f"temperature must be > 0, got {self.temperature}")
        if self.weight_temperature <= 0:
            raise ParameterError(
                f"weight_temperature must be > 0, got {self.weight_temperature}"
            )
        if self.epochs < 0:
            raise ParameterError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ParameterError(f"learning_rate must be > 0, got {self.learning_rate}")

    @property
    def entropy_temperature(self) -> float:
        return self.temperature if self.entropy_at_alignment_temperature else 1.0


@dataclass
class WeightVector:
    """Per-model mean entropies and the weights derived from them."""

    entropies: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.entropies = np.asarray(self.entropies, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.entropies.shape != self.weights.shape or self.entropies.ndim != 1:
            raise InputError("entropies and weights must be 1-D and aligned")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise InputError("weights must sum to 1")
        if not ((self.weights > 0) & (self.weights < 1)).all():
            raise InputError("each weight must lie strictly in (0, 1)")


@dataclass
class EnsembleState:
    """The frozen original models plus their in-training updated copies."""

    originals: list[MlpModel]
    updated: list[MlpModel]

    def __post_init__(self):
        if len(self.originals) < 2:
            raise InputError("need at least two source models")
        if len(self.updated) != len(self.originals):
            raise InputError("originals and updated must have the same length")
        ref = self.originals[0]
        for model in [*self.originals, *self.updated]:
            if model.input_dim != ref.input_dim or model.num_classes != ref.num_classes:
                raise InputError("all models must share input_dim and num_classes")

    @classmethod
    def initialize(cls, models: Sequence[MlpModel]) -> "EnsembleState":
        """Copy each source model into both the frozen and the trainable slot."""
        originals = [copy.deepcopy(m) for m in models]
        updated = [copy.deepcopy(m) for m in models]
        return cls(originals, updated)

    @property
    def m(self) -> int:
        return len(self.originals)


def _check_batch(batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[0] == 0:
        raise InputError(f"expected a nonempty (N, d) feature matrix, got {batch.shape}")
    return batch


def _check_index(i: int, m: int) -> None:
    if not 0 <= i < m:
        raise InputError(f"model index {i} out of range for {m} models")


def mean_entropy(
    model: MlpModel, new_data: np.ndarray, temperature: float = 1.0
) -> float:
    """Mean Shannon entropy (nats) of the model's softmax outputs over the dataset.

    Uniform predictions give ln(C); one-hot predictions give 0. The 0*ln(0)
    terms that appear when a probability underflows are taken as 0.
    """
    new_data = _check_batch(new_data)
    logits, _ = forward_logits(model, new_data)
    probs = softmax_temperature(logits, temperature)
    per_sample = -xlogy(probs, probs).sum(axis=1)
    return float(per_sample.mean())


def compute_weights(entropies: np.ndarray, weight_temperature: float) -> WeightVector:
    """Softmax of entropies at the given temperature, max-subtracted.

    Higher entropy (poorer new-domain fit) yields a strictly larger weight,
    so weaker models feel more alignment pressure.
    """
    if weight_temperature <= 0:
        raise ParameterError(
            f"weight_temperature must be > 0, got {weight_temperature}"
        )
    entropies = np.asarray(entropies, dtype=np.float64)
    if entropies.ndim != 1 or entropies.shape[0] < 2:
        raise InputError("need entropies for at least two models")
    if not np.isfinite(entropies).all():
        raise InputError("entropies must be finite")
    scaled = entropies / weight_temperature
    scaled = scaled - scaled.max()
    exps = np.exp(scaled)
    return WeightVector(entropies, exps / exps.sum())


def _softened_probs(model: MlpModel, batch: np.ndarray, temperature: float):
    logits, cache = forward_logits(model, batch)
    return softmax_temperature(logits, temperature), cache


def _bias_term(
    updated: Sequence[MlpModel], i: int, batch: np.ndarray, temperature: float
) -> tuple[float, Gradients]:
    probs_i, cache = _softened_probs(updated[i], batch, temperature)
    n = batch.shape[0]
    loss = 0.0
    dprobs = np.zeros_like(probs_i)
    for j, peer in enumerate(updated):
        if j == i:
            continue
        probs_j, _ = _softened_probs(peer, batch, temperature)
        diff = probs_i - probs_j
        loss += float((diff * diff).sum()) / n
        dprobs += (2.0 / n) * diff
    dlogits = softmax_temperature_backward(probs_i, dprobs, temperature)
    return loss, backward(updated[i], cache, dlogits)


def _preservation_term(
    updated: Sequence[MlpModel],
    originals: Sequence[MlpModel],
    i: int,
    batch: np.ndarray,
    temperature: float,
) -> tuple[float, Gradients]:
    probs_i, cache = _softened_probs(updated[i], batch, temperature)
    anchor, _ = _softened_probs(originals[i], batch, temperature)
    n = batch.shape[0]
    diff = probs_i - anchor
    loss = float((diff * diff).sum()) / n
    dlogits = softmax_temperature_backward(probs_i, (2.0 / n) * diff, temperature)
    return loss, backward(updated[i], cache, dlogits)


def bias_loss(
    ensemble: EnsembleState, i: int, batch: np.ndarray, temperature: float
) -> tuple[float, Gradients]:
    """Mean squared distance between model i's softened probabilities and every peer's.

    Averaged over samples only (not over peers); gradients flow into
    updated[i] alone, every peer is a constant.
    """
    _check_index(i, ensemble.m)
    batch = _check_batch(batch)
    return _bias_term(ensemble.updated, i, batch, temperature)


def preservation_loss(
    ensemble: EnsembleState, i: int, batch: np.ndarray, temperature: float
) -> tuple[float, Gradients]:
    """Mean squared distance between model i's softened probabilities now and at init."""
    _check_index(i, ensemble.m)
    batch = _check_batch(batch)
    return _preservation_term(ensemble.updated, ensemble.originals, i, batch, temperature)


def _overall_term(
    originals: Sequence[MlpModel],
    updated: Sequence[MlpModel],
    i: int,
    batch: np.ndarray,
    weight_i: float,
    hp: Hyperparams,
) -> tuple[float, Gradients, float, float]:
    l_org, g_org = _preservation_term(updated, originals, i, batch, hp.temperature)
    l_bias, g_bias = _bias_term(updated, i, batch, hp.temperature)
    scale = hp.lam * weight_i
    total = l_org + scale * l_bias
    return total, g_org.plus(g_bias.scaled(scale)), l_org, l_bias


def overall_loss(
    ensemble: EnsembleState,
    i: int,
    batch: np.ndarray,
    weights: WeightVector,
    hp: Hyperparams,
) -> tuple[float, Gradients]:
    """Preservation plus lam * w_i * bias, gradients combined linearly."""
    _check_index(i, ensemble.m)
    batch = _check_batch(batch)
    if weights.weights.shape[0] != ensemble.m:
        raise InputError("weight vector length does not match ensemble size")
    total, grads, _, _ = _overall_term(
        ensemble.originals, ensemble.updated, i, batch, float(weights.weights[i]), hp
    )
    return total, grads


def ensemble_entropies(
    models: Sequence[MlpModel], new_data: np.ndarray, temperature: float = 1.0
) -> np.ndarray:
    return np.array([mean_entropy(m, new_data, temperature) for m in models])


def update_round(
    ensemble: EnsembleState,
    new_data: np.ndarray,
    hp: Hyperparams,
    rng: np.random.Generator | None = None,
) -> tuple[EnsembleState, WeightVector, list[dict]]:
    """One pass over all models: reweigh, then train each one in turn.

    Entropy weights are computed once from the current updated models and
    held fixed for the whole round. Model i then gets one epoch of seeded
    mini-batch SGD on its combined loss while all other models stay at
    whatever parameters they have reached so far; originals never move.

    Returns the new ensemble state, the weight vector used, and one record
    per model with the batch-mean loss terms seen during its epoch.
    """
    new_data = _check_batch(new_data)
    if rng is None:
        rng = np.random.default_rng(hp.seed)
    entropies = ensemble_entropies(ensemble.updated, new_data, hp.entropy_temperature)
    weights = compute_weights(entropies, hp.weight_temperature)

    n = new_data.shape[0]
    updated = list(ensemble.updated)
    records = []
    for i in range(ensemble.m):
        opt = OptimizerState(hp.learning_rate, hp.momentum)
        order = rng.permutation(n)
        org_terms, bias_terms = [], []
        for start in range(0, n, hp.batch_size):
            batch = new_data[order[start : start + hp.batch_size]]
            _, grads, l_org, l_bias = _overall_term(
                ensemble.originals, updated, i, batch, float(weights.weights[i]), hp
            )
            updated[i] = sgd_step(updated[i], grads, opt)
            org_terms.append(l_org)
            bias_terms.append(l_bias)
        records.append(
            {
                "model_index": i,
                "mean_L_org": float(np.mean(org_terms)),
                "mean_L_bias": float(np.mean(bias_terms)),
                "E_i": float(entropies[i]),
                "w_i": float(weights.weights[i]),
            }
        )
    return EnsembleState(ensemble.originals, updated), weights, records


def expand(
    ensemble: EnsembleState, new_data: np.ndarray, hp: Hyperparams
) -> tuple[EnsembleState, list[dict]]:
    """Run hp.epochs update rounds and collect the per-round training log.

    Deterministic for a fixed hp.seed; the returned log holds one record per
    (round, model) with keys round, model_index, mean_L_org, mean_L_bias,
    E_i, w_i.
    """
    new_data = _check_batch(new_data)
    rng = np.random.default_rng(hp.seed)
    log: list[dict] = []
    for round_index in range(1, hp.epochs + 1):
        ensemble, _, records = update_round(ensemble, new_data, hp, rng)
        for record in records:
            log.append({"round": round_index, **record})
    return ensemble, log


def overall_log_total(log: list[dict], hp: Hyperparams, round_index: int) -> float:
    """Sum of the combined per-model losses recorded for one round."""
    rows = [r for r in log if r["round"] == round_index]
    if not rows:
        raise InputError(f"no log records for round {round_index}")
    return float(
        sum(r["mean_L_org"] + hp.lam * r["w_i"] * r["mean_L_bias"] for r in rows)
    )
