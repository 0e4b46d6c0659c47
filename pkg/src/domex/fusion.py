"""Fusing ensembles into one classifier and computing reported metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import spearmanr

from .data import DomainDataset
from .errors import InputError
from .expansion import mean_entropy
from .nn import MlpModel, forward_logits, softmax_temperature

FUSION_METHODS = ("baseline", "m1", "m2")


@dataclass
class PredictionBatch:
    """Class scores plus their argmax labels; ties go to the lowest class."""

    scores: np.ndarray
    predicted: np.ndarray

    @classmethod
    def from_scores(cls, scores: np.ndarray) -> "PredictionBatch":
        scores = np.asarray(scores, dtype=np.float64)
        # np.argmax returns the first maximum, i.e. the lowest class index.
        return cls(scores, scores.argmax(axis=1))


@dataclass
class EvaluationReport:
    """Per-domain accuracies and their unweighted mean for one fusion method."""

    per_domain_accuracy: dict[str, float]
    expanded_accuracy: float
    method: str
    entropies: list[float] | None = None
    weights: list[float] | None = None

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "per_domain_accuracy": dict(self.per_domain_accuracy),
            "expanded_accuracy": self.expanded_accuracy,
            "entropies": self.entropies,
            "weights": self.weights,
        }


def _model_probs(models: Sequence[MlpModel], batch: np.ndarray) -> list[np.ndarray]:
    if not models:
        raise InputError("need at least one model to fuse")
    return [softmax_temperature(forward_logits(m, batch)[0], 1.0) for m in models]


def fuse_m1(updated: Sequence[MlpModel], batch: np.ndarray) -> PredictionBatch:
    """Average the updated models' softmax outputs; rows sum to 1."""
    probs = _model_probs(updated, batch)
    return PredictionBatch.from_scores(sum(probs) / len(probs))


def fuse_m2(
    originals: Sequence[MlpModel], updated: Sequence[MlpModel], batch: np.ndarray
) -> PredictionBatch:
    """Per-class max over each (original, updated) pair, summed across models.

    The scores are an unnormalized sum of per-class maxima, so rows need not
    sum to 1; only the argmax is meaningful.
    """
    if len(originals) != len(updated):
        raise InputError("originals and updated must pair up one-to-one")
    probs_orig = _model_probs(originals, batch)
    probs_upd = _model_probs(updated, batch)
    scores = sum(np.maximum(u, o) for u, o in zip(probs_upd, probs_orig))
    return PredictionBatch.from_scores(scores)


def fuse_baseline(originals: Sequence[MlpModel], batch: np.ndarray) -> PredictionBatch:
    """Score fusion of the unadapted models (mean softmax; same argmax as sum)."""
    probs = _model_probs(originals, batch)
    return PredictionBatch.from_scores(sum(probs) / len(probs))


def accuracy(pred: PredictionBatch, labels: np.ndarray) -> float:
    """Fraction of exact label matches."""
    labels = np.asarray(labels)
    if labels.shape != pred.predicted.shape:
        raise InputError(
            f"labels shape {labels.shape} does not match predictions "
            f"{pred.predicted.shape}"
        )
    return float((pred.predicted == labels).mean())


def expanded_accuracy(per_domain: Mapping[str, float]) -> float:
    """Unweighted mean of per-domain accuracies: every domain counts equally."""
    if not per_domain:
        raise InputError("need at least one domain accuracy")
    return float(np.mean(list(per_domain.values())))


def fuse(
    method: str,
    originals: Sequence[MlpModel],
    updated: Sequence[MlpModel] | None,
    batch: np.ndarray,
) -> PredictionBatch:
    if method == "baseline":
        return fuse_baseline(originals, batch)
    if method == "m1":
        if updated is None:
            raise InputError("method m1 needs the updated models")
        return fuse_m1(updated, batch)
    if method == "m2":
        if updated is None:
            raise InputError("method m2 needs the updated models")
        return fuse_m2(originals, updated, batch)
    raise InputError(f"unknown fusion method {method!r}; expected one of {FUSION_METHODS}")


def evaluate_expanded(
    method: str,
    originals: Sequence[MlpModel],
    updated: Sequence[MlpModel] | None,
    test_sets: Mapping[str, DomainDataset],
    entropies: Sequence[float] | None = None,
    weights: Sequence[float] | None = None,
) -> EvaluationReport:
    """Accuracy of one fusion method on every domain's test set.

    The expanded-domain accuracy is the unweighted mean over domains, so the
    new domain and each source domain count equally regardless of size.
    """
    if not test_sets:
        raise InputError("need at least one test set")
    per_domain = {}
    for name, ds in test_sets.items():
        if ds.labels is None:
            raise InputError(f"test set {name!r} has no labels")
        pred = fuse(method, originals, updated, ds.features)
        per_domain[name] = accuracy(pred, ds.labels)
    return EvaluationReport(
        per_domain_accuracy=per_domain,
        expanded_accuracy=expanded_accuracy(per_domain),
        method=method,
        entropies=None if entropies is None else [float(e) for e in entropies],
        weights=None if weights is None else [float(w) for w in weights],
    )


@dataclass
class EntropyAccuracyReport:
    """Mean-entropy / accuracy pairs and their Spearman rank correlation.

    correlation is None when the ranking is degenerate (all entropies or all
    accuracies tied), in which case degenerate is set.
    """

    pairs: list[tuple[float, float]]
    correlation: float | None
    degenerate: bool


def entropy_accuracy_report(
    probes: Sequence[tuple[MlpModel, DomainDataset]]
) -> EntropyAccuracyReport:
    """Relate each model's mean predictive entropy on a probe set to its accuracy there."""
    if len(probes) < 2:
        raise InputError("need at least two (model, probe) pairs")
    pairs = []
    for model, ds in probes:
        if ds.labels is None:
            raise InputError(f"probe set {ds.name!r} has no labels")
        entropy = mean_entropy(model, ds.features)
        logits, _ = forward_logits(model, ds.features)
        acc = accuracy(PredictionBatch.from_scores(logits), ds.labels)
        pairs.append((entropy, float(acc)))
    entropies = np.array([p[0] for p in pairs])
    accs = np.array([p[1] for p in pairs])
    if np.ptp(entropies) == 0 or np.ptp(accs) == 0:
        return EntropyAccuracyReport(pairs, None, True)
    rho = float(spearmanr(entropies, accs).statistic)
    return EntropyAccuracyReport(pairs, rho, False)


def format_results_table(
    reports: Mapping[str, EvaluationReport], domain_order: Sequence[str] | None = None
) -> str:
    """Aligned plain-text table: one row per domain plus the expanded mean.

    Columns follow the method order baseline / m1 / m2 restricted to the
    reports given; accuracies are shown in percent.
    """
    if not reports:
        raise InputError("no reports to format")
    methods = [m for m in FUSION_METHODS if m in reports]
    if domain_order is None:
        domain_order = list(next(iter(reports.values())).per_domain_accuracy)
    header = {"baseline": "Base", "m1": "M1", "m2": "M2"}
    name_width = max(len("Expanded"), *(len(d) for d in domain_order))
    lines = [
        "  ".join(
            ["Domain".ljust(name_width)] + [header[m].rjust(7) for m in methods]
        )
    ]
    for domain in domain_order:
        cells = [f"{100 * reports[m].per_domain_accuracy[domain]:7.2f}" for m in methods]
        lines.append("  ".join([domain.ljust(name_width)] + cells))
    cells = [f"{100 * reports[m].expanded_accuracy:7.2f}" for m in methods]
    lines.append("  ".join(["Expanded".ljust(name_width)] + cells))
    return "\n".join(lines)
