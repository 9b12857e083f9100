"""Evaluation: confusion metrics, gate statistics, and input perturbations.

The fake class (label 1) is the positive class everywhere. Ratios with a
zero denominator are reported as 0.0 rather than raising.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .data import Dataset, FeatureRecord
from .errors import InputError, UsageError
from .model import HyperConfig, ModelParams, Variant, forward_batch, predict_labels


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int


def compute_metrics(labels, predictions) -> MetricsReport:
    """Binary classification metrics with fake (1) as the positive class."""
    lab = np.asarray(labels)
    pred = np.asarray(predictions)
    if lab.ndim != 1 or lab.shape != pred.shape:
        raise InputError(
            f"labels and predictions must be equal-length vectors, got {lab.shape} and {pred.shape}"
        )
    if lab.size == 0:
        raise InputError("metrics need at least one (label, prediction) pair")
    for name, arr in (("labels", lab), ("predictions", pred)):
        if not np.isin(arr, (0, 1)).all():
            raise InputError(f"{name} must contain only 0 and 1")

    tp = int(np.sum((lab == 1) & (pred == 1)))
    fp = int(np.sum((lab == 0) & (pred == 1)))
    tn = int(np.sum((lab == 0) & (pred == 0)))
    fn = int(np.sum((lab == 1) & (pred == 0)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0
    return MetricsReport(
        accuracy=(tp + tn) / lab.size,
        precision=precision,
        recall=recall,
        f1=f1,
        tp=tp, fp=fp, tn=tn, fn=fn,
    )


def evaluate(params: ModelParams, hyper: HyperConfig, dataset: Dataset) -> MetricsReport:
    """Metrics of argmax predictions over a dataset."""
    if not dataset.records:
        raise InputError("cannot evaluate on an empty dataset")
    outputs = forward_batch(params, hyper, dataset.records)
    return compute_metrics(dataset.labels(), predict_labels(outputs))


# -- gate statistics ---------------------------------------------------------------


@dataclass(frozen=True)
class GateStatsReport:
    mean_alpha_t: float
    mean_alpha_i: float
    std_alpha_t: float
    std_alpha_i: float
    pct_text_dominant: float
    pct_image_dominant: float
    pct_balanced: float
    threshold: float
    n_records: int


def collect_gate_weights(params: ModelParams, hyper: HyperConfig,
                         dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-record gate values over a dataset; full variant only."""
    if hyper.variant is not Variant.FULL:
        raise UsageError(f"variant {hyper.variant.value!r} has no gate")
    if not dataset.records:
        raise InputError("cannot collect gate weights from an empty dataset")
    outputs = forward_batch(params, hyper, dataset.records)
    return outputs.alpha_text, outputs.alpha_image


def gate_stats_from_alphas(alpha_text, alpha_image, threshold: float = 0.2) -> GateStatsReport:
    """Summarize gate values: means, population stds, dominance percentages.

    A record is text-dominant when alpha_t - alpha_i > threshold, image-
    dominant when the difference is below -threshold, balanced otherwise.
    """
    a_t = np.asarray(alpha_text, dtype=np.float64)
    a_i = np.asarray(alpha_image, dtype=np.float64)
    if a_t.ndim != 1 or a_t.shape != a_i.shape or a_t.size == 0:
        raise InputError("gate statistics need two equal-length non-empty vectors")
    if threshold < 0.0:
        raise InputError(f"threshold must be non-negative, got {threshold}")
    diff = a_t - a_i
    n = a_t.size
    text_dom = int(np.sum(diff > threshold))
    image_dom = int(np.sum(diff < -threshold))
    return GateStatsReport(
        mean_alpha_t=float(a_t.mean()),
        mean_alpha_i=float(a_i.mean()),
        std_alpha_t=float(a_t.std()),
        std_alpha_i=float(a_i.std()),
        pct_text_dominant=100.0 * text_dom / n,
        pct_image_dominant=100.0 * image_dom / n,
        pct_balanced=100.0 * (n - text_dom - image_dom) / n,
        threshold=float(threshold),
        n_records=n,
    )


def gate_stats(params: ModelParams, hyper: HyperConfig, dataset: Dataset,
               threshold: float = 0.2) -> GateStatsReport:
    alpha_text, alpha_image = collect_gate_weights(params, hyper, dataset)
    return gate_stats_from_alphas(alpha_text, alpha_image, threshold)


# -- perturbations ------------------------------------------------------------------


class PerturbationKind(str, Enum):
    TEXT_MISSING = "text-missing"
    IMAGE_MISSING = "image-missing"
    TEXT_NOISE = "text-noise"
    IMAGE_NOISE = "image-noise"


_NOISE_KINDS = (PerturbationKind.TEXT_NOISE, PerturbationKind.IMAGE_NOISE)


@dataclass(frozen=True)
class PerturbationScenario:
    kind: PerturbationKind
    sigma: float | None = None
    noise_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", PerturbationKind(self.kind))
        if self.kind in _NOISE_KINDS:
            if self.sigma is None or self.sigma <= 0.0:
                raise InputError(f"{self.kind.value} needs sigma > 0, got {self.sigma}")
        elif self.sigma is not None:
            raise InputError(f"{self.kind.value} does not take a sigma")

    def label(self) -> str:
        if self.sigma is None:
            return self.kind.value
        return f"{self.kind.value}(sigma={self.sigma:g})"


def apply_perturbation(record: FeatureRecord, scenario: PerturbationScenario) -> FeatureRecord:
    """A perturbed copy of the record; the original stays untouched."""
    kind = scenario.kind
    if kind is PerturbationKind.TEXT_MISSING:
        return replace(record, text_features=np.zeros_like(record.text_features))
    if kind is PerturbationKind.IMAGE_MISSING:
        return replace(record, image_features=np.zeros_like(record.image_features))
    rng = np.random.default_rng(scenario.noise_seed)
    if kind is PerturbationKind.TEXT_NOISE:
        noisy = record.text_features + rng.normal(0.0, scenario.sigma, record.text_features.shape)
        return replace(record, text_features=noisy)
    noisy = record.image_features + rng.normal(0.0, scenario.sigma, record.image_features.shape)
    return replace(record, image_features=noisy)


def perturb_dataset(dataset: Dataset, scenario: PerturbationScenario) -> Dataset:
    """Apply a scenario to every record, with per-record noise streams."""
    perturbed = []
    for i, record in enumerate(dataset.records):
        if scenario.kind in _NOISE_KINDS:
            seed = int(np.random.SeedSequence((scenario.noise_seed, i)).generate_state(1)[0])
            record = apply_perturbation(record, replace(scenario, noise_seed=seed))
        else:
            record = apply_perturbation(record, scenario)
        perturbed.append(record)
    return Dataset(dataset.d_t, dataset.d_i, dataset.l_t, dataset.l_i, perturbed)
