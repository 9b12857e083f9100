"""Comparison experiments: variant ablation and the robustness suite.

Both run all models under one protocol (same splits, same seeds) so rows
are directly comparable.
"""

from __future__ import annotations

from dataclasses import replace

from .data import Dataset
from .errors import InputError
from .evaluation import (
    MetricsReport,
    PerturbationKind,
    PerturbationScenario,
    evaluate,
    perturb_dataset,
)
from .model import HyperConfig, Variant, VARIANT_ORDER
from .training import Checkpoint, TrainConfig, train


def run_ablation(
    splits: tuple[Dataset, Dataset, Dataset],
    hyper_template: HyperConfig,
    train_config: TrainConfig,
) -> tuple[list[tuple[Variant, MetricsReport]], dict[Variant, Checkpoint]]:
    """Train every variant identically; report test metrics in fixed order."""
    train_ds, val_ds, test_ds = splits
    if not test_ds.records:
        raise InputError("ablation needs a non-empty test split")
    rows = []
    checkpoints: dict[Variant, Checkpoint] = {}
    for variant in VARIANT_ORDER:
        hyper = replace(hyper_template, variant=variant)
        checkpoint, _ = train(train_ds, val_ds, hyper, train_config)
        rows.append((variant, evaluate(checkpoint.params, checkpoint.hyper, test_ds)))
        checkpoints[variant] = checkpoint
    return rows, checkpoints


def default_scenarios(sigmas=(0.5, 1.0), noise_seed: int = 0) -> list[PerturbationScenario]:
    """Missing-modality scenarios plus one noise scenario per sigma and side."""
    scenarios = [
        PerturbationScenario(PerturbationKind.TEXT_MISSING),
        PerturbationScenario(PerturbationKind.IMAGE_MISSING),
    ]
    for sigma in sigmas:
        scenarios.append(PerturbationScenario(PerturbationKind.TEXT_NOISE, sigma, noise_seed))
    for sigma in sigmas:
        scenarios.append(PerturbationScenario(PerturbationKind.IMAGE_NOISE, sigma, noise_seed))
    return scenarios


def run_perturbation_suite(
    full_checkpoint: Checkpoint,
    test_ds: Dataset,
    scenarios,
    baselines: dict[Variant, Checkpoint] | None = None,
) -> list[tuple[str, MetricsReport]]:
    """Evaluate the full model unperturbed and under each scenario.

    Optional single-modality baselines are appended unperturbed, as
    reference points for the missing-modality rows.
    """
    if full_checkpoint.hyper.variant is not Variant.FULL:
        raise InputError(
            f"perturbation suite needs a full-variant checkpoint, got "
            f"{full_checkpoint.hyper.variant.value!r}"
        )
    if not test_ds.records:
        raise InputError("perturbation suite needs a non-empty test split")

    rows = [("unperturbed", evaluate(full_checkpoint.params, full_checkpoint.hyper, test_ds))]
    for scenario in scenarios:
        perturbed = perturb_dataset(test_ds, scenario)
        rows.append((scenario.label(),
                     evaluate(full_checkpoint.params, full_checkpoint.hyper, perturbed)))
    for variant, checkpoint in (baselines or {}).items():
        variant = Variant(variant)
        if variant not in (Variant.TEXT_ONLY, Variant.IMAGE_ONLY):
            raise InputError(f"baselines must be single-modality variants, got {variant.value!r}")
        rows.append((f"baseline-{variant.value}",
                     evaluate(checkpoint.params, checkpoint.hyper, test_ds)))
    return rows
