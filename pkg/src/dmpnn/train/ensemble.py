"""Ensembles of independently seeded models."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from ..data import Dataset
from ..featurize import Featurization
from .loop import TrainConfig, TrainedModel, TrainResult, train_model, worker_count


def member_seeds(config: TrainConfig, n: int) -> list[int]:
    return [config.seed + i for i in range(n)]


def ensemble_train(
    n: int,
    config: TrainConfig,
    train: Dataset,
    val: Dataset,
    featurization: Featurization = Featurization(),
    workers: Optional[int] = None,
) -> list[TrainResult]:
    """Train ``n`` members that differ only in their seed (``config.seed + i``)."""
    if n < 1:
        raise ValueError("an ensemble needs at least one member")
    configs = [replace(config, seed=s) for s in member_seeds(config, n)]
    workers = min(workers or worker_count(), n)
    if workers == 1:
        return [train_model(c, train, val, featurization) for c in configs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda c: train_model(c, train, val, featurization), configs))


def average_predictions(preds: Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise mean that does not depend on member order.

    Values are sorted across members and averaged as offsets from the
    smallest, so identical members return their prediction unchanged.
    """
    if not preds:
        raise ValueError("no member predictions")
    stack = np.sort(np.stack([np.asarray(p, dtype=np.float64) for p in preds]), axis=0)
    base = stack[0]
    return base + (stack - base).sum(axis=0) / len(preds)


def ensemble_predict(models: Sequence[TrainedModel], data: Dataset) -> np.ndarray:
    """Mean member prediction; classification members already return probabilities."""
    if not models:
        raise ValueError("no models")
    first = models[0]
    for m in models[1:]:
        if m.task_names != first.task_names or m.task_type != first.task_type:
            raise ValueError("ensemble members predict different tasks")
        if m.config.features_dim != first.config.features_dim:
            raise ValueError("ensemble members use different feature widths")
    return average_predictions([m.predict(data) for m in models])
