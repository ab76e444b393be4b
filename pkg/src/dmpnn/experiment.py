"""One seeded split -> featurize -> (ensemble) train -> test scoring run, and run summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .data import Dataset, SplitSpec, scaffold_overlap, split
from .featurize import Featurization
from .pipeline import featurize_splits
from .train import MetricResult, TrainConfig, TrainResult, ensemble_predict, ensemble_train, evaluate


@dataclass
class RunOutcome:
    split_seed: int
    sizes: tuple[int, int, int]
    overlap: float  # percent of test molecules sharing a train scaffold
    featurization: Featurization
    members: list[TrainResult]
    test: Dataset
    test_preds: np.ndarray
    test_score: MetricResult
    member_test_scores: list[float]
    val_score: float

    @property
    def models(self):
        return [m.model for m in self.members]


def run_once(
    data: Dataset,
    config: TrainConfig,
    split_seed: int,
    split_kind: str = "random",
    fractions=(0.8, 0.1, 0.1),
    ensemble: int = 1,
    workers: Optional[int] = None,
) -> RunOutcome:
    """Split ``data`` (raw features attached) with ``split_seed`` and train members seeded from it.

    Member ``j`` uses model seed ``split_seed + j``, so member 0 is the
    single-model run on that split.
    """
    spec = SplitSpec(tuple(fractions), split_seed, split_kind)
    parts = split(data, spec)
    feat, (train, val, test) = featurize_splits(config.features, parts)
    cfg = replace(config, seed=split_seed)
    members = ensemble_train(ensemble, cfg, train, val, feat, workers)
    metric = members[0].model.metric
    values, mask = test.targets()
    preds = ensemble_predict([m.model for m in members], test)
    member_scores = [evaluate(metric, m.model.predict(test), values, mask).mean for m in members]
    return RunOutcome(
        split_seed=split_seed,
        sizes=(len(train), len(val), len(test)),
        overlap=scaffold_overlap(train, test),
        featurization=feat,
        members=members,
        test=test,
        test_preds=preds,
        test_score=evaluate(metric, preds, values, mask),
        member_test_scores=member_scores,
        val_score=float(np.mean([m.model.best_score for m in members])),
    )


def summarize(values: Sequence[float]) -> dict:
    """Mean, population std and standard error (std / sqrt(runs))."""
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std()) if arr.size else float("nan")
    return {
        "values": arr.tolist(),
        "mean": float(arr.mean()) if arr.size else float("nan"),
        "std": std,
        "stderr": std / math.sqrt(arr.size) if arr.size else float("nan"),
    }
