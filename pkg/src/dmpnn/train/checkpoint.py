"""Versioned JSON checkpoints.

Weights are stored as flat row-major lists; Python's float repr round-trips
float64 exactly, so a reloaded model predicts bit-identically.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Optional

import numpy as np

from ..data import TargetScaler
from ..featurize import Featurization
from ..model import DmpnnParams, ModelConfig
from .loop import FeatureDimMismatch, TrainConfig, TrainedModel

FORMAT = "dmpnn-checkpoint"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class VersionMismatch(CheckpointError):
    pass


class CorruptCheckpoint(CheckpointError):
    pass


def checkpoint_dict(model: TrainedModel) -> dict:
    return {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "model_config": model.config.to_dict(),
        "train_config": model.train_config.to_dict(),
        "task_names": list(model.task_names),
        "task_type": model.task_type,
        "scaler": None if model.scaler is None else model.scaler.to_dict(),
        "featurization": model.featurization.to_dict(),
        "best_epoch": model.best_epoch,
        "best_score": None if np.isnan(model.best_score) else model.best_score,
        "weights": {
            name: {"shape": list(arr.shape), "data": arr.ravel().tolist()} for name, arr in model.params.arrays().items()
        },
    }


def save_checkpoint(model: TrainedModel, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(checkpoint_dict(model), fh)
    os.replace(tmp, path)


def model_from_dict(doc: dict) -> TrainedModel:
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise CorruptCheckpoint("not a checkpoint document")
    if doc.get("version") != FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint version {doc.get('version')}, this build reads {FORMAT_VERSION}")
    try:
        mcfg = ModelConfig.from_dict(doc["model_config"])
        weights = {}
        for name, w in doc["weights"].items():
            weights[name] = np.asarray(w["data"], dtype=np.float64).reshape(w["shape"])
        params = DmpnnParams(mcfg, weights)
        featurization = Featurization.from_dict(doc["featurization"])
        scaler = None if doc["scaler"] is None else TargetScaler.from_dict(doc["scaler"])
        model = TrainedModel(
            params,
            TrainConfig.from_dict(doc["train_config"]),
            tuple(doc["task_names"]),
            doc["task_type"],
            scaler,
            featurization,
            int(doc["best_epoch"]),
            float("nan") if doc["best_score"] is None else float(doc["best_score"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FeatureDimMismatch):
            raise
        raise CorruptCheckpoint(f"malformed checkpoint: {exc}") from exc
    if featurization.dim != mcfg.features_dim:
        raise CorruptCheckpoint(f"featurization width {featurization.dim} != model features {mcfg.features_dim}")
    return model


def load_checkpoint(path, features_dim: Optional[int] = None) -> TrainedModel:
    """Read a checkpoint; with ``features_dim`` also check it against the data to be scored."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptCheckpoint(f"{path}: {exc}") from exc
    model = model_from_dict(doc)
    if features_dim is not None and features_dim != model.config.features_dim:
        raise FeatureDimMismatch(f"checkpoint expects {model.config.features_dim} features, data has {features_dim}")
    return model
