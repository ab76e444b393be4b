"""Training configuration, the epoch loop and the trained-model wrapper."""

from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .. import tensor as T
from ..data import Dataset, TargetScaler, fit_scaler
from ..featurize import DimensionMismatch, Featurization
from ..model import DmpnnParams, ModelConfig, MolTensors, build_batch, forward, mol_tensors
from .metrics import default_metric, evaluate, is_better
from .optim import Adam, masked_loss, noam_schedule

logger = logging.getLogger(__name__)

EVAL_BATCH = 256

# stream tags for counter-based RNG
_INIT, _SHUFFLE, _DROPOUT = 0, 1, 2


class Diverged(RuntimeError):
    pass


class FeatureDimMismatch(DimensionMismatch):
    pass


def rng_stream(*keys: int) -> np.random.Generator:
    """Independent generator addressed by integer keys, e.g. ``(seed, tag, epoch, batch)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in keys])))


def worker_count() -> int:
    """Threads used for ensemble members and hyperopt trials (``DMPNN_THREADS``, default 1)."""
    try:
        return max(1, int(os.environ.get("DMPNN_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 50
    init_lr: float = 1e-4
    max_lr: float = 1e-3
    final_lr: float = 1e-4
    warmup_epochs: float = 2.0
    seed: int = 0
    depth: int = 3
    hidden: int = 300
    ffn_layers: int = 2
    ffn_hidden: Optional[int] = None
    dropout: float = 0.0
    message_type: str = "directed"
    features: str = "none"
    metric: Optional[str] = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if min(self.init_lr, self.max_lr, self.final_lr) <= 0:
            raise ValueError("learning rates must be positive")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")

    def model_config(self, n_tasks: int, features_dim: int, classification: bool) -> ModelConfig:
        return ModelConfig(
            n_tasks=n_tasks,
            depth=self.depth,
            hidden=self.hidden,
            ffn_layers=self.ffn_layers,
            ffn_hidden=self.ffn_hidden,
            dropout=self.dropout,
            message_type=self.message_type,
            features_dim=features_dim,
            classification=classification,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainedModel:
    params: DmpnnParams
    train_config: TrainConfig
    task_names: tuple[str, ...]
    task_type: str
    scaler: Optional[TargetScaler]
    featurization: Featurization = field(default_factory=Featurization)
    best_epoch: int = -1
    best_score: float = float("nan")

    @property
    def config(self) -> ModelConfig:
        return self.params.config

    @property
    def classification(self) -> bool:
        return self.task_type == "classification"

    def featurize(self, raw: Dataset) -> Dataset:
        """Scale raw molecule features (as attached by the caller) with the stored CDF table."""
        if self.featurization.kind == "none":
            if raw.features_dim:
                raise FeatureDimMismatch("model was trained without features")
            return raw
        if raw.features_dim != self.featurization.dim:
            raise FeatureDimMismatch(f"model expects {self.featurization.dim} features, data has {raw.features_dim}")
        return raw.with_features(self.featurization.transform(raw.features()))

    def check_features(self, data: Dataset) -> None:
        if data.features_dim != self.config.features_dim:
            raise FeatureDimMismatch(f"model expects {self.config.features_dim} features, data has {data.features_dim}")

    def predict(self, data: Dataset, tensors: Optional[Sequence[MolTensors]] = None) -> np.ndarray:
        """Predictions in target units (regression) or probabilities (classification).

        ``data`` must already carry scaled features; see :meth:`featurize`.
        """
        self.check_features(data)
        if len(data) == 0:
            return np.zeros((0, self.config.n_tasks))
        if tensors is None:
            tensors = [mol_tensors(r.mol) for r in data.records]
        feats = data.features()
        out = []
        for start in range(0, len(data), EVAL_BATCH):
            stop = min(start + EVAL_BATCH, len(data))
            bg = build_batch(tensors[start:stop], None if feats is None else feats[start:stop])
            out.append(forward(bg, self.params, training=False).data)
        raw = np.concatenate(out)
        if self.classification:
            return T._stable_sigmoid(raw)
        return self.scaler.inverse(raw) if self.scaler is not None else raw

    def score(self, data: Dataset, metric: Optional[str] = None, tensors=None):
        metric = metric or self.metric
        values, mask = data.targets()
        return evaluate(metric, self.predict(data, tensors), values, mask)

    @property
    def metric(self) -> str:
        return self.train_config.metric or default_metric(self.task_type)


@dataclass
class TrainResult:
    model: TrainedModel
    history: list[dict]
    seconds: float = 0.0  # wall clock of train_model


def _check_split(name: str, data: Dataset) -> None:
    if len(data) == 0:
        raise ValueError(f"{name} split is empty")


def train_model(
    config: TrainConfig,
    train: Dataset,
    val: Dataset,
    featurization: Featurization = Featurization(),
    val_scorer: Optional[Callable[[TrainedModel, int], float]] = None,
) -> TrainResult:
    """Fit a model with Adam and keep the weights of the best validation epoch.

    ``val_scorer(model, epoch)`` replaces the validation metric when given.
    """
    started = time.perf_counter()
    _check_split("train", train)
    _check_split("val", val)
    if train.task_names != val.task_names:
        raise ValueError("train and val have different tasks")
    classification = train.task_type == "classification"
    metric = config.metric or default_metric(train.task_type)
    mcfg = config.model_config(train.num_tasks, train.features_dim, classification)
    params = DmpnnParams.init(mcfg, rng_stream(config.seed, _INIT))
    scaler = None if classification else fit_scaler(train)
    model = TrainedModel(params, replace(config, metric=metric), train.task_names, train.task_type, scaler, featurization)
    model.check_features(val)

    train_tensors = [mol_tensors(r.mol) for r in train.records]
    val_tensors = [mol_tensors(r.mol) for r in val.records]
    values, mask = train.targets()
    if scaler is not None:
        values = np.where(mask, scaler.transform(values), 0.0)
    feats = train.features()

    n = len(train)
    steps_per_epoch = math.ceil(n / config.batch_size)
    schedule = noam_schedule(
        config.init_lr, config.max_lr, config.final_lr, config.warmup_epochs, config.epochs, steps_per_epoch
    )
    opt = Adam(params.tensors)
    step = 0
    lr = schedule(0)
    best_score: Optional[float] = None
    best_arrays = params.arrays()
    best_epoch = -1
    history = []
    for epoch in range(config.epochs):
        order = rng_stream(config.seed, _SHUFFLE, epoch).permutation(n)
        total, seen = 0.0, 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            if not mask[idx].any():
                continue
            bg = build_batch([train_tensors[i] for i in idx], None if feats is None else feats[idx])
            drop_rng = rng_stream(config.seed, _DROPOUT, epoch, b)
            params.zero_grad()
            with T.Tape():
                preds = forward(bg, params, training=True, rng=drop_rng)
                loss = masked_loss(preds, values[idx], mask[idx], classification)
                T.backward(loss)
            lval = loss.item()
            if not math.isfinite(lval):
                raise Diverged(f"non-finite loss at epoch {epoch}, batch {b}")
            lr = schedule(step)
            opt.step(lr)
            step += 1
            total += lval * len(idx)
            seen += len(idx)
        if val_scorer is not None:
            score = float(val_scorer(model, epoch))
        else:
            score = model.score(val, metric, val_tensors).mean
        if math.isnan(score) and not classification:
            raise Diverged(f"validation {metric} is NaN at epoch {epoch}")
        history.append({"epoch": epoch, "train_loss": total / max(seen, 1), f"val_{metric}": score, "lr": lr})
        logger.debug("epoch %d loss %.4f val %s %.4f", epoch, total / max(seen, 1), metric, score)
        if is_better(metric, score, best_score):
            best_score, best_epoch = score, epoch
            best_arrays = params.arrays()
    params.load_arrays(best_arrays)
    model.best_epoch = best_epoch
    model.best_score = float("nan") if best_score is None else best_score
    return TrainResult(model, history, time.perf_counter() - started)
