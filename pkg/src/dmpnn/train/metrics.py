"""Regression and classification metrics over masked multitask targets."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import rankdata

logger = logging.getLogger(__name__)


class MetricError(ValueError):
    pass


class SingleClass(MetricError):
    pass


class Empty(MetricError):
    pass


def _pairs(preds, targets):
    p = np.asarray(preds, dtype=np.float64).ravel()
    y = np.asarray(targets, dtype=np.float64).ravel()
    if p.shape != y.shape:
        raise ValueError(f"preds {p.shape} vs targets {y.shape}")
    if p.size == 0:
        raise Empty("no prediction/target pairs")
    return p, y


def rmse(preds, targets) -> float:
    p, y = _pairs(preds, targets)
    return math.sqrt(float(np.mean((p - y) ** 2)))


def mae(preds, targets) -> float:
    p, y = _pairs(preds, targets)
    return float(np.mean(np.abs(p - y)))


def r2(preds, targets) -> float:
    """Squared Pearson correlation; NaN if either side is constant."""
    p, y = _pairs(preds, targets)
    dp, dy = p - p.mean(), y - y.mean()
    denom = math.sqrt(float(dp @ dp) * float(dy @ dy))
    if denom == 0.0:
        return float("nan")
    r = float(dp @ dy) / denom
    return r * r


def _binary(preds, labels):
    s, y = _pairs(preds, labels)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("labels must be 0 or 1")
    pos = y == 1.0
    if pos.all() or not pos.any():
        raise SingleClass("both classes are needed")
    return s, pos


def roc_auc(preds, labels) -> float:
    """Mann-Whitney form: average ranks give tied pairs half credit."""
    s, pos = _binary(preds, labels)
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    ranks = rankdata(s)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _pr_steps(s, pos):
    # one point per distinct threshold, descending
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], pos[order].astype(np.float64)
    tp = np.cumsum(y_sorted)
    fp = np.cumsum(1.0 - y_sorted)
    last = np.r_[np.flatnonzero(np.diff(s_sorted)), s_sorted.size - 1]
    tp, fp = tp[last], fp[last]
    return tp / (tp + fp), tp / tp[-1]


def prc_auc(preds, labels, method: str = "ap") -> float:
    """Area under the precision-recall curve.

    ``"ap"`` is average precision: each recall increment weighted by the
    precision at that threshold. ``"trapezoid"`` integrates linearly instead,
    starting from (recall 0, precision of the top threshold).
    """
    s, pos = _binary(preds, labels)
    precision, recall = _pr_steps(s, pos)
    if method == "ap":
        steps = np.diff(np.r_[0.0, recall])
        return float(steps @ precision)
    if method == "trapezoid":
        r = np.r_[0.0, recall]
        p = np.r_[precision[0], precision]
        return float(np.trapezoid(p, r))
    raise ValueError(f"unknown prc_auc method {method!r}")


METRICS = {"rmse": rmse, "mae": mae, "r2": r2, "roc_auc": roc_auc, "prc_auc": prc_auc}
LOWER_IS_BETTER = {"rmse": True, "mae": True, "r2": False, "roc_auc": False, "prc_auc": False}
CLASSIFICATION_METRICS = ("roc_auc", "prc_auc")


def default_metric(task_type: str) -> str:
    return "roc_auc" if task_type == "classification" else "rmse"


def is_better(metric: str, new: float, old: Optional[float]) -> bool:
    if old is None or math.isnan(old):
        return not math.isnan(new)
    return new < old if LOWER_IS_BETTER[metric] else new > old


@dataclass(frozen=True)
class MetricResult:
    metric: str
    per_task: tuple[Optional[float], ...]
    skipped: tuple[int, ...] = field(default_factory=tuple)

    @property
    def mean(self) -> float:
        vals = [v for v in self.per_task if v is not None]
        return float(np.mean(vals)) if vals else float("nan")

    def to_dict(self, task_names=None) -> dict:
        names = list(task_names) if task_names is not None else [str(i) for i in range(len(self.per_task))]
        return {
            "metric": self.metric,
            "mean": self.mean,
            "per_task": dict(zip(names, self.per_task)),
            "skipped": [names[i] for i in self.skipped],
        }


def evaluate(metric: str, preds: np.ndarray, targets: np.ndarray, mask: Optional[np.ndarray] = None) -> MetricResult:
    """Score each task on its known entries.

    AUC metrics skip tasks holding a single class and list them in
    ``skipped``; if every task is skipped :class:`SingleClass` is raised.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; choose from {sorted(METRICS)}")
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.ndim == 1:
        preds, targets = preds[:, None], targets[:, None]
    if mask is None:
        mask = np.ones(targets.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool).reshape(targets.shape)
    fn = METRICS[metric]
    scores: list[Optional[float]] = []
    skipped = []
    for j in range(targets.shape[1]):
        m = mask[:, j]
        if not m.any():
            scores.append(None)
            skipped.append(j)
            continue
        try:
            scores.append(fn(preds[m, j], targets[m, j]))
        except SingleClass:
            scores.append(None)
            skipped.append(j)
    if all(s is None for s in scores):
        if metric in CLASSIFICATION_METRICS:
            raise SingleClass("no task has both classes present")
        raise Empty("no task has known targets")
    if skipped:
        logger.info("%s: skipped tasks %s", metric, skipped)
    return MetricResult(metric, tuple(scores), tuple(skipped))
