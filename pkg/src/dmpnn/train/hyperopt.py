"""Hyperparameter search over a small discrete space with a tree-structured Parzen estimator.

Every dimension is an ordered list of values and is modelled on its index
axis. After the random start-up trials, past trials are split into the best
``gamma`` fraction and the rest; each side gets a per-dimension mixture of
discretized Gaussians plus a uniform prior. Candidates are drawn from the
good-side mixture and the one with the largest good/bad density ratio is
evaluated next.
"""

from __future__ import annotations

import itertools
import logging
import math
import threading
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from ..data import Dataset, SplitSpec, split
from ..pipeline import attach_raw_features, featurize_splits
from .loop import TrainConfig, rng_stream, train_model
from .metrics import LOWER_IS_BETTER, default_metric

logger = logging.getLogger(__name__)

_RANDOM_TAG, _TPE_TAG = 11, 12


@dataclass(frozen=True)
class HyperSpace:
    depth: tuple = tuple(range(2, 7))
    hidden: tuple = tuple(range(300, 2401, 100))
    ffn_layers: tuple = (1, 2, 3)
    dropout: tuple = tuple(round(0.05 * k, 2) for k in range(9))

    NAMES = ("depth", "hidden", "ffn_layers", "dropout")

    def __post_init__(self):
        for name in self.NAMES:
            if len(getattr(self, name)) == 0:
                raise ValueError(f"dimension {name} is empty")

    @property
    def dims(self) -> list[tuple]:
        return [getattr(self, n) for n in self.NAMES]

    @property
    def size(self) -> int:
        return math.prod(len(d) for d in self.dims)

    def decode(self, index: Sequence[int]) -> dict:
        return {n: d[i] for n, d, i in zip(self.NAMES, self.dims, index)}

    def grid(self):
        for idx in itertools.product(*(range(len(d)) for d in self.dims)):
            yield self.decode(idx)


@dataclass(frozen=True)
class Trial:
    number: int
    params: dict
    score: float
    source: str  # "random" or "tpe"

    def to_dict(self) -> dict:
        return {"trial": self.number, **self.params, "score": self.score, "source": self.source}


@dataclass
class HyperoptResult:
    best: dict
    best_score: float
    trials: list[Trial] = field(default_factory=list)
    minimize: bool = True

    def running_best(self) -> list[float]:
        out, cur = [], None
        for t in self.trials:
            if cur is None or (t.score < cur if self.minimize else t.score > cur):
                cur = t.score
            out.append(cur)
        return out

    def to_dict(self) -> dict:
        return {
            "best": self.best,
            "best_score": self.best_score,
            "minimize": self.minimize,
            "trials": [t.to_dict() for t in self.trials],
        }


def _parzen(obs: np.ndarray, k: int, prior_weight: float = 1.0) -> np.ndarray:
    """Probability over indices ``0..k-1`` from observed indices."""
    grid = np.arange(k, dtype=np.float64)
    density = np.full(k, prior_weight / k)
    if obs.size:
        # bandwidth shrinks as observations accumulate, never below one step
        sigma = max(1.0, (k - 1) / math.sqrt(obs.size + 1)) * 0.5
        kern = np.exp(-0.5 * ((grid[None, :] - obs[:, None]) / sigma) ** 2)
        kern /= kern.sum(axis=1, keepdims=True)
        density = density + kern.sum(axis=0)
    return density / density.sum()


def _propose_tpe(space, history_idx, scores, minimize, rng, gamma, n_candidates, seen):
    order = np.argsort(scores if minimize else -np.asarray(scores), kind="mergesort")
    n_good = max(1, int(math.ceil(gamma * len(order))))
    obs = np.asarray(history_idx, dtype=np.float64)
    good, bad = obs[order[:n_good]], obs[order[n_good:]]
    sizes = [len(d) for d in space.dims]
    l_dens = [_parzen(good[:, j], k) for j, k in enumerate(sizes)]
    g_dens = [_parzen(bad[:, j], k) for j, k in enumerate(sizes)]
    cands = np.stack([rng.choice(k, size=n_candidates, p=l_dens[j]) for j, k in enumerate(sizes)], axis=1)
    ratio = sum(np.log(l_dens[j][cands[:, j]]) - np.log(g_dens[j][cands[:, j]]) for j in range(len(sizes)))
    for c in np.argsort(-ratio, kind="mergesort"):
        key = tuple(int(v) for v in cands[c])
        if key not in seen:
            return key
    return None


def _random_unseen(space, rng, seen, tries: int = 64):
    sizes = [len(d) for d in space.dims]
    for _ in range(tries):
        key = tuple(int(rng.integers(k)) for k in sizes)
        if key not in seen:
            return key
    rest = [idx for idx in itertools.product(*(range(k) for k in sizes)) if idx not in seen]
    return rest[int(rng.integers(len(rest)))] if rest else None


def hyperopt(
    objective: Callable[[dict], float],
    space: HyperSpace = HyperSpace(),
    iters: int = 50,
    seed: int = 0,
    minimize: bool = True,
    random_search: bool = False,
    gamma: float = 0.25,
    n_candidates: int = 24,
) -> HyperoptResult:
    """Minimize (or maximize) ``objective`` over ``space`` in ``iters`` distinct trials.

    The first ``max(10, iters // 5)`` trials are uniform random; with
    ``random_search`` all of them are. The search stops early only if the
    space has fewer than ``iters`` configurations.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    n_startup = max(10, iters // 5)
    rng = rng_stream(seed, _RANDOM_TAG)
    tpe_rng = rng_stream(seed, _TPE_TAG)
    lock = threading.Lock()
    seen: set[tuple] = set()
    history_idx: list[tuple] = []
    scores: list[float] = []
    trials: list[Trial] = []
    for t in range(min(iters, space.size)):
        key, source = None, "random"
        if not random_search and t >= n_startup:
            key = _propose_tpe(space, history_idx, scores, minimize, tpe_rng, gamma, n_candidates, seen)
            source = "tpe"
        if key is None:
            key = _random_unseen(space, rng, seen)
            source = "random" if t < n_startup or random_search else "tpe-fallback"
        params = space.decode(key)
        score = float(objective(params))
        if math.isnan(score):
            score = math.inf if minimize else -math.inf
        with lock:
            seen.add(key)
            history_idx.append(key)
            scores.append(score)
            trials.append(Trial(t, params, score, source))
        logger.info("trial %d %s -> %.5g", t, params, score)
    best_i = int(np.argmin(scores) if minimize else np.argmax(scores))
    return HyperoptResult(trials[best_i].params, scores[best_i], trials, minimize)


def training_objective(
    base: TrainConfig,
    data: Dataset,
    n_splits: int = 3,
    fractions=(0.8, 0.1, 0.1),
    split_kind: str = "random",
    file_features: Optional[np.ndarray] = None,
) -> Callable[[dict], float]:
    """Mean validation metric over ``n_splits`` seeded splits for a given hyperparameter dict."""
    data = attach_raw_features(data, base.features, file_features)
    parts = [split(data, SplitSpec(tuple(fractions), s, split_kind)) for s in range(n_splits)]
    prepared = [featurize_splits(base.features, p) for p in parts]

    def objective(hp: dict) -> float:
        cfg = replace(base, **hp)
        vals = []
        for feat, (train, val, _test) in prepared:
            vals.append(train_model(cfg, train, val, feat).model.best_score)
        return float(np.mean(vals))

    return objective


def metric_minimizes(metric: Optional[str], task_type: str) -> bool:
    return LOWER_IS_BETTER[metric or default_metric(task_type)]
