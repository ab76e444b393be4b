"""Oracles and generators shared by the unit and acceptance tests."""

import math

import numpy as np

from dmpnn import tensor as T
from dmpnn.chem import murcko_scaffold, parse_smiles
from dmpnn.data import Dataset, Record, SplitSpec, TooSmall, split, split_sizes
from dmpnn.model import DmpnnParams, ModelConfig, build_batch, forward, param_shapes, undirected_message_forward
from dmpnn.tensor import Tape, Tensor


def numeric_grad(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to array ``x`` (modified in place, restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + step
        hi = f()
        x[i] = old - step
        lo = f()
        x[i] = old
        g[i] = (hi - lo) / (2 * step)
    return g


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Max over entries of |a - b| / max(|a|, |b|); entries where both are below ``floor`` count as 0."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    den = np.maximum(np.abs(a), np.abs(b))
    ok = den >= floor
    if not ok.any():
        return 0.0
    return float((np.abs(a - b)[ok] / den[ok]).max())


def analytic_grads(loss_fn, leaves):
    for t in leaves:
        t.grad = None
    with T.Tape():
        loss = loss_fn()
        T.backward(loss)
    return [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in leaves]


# --- brute-force oracles (pair counting and threshold sweeps, O(n^2)) -------


def roc_pairs(scores, labels) -> float:
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return wins / (len(pos) * len(neg))


def average_precision_sweep(scores, labels) -> float:
    n_pos = sum(labels)
    total, prev_recall = 0.0, 0.0
    for t in sorted(set(scores), reverse=True):
        picked = [y for s, y in zip(scores, labels) if s >= t]
        tp = sum(picked)
        recall = tp / n_pos
        total += (recall - prev_recall) * (tp / len(picked))
        prev_recall = recall
    return total


def auc_instances(count, seed):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n = int(rng.integers(2, 51))
        labels = rng.integers(0, 2, size=n)
        labels[rng.integers(n)] = 1
        labels[(rng.integers(n - 1) + np.flatnonzero(labels)[0] + 1) % n] = 0
        # coarse grid forces ties
        scores = np.round(rng.random(n) * rng.choice([4, 10, 1000]), 0) / 10.0
        yield scores, labels


# hand-computed fixtures: (preds, targets, rmse, mae, r2)
REGRESSION_FIXTURES = [
    ([1.0, 2.0, 3.0], [1.0, 2.0, 4.0], math.sqrt(1.0 / 3.0), 1.0 / 3.0, 27.0 / 28.0),
    ([2.0, 4.0, 6.0, 8.0], [1.0, 2.0, 3.0, 4.0], math.sqrt(7.5), 2.5, 1.0),
    ([0.0, 1.0, 0.0, 1.0], [1.0, 0.0, 1.0, 0.0], 1.0, 1.0, 1.0),
]


RINGS = ["c1ccccc1", "C1CCCCC1", "c1ccncc1", "C1CCOC1", "c1ccc2ccccc2c1", "C1CC1", "c1ccsc1",
         "c1ccoc1", "C1CCNCC1", "c1cnc2ccccc2c1", "C1CCC1", "C1CCC(=O)C1"]
SUBS = ["", "C", "O", "CC", "Cl", "N", "OC", "FC"]
ACYCLIC = ["CCO", "CCCC", "CC(C)O", "CCN", "CO"]


def make_dataset(smiles, targets=None, task_type="regression") -> Dataset:
    targets = targets if targets is not None else [(float(i),) for i in range(len(smiles))]
    recs = [Record(s, tuple(t), parse_smiles(s), None, i) for i, (s, t) in enumerate(zip(smiles, targets))]
    return Dataset(recs, tuple(f"t{j}" for j in range(len(targets[0]))), task_type)


def synthetic_smiles(rng: np.random.Generator, n: int) -> list[str]:
    """Random molecules drawn from a small ring/substituent alphabet (repeats allowed)."""
    out = []
    for _ in range(n):
        if rng.random() < 0.15:
            out.append(ACYCLIC[rng.integers(len(ACYCLIC))])
        else:
            out.append(SUBS[rng.integers(len(SUBS))] + RINGS[rng.integers(len(RINGS))])
    return out


def check_split_invariants(d: Dataset, spec: SplitSpec) -> bool:
    """Assert partition + determinism (+ zero scaffold overlap for scaffold splits); False if TooSmall."""
    try:
        parts = split(d, spec)
    except TooSmall:
        return False
    rows = sorted(r.row for p in parts for r in p)
    assert rows == list(range(len(d))), "not a partition"
    assert [p.smiles for p in parts] == [p.smiles for p in split(d, spec)]
    if spec.kind == "scaffold":
        keys = [{murcko_scaffold(r.mol) for r in p} for p in parts]
        assert not (keys[0] & keys[1]) and not (keys[0] & keys[2]) and not (keys[1] & keys[2])
    else:
        assert tuple(len(p) for p in parts) == split_sizes(len(d), spec.fractions)
    return True


def positive_params(cfg: ModelConfig, seed=0) -> DmpnnParams:
    # all-positive weights keep every ReLU active, so structural zeros are the only zeros
    rng = np.random.default_rng(seed)
    return DmpnnParams(cfg, {n: rng.uniform(0.01, 0.1, size=s) for n, s in param_shapes(cfg).items()})


def edge_jacobian_rows(fn, smiles: str, edge: int, depth: int) -> np.ndarray:
    """Input rows whose perturbation moves the final state of ``edge`` (exact zeros otherwise)."""
    cfg = ModelConfig(depth=depth, hidden=8, message_type="undirected" if fn is undirected_message_forward else "directed")
    params = positive_params(cfg)
    bg = build_batch([parse_smiles(smiles)])
    x = Tensor(bg.edge_x.copy(), requires_grad=True)
    trace = []
    with Tape():
        fn(bg, params, trace=trace, inputs=x)
        T.backward(T.sum_all(T.gather_rows(trace[-1][1], np.array([edge]))))
    return np.flatnonzero(np.abs(x.grad).sum(axis=1))


def gradient_case(message_type, features_dim=0, classification=False, n_tasks=1, hidden=10, ffn_hidden=7):
    """Parameters and a scalar loss over a fixed 3-molecule batch."""
    cfg = ModelConfig(depth=3, hidden=hidden, ffn_layers=2, ffn_hidden=ffn_hidden, n_tasks=n_tasks,
                      message_type=message_type, features_dim=features_dim, classification=classification)
    rng = np.random.default_rng(11)
    params = DmpnnParams.init(cfg, rng)
    feats = rng.random((3, features_dim)) if features_dim else None
    bg = build_batch([parse_smiles(s) for s in ["CC(=O)Oc1ccccc1C(=O)O", "ClC(Cl)Cl", "OCC1OC(O)C(O)C1O"]], feats)
    targets = rng.normal(size=(3, n_tasks))
    if classification:
        targets = (targets > 0).astype(float)

    def loss():
        out = forward(bg, params)
        if classification:
            return T.sum_all(T.bce_with_logits(out, targets))
        return T.sum_all(T.square(T.sub(out, Tensor(targets))))

    return params, loss
