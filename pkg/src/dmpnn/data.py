"""Datasets, target scaling, random/scaffold/index splits and split statistics."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .chem import MolGraph, SmilesError, murcko_scaffold, parse_smiles

logger = logging.getLogger(__name__)

TASK_TYPES = ("regression", "classification")
SPLIT_KINDS = ("random", "scaffold", "index")
DATA_DIR = Path(__file__).parent / "datasets"


class DataError(ValueError):
    pass


class MissingHeader(DataError):
    pass


class NoTasks(DataError):
    pass


class AllRowsInvalid(DataError):
    pass


class TooSmall(DataError):
    pass


class EmptySet(DataError):
    pass


class NotClassification(DataError):
    pass


class ConstantTarget(DataError):
    pass


@dataclass(frozen=True)
class Record:
    smiles: str
    targets: tuple[Optional[float], ...]
    mol: MolGraph = field(compare=False, repr=False)
    features: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    row: int = -1  # 0-based data row in the source file


@dataclass(frozen=True)
class RejectedRow:
    row: int
    smiles: str
    reason: str


@dataclass
class Dataset:
    records: list[Record]
    task_names: tuple[str, ...]
    task_type: str = "regression"
    rejected: list[RejectedRow] = field(default_factory=list)

    def __post_init__(self):
        if self.task_type not in TASK_TYPES:
            raise DataError(f"task_type must be one of {TASK_TYPES}")
        n = len(self.task_names)
        for r in self.records:
            if len(r.targets) != n:
                raise DataError(f"record {r.smiles!r} has {len(r.targets)} targets, expected {n}")
            if self.task_type == "classification":
                for y in r.targets:
                    if y is not None and y not in (0.0, 1.0):
                        raise DataError(f"classification target {y} for {r.smiles!r} is not 0/1")

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i: int) -> Record:
        return self.records[i]

    def __iter__(self):
        return iter(self.records)

    @property
    def num_tasks(self) -> int:
        return len(self.task_names)

    @property
    def smiles(self) -> list[str]:
        return [r.smiles for r in self.records]

    @property
    def mols(self) -> list[MolGraph]:
        return [r.mol for r in self.records]

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset([self.records[i] for i in indices], self.task_names, self.task_type)

    def targets(self) -> tuple[np.ndarray, np.ndarray]:
        """``(values, mask)``; missing entries are 0 in ``values`` and False in ``mask``."""
        values = np.zeros((len(self), self.num_tasks))
        mask = np.zeros((len(self), self.num_tasks), dtype=bool)
        for i, r in enumerate(self.records):
            for j, y in enumerate(r.targets):
                if y is not None:
                    values[i, j] = y
                    mask[i, j] = True
        return values, mask

    @property
    def features_dim(self) -> int:
        dims = {0 if r.features is None else len(r.features) for r in self.records}
        if len(dims) > 1:
            raise DataError(f"inconsistent feature lengths {sorted(dims)}")
        return dims.pop() if dims else 0

    def features(self) -> Optional[np.ndarray]:
        if not self.records or self.records[0].features is None:
            return None
        self.features_dim  # consistency check
        return np.stack([r.features for r in self.records])

    def with_features(self, matrix: Optional[np.ndarray]) -> "Dataset":
        if matrix is None:
            recs = [replace(r, features=None) for r in self.records]
        else:
            matrix = np.asarray(matrix, dtype=np.float64)
            if matrix.ndim != 2 or matrix.shape[0] != len(self):
                raise DataError(f"feature matrix {matrix.shape} does not match {len(self)} records")
            recs = [replace(r, features=matrix[i]) for i, r in enumerate(self.records)]
        return Dataset(recs, self.task_names, self.task_type, list(self.rejected))

    def check_tasks(self) -> None:
        _, mask = self.targets()
        for j, name in enumerate(self.task_names):
            if not mask[:, j].any():
                raise DataError(f"task {name!r} has no known values")


def _parse_target(cell: str) -> Optional[float]:
    cell = cell.strip()
    if cell == "":
        return None
    value = float(cell)
    if not math.isfinite(value):
        raise ValueError(f"non-finite target {cell!r}")
    return value


def load_csv(path, task_type: str = "regression", task_names: Optional[Sequence[str]] = None) -> Dataset:
    """Read a ``smiles,<task>...`` CSV. Empty cells are missing targets.

    Rows whose SMILES fail to parse, or whose targets are not numbers, are
    collected in ``dataset.rejected`` rather than aborting the load.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0].strip().lower() != "smiles":
        raise MissingHeader(f"{path}: first header column must be 'smiles'")
    header = [h.strip() for h in rows[0]]
    columns = list(range(1, len(header)))
    if task_names is not None:
        missing = [t for t in task_names if t not in header]
        if missing:
            raise NoTasks(f"{path}: task columns {missing} not found")
        columns = [header.index(t) for t in task_names]
    if not columns:
        raise NoTasks(f"{path}: no task columns")
    names = tuple(header[c] for c in columns)

    records, rejected = [], []
    for i, row in enumerate(rows[1:]):
        if not row or all(not c.strip() for c in row):
            continue
        smi = row[0].strip()
        try:
            mol = parse_smiles(smi)
            cells = [row[c] if c < len(row) else "" for c in columns]
            targets = tuple(_parse_target(c) for c in cells)
            if task_type == "classification" and any(y not in (None, 0.0, 1.0) for y in targets):
                raise ValueError("classification targets must be 0 or 1")
        except (SmilesError, ValueError) as exc:
            rejected.append(RejectedRow(i, smi, f"{type(exc).__name__}: {exc}"))
            continue
        records.append(Record(smi, targets, mol, None, i))
    if not records:
        raise AllRowsInvalid(f"{path}: none of {len(rejected)} rows could be used")
    for rej in rejected:
        logger.warning("row %d (%s) rejected: %s", rej.row, rej.smiles, rej.reason)
    ds = Dataset(records, names, task_type, rejected)
    ds.check_tasks()
    return ds


def _format_target(y: Optional[float]) -> str:
    return "" if y is None else repr(float(y))


def save_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["smiles", *dataset.task_names])
        for r in dataset.records:
            w.writerow([r.smiles, *(_format_target(y) for y in r.targets)])


def load_builtin(name: str) -> Dataset:
    """Bundled regression benchmarks: ``esol`` (1128 molecules) or ``freesolv`` (642)."""
    path = DATA_DIR / f"{name.lower()}.csv"
    if not path.exists():
        raise DataError(f"no bundled dataset {name!r}")
    return load_csv(path, "regression")


# --- targets ---------------------------------------------------------------


@dataclass(frozen=True)
class TargetScaler:
    means: tuple[float, ...]
    stds: tuple[float, ...]

    @classmethod
    def fit(cls, values: np.ndarray, mask: np.ndarray) -> "TargetScaler":
        means, stds = [], []
        for j in range(values.shape[1]):
            col = values[mask[:, j], j]
            if col.size < 2:
                raise ConstantTarget(f"task {j} has fewer than two training values")
            std = float(col.std())
            if std == 0.0:
                raise ConstantTarget(f"task {j} is constant on the training set")
            means.append(float(col.mean()))
            stds.append(std)
        return cls(tuple(means), tuple(stds))

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - np.asarray(self.means)) / np.asarray(self.stds)

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return values * np.asarray(self.stds) + np.asarray(self.means)

    def to_dict(self) -> dict:
        return {"means": list(self.means), "stds": list(self.stds)}

    @classmethod
    def from_dict(cls, d: dict) -> "TargetScaler":
        return cls(tuple(d["means"]), tuple(d["stds"]))


def fit_scaler(train: Dataset) -> TargetScaler:
    values, mask = train.targets()
    return TargetScaler.fit(values, mask)


def apply_scaler(scaler: TargetScaler, values: np.ndarray) -> np.ndarray:
    return scaler.transform(values)


def invert_scaler(scaler: TargetScaler, values: np.ndarray) -> np.ndarray:
    return scaler.inverse(values)


# --- splitting ---------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0
    kind: str = "random"

    def __post_init__(self):
        if self.kind not in SPLIT_KINDS:
            raise DataError(f"split kind must be one of {SPLIT_KINDS}")
        if len(self.fractions) != 3 or any(not 0.0 < f < 1.0 for f in self.fractions):
            raise DataError(f"split fractions must be three numbers in (0, 1), got {self.fractions}")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise DataError(f"split fractions must sum to 1, got {sum(self.fractions)}")


def split_sizes(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    train = int(round(fractions[0] * n))
    val = int(round(fractions[1] * n))
    val = min(val, n - train)
    return train, val, n - train - val


def _check_parts(parts, spec: SplitSpec):
    sizes = tuple(len(p) for p in parts)
    if min(sizes) == 0:
        raise TooSmall(f"{spec.kind} split (seed {spec.seed}) produced an empty part: sizes {sizes}")
    return parts


def random_split_indices(n: int, spec: SplitSpec):
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(n)
    a, b, _ = split_sizes(n, spec.fractions)
    return _check_parts((np.sort(perm[:a]), np.sort(perm[a : a + b]), np.sort(perm[a + b :])), spec)


def index_split_indices(n: int, spec: SplitSpec):
    a, b, _ = split_sizes(n, spec.fractions)
    idx = np.arange(n)
    return _check_parts((idx[:a], idx[a : a + b], idx[a + b :]), spec)


def scaffold_keys(dataset: Dataset) -> list[str]:
    return [murcko_scaffold(r.mol) for r in dataset.records]


def scaffold_bins(keys: Sequence[str]) -> dict[str, list[int]]:
    bins: dict[str, list[int]] = {}
    for i, k in enumerate(keys):
        bins.setdefault(k, []).append(i)
    return bins


def scaffold_split_indices(keys: Sequence[str], spec: SplitSpec):
    """Partition by scaffold bin.

    Bins larger than half the target test size go to train. The rest are
    shuffled and each is given to the part with the largest remaining deficit
    (ties: train, then validation, then test).
    """
    n = len(keys)
    targets = np.array(split_sizes(n, spec.fractions), dtype=np.int64)
    bins = list(scaffold_bins(keys).values())
    parts: list[list[int]] = [[], [], []]
    small = []
    for b in bins:
        if len(b) > targets[2] / 2:
            parts[0].extend(b)
        else:
            small.append(b)
    rng = np.random.default_rng(spec.seed)
    for k in rng.permutation(len(small)):
        deficits = targets - np.array([len(p) for p in parts])
        parts[int(np.argmax(deficits))].extend(small[k])
    return _check_parts(tuple(np.array(sorted(p), dtype=np.int64) for p in parts), spec)


def split_indices(dataset: Dataset, spec: SplitSpec, keys: Optional[Sequence[str]] = None):
    if spec.kind == "random":
        return random_split_indices(len(dataset), spec)
    if spec.kind == "index":
        return index_split_indices(len(dataset), spec)
    return scaffold_split_indices(keys if keys is not None else scaffold_keys(dataset), spec)


def random_split(dataset: Dataset, spec: SplitSpec):
    return tuple(dataset.subset(ix) for ix in random_split_indices(len(dataset), spec))


def scaffold_split(dataset: Dataset, spec: SplitSpec):
    return tuple(dataset.subset(ix) for ix in scaffold_split_indices(scaffold_keys(dataset), spec))


def split(dataset: Dataset, spec: SplitSpec):
    return tuple(dataset.subset(ix) for ix in split_indices(dataset, spec))


def scaffold_overlap(train: Dataset, test: Dataset) -> float:
    """Percent of ``test`` molecules whose scaffold also occurs in ``train``."""
    if len(train) == 0 or len(test) == 0:
        raise EmptySet("scaffold_overlap needs non-empty sets")
    seen = set(scaffold_keys(train))
    shared = sum(k in seen for k in scaffold_keys(test))
    return 100.0 * shared / len(test)


def class_balance(dataset: Dataset) -> float:
    """Percent positives pooled over tasks, weighted by each task's known count."""
    if dataset.task_type != "classification":
        raise NotClassification("class_balance needs a classification dataset")
    values, mask = dataset.targets()
    known = mask.sum()
    if known == 0:
        raise EmptySet("no known labels")
    return 100.0 * float(values[mask].sum()) / float(known)


def write_split(outdir, parts: Sequence[Dataset], spec: SplitSpec) -> dict:
    """Write train/val/test CSVs plus ``split.json`` and return the manifest."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    names = ("train", "val", "test")
    for name, part in zip(names, parts):
        save_csv(part, outdir / f"{name}.csv")
    manifest = {
        "seed": spec.seed,
        "kind": spec.kind,
        "fractions": list(spec.fractions),
        "sizes": {name: len(p) for name, p in zip(names, parts)},
        "scaffold_counts": {name: len(set(scaffold_keys(p))) for name, p in zip(names, parts)},
        "scaffold_overlap": {
            "train_val": scaffold_overlap(parts[0], parts[1]),
            "train_test": scaffold_overlap(parts[0], parts[2]),
        },
    }
    write_json_atomic(outdir / "split.json", manifest)
    return manifest


def write_json_atomic(path, obj) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")
    os.replace(tmp, path)


def read_smiles_rows(path) -> list[str]:
    """SMILES column of a CSV with a ``smiles`` header, task columns optional."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0].strip().lower() != "smiles":
        raise MissingHeader(f"{path}: first header column must be 'smiles'")
    return [row[0].strip() for row in rows[1:] if row and any(c.strip() for c in row)]


def unlabeled_dataset(smiles: Sequence[str], task_names: Sequence[str], task_type: str = "regression") -> Dataset:
    """Records for every parseable SMILES (targets all missing); failures go to ``rejected``."""
    records, rejected = [], []
    for i, smi in enumerate(smiles):
        try:
            mol = parse_smiles(smi)
        except SmilesError as exc:
            rejected.append(RejectedRow(i, smi, f"{type(exc).__name__}: {exc}"))
            continue
        records.append(Record(smi, (None,) * len(task_names), mol, None, i))
    return Dataset(records, tuple(task_names), task_type, rejected)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
