"""Glue between datasets and molecule-level features."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .data import Dataset
from .featurize import FEATURE_KINDS, DimensionMismatch, Featurization, load_feature_file, native_matrix


def parse_feature_option(value: str) -> tuple[str, Optional[str]]:
    """``none`` | ``native`` | ``file:PATH`` -> (kind, path)."""
    if value.startswith("file:"):
        path = value[len("file:") :]
        if not path:
            raise ValueError("file: features need a path")
        return "file", path
    if value not in FEATURE_KINDS or value == "file":
        raise ValueError(f"features must be none, native or file:PATH, got {value!r}")
    return value, None


def attach_raw_features(data: Dataset, kind: str, file_matrix: Optional[np.ndarray] = None) -> Dataset:
    """Attach unscaled features. File rows line up with the data rows of the source CSV."""
    if kind == "none":
        return data.with_features(None)
    if kind == "native":
        return data.with_features(native_matrix(data.mols))
    if file_matrix is None:
        raise ValueError("file features need a feature matrix")
    rows = np.array([r.row for r in data.records])
    if rows.size and rows.max() >= file_matrix.shape[0]:
        raise DimensionMismatch(f"feature file has {file_matrix.shape[0]} rows, data needs {rows.max() + 1}")
    return data.with_features(file_matrix[rows])


def load_raw_features(data: Dataset, option: str) -> tuple[str, Dataset]:
    kind, path = parse_feature_option(option)
    matrix = load_feature_file(path) if path else None
    return kind, attach_raw_features(data, kind, matrix)


def featurize_splits(kind: str, parts: Sequence[Dataset]) -> tuple[Featurization, tuple[Dataset, ...]]:
    """Fit the CDF table on the first (training) part and scale every part with it."""
    feat = Featurization.fit(kind, parts[0].features() if kind != "none" else None)
    if feat.kind == "none":
        return feat, tuple(parts)
    return feat, tuple(p.with_features(feat.transform(p.features())) for p in parts)
