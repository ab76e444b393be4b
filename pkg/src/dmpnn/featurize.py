"""Atom/bond feature vectors, Morgan fingerprints, native descriptors and CDF scaling."""

from __future__ import annotations

import csv
import hashlib
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .chem import elements
from .chem.graph import Atom, Bond, BondOrder, Hybridization, MolGraph
from .chem.rings import cycle_rank

# block sizes of the atom vector, in order
ATOM_TYPE_SIZE = 100
ATOM_BLOCKS = (
    ("atom_type", ATOM_TYPE_SIZE),
    ("num_bonds", 6),
    ("formal_charge", 5),
    ("chirality", 4),
    ("num_hs", 5),
    ("hybridization", 5),
    ("aromatic", 1),
    ("mass", 1),
)
BOND_BLOCKS = (("bond_type", 4), ("conjugated", 1), ("in_ring", 1), ("stereo", 6))
ATOM_FDIM = sum(size for _, size in ATOM_BLOCKS)
BOND_FDIM = sum(size for _, size in BOND_BLOCKS)
EDGE_FDIM = ATOM_FDIM + BOND_FDIM


def _offsets(blocks) -> dict[str, int]:
    out, pos = {}, 0
    for name, size in blocks:
        out[name] = pos
        pos += size
    return out


ATOM_OFFSETS = _offsets(ATOM_BLOCKS)
BOND_OFFSETS = _offsets(BOND_BLOCKS)
_CHARGES = (-2, -1, 0, 1, 2)


class DimensionMismatch(ValueError):
    pass


class DegenerateColumnWarning(UserWarning):
    pass


def atom_features(a: Atom) -> np.ndarray:
    x = np.zeros(ATOM_FDIM)
    if 1 <= a.atomic_number <= ATOM_TYPE_SIZE:
        x[a.atomic_number - 1] = 1.0
    x[ATOM_OFFSETS["num_bonds"] + min(a.degree, 5)] = 1.0
    charge = min(max(a.formal_charge, _CHARGES[0]), _CHARGES[-1])
    x[ATOM_OFFSETS["formal_charge"] + _CHARGES.index(charge)] = 1.0
    x[ATOM_OFFSETS["chirality"] + int(a.chirality)] = 1.0
    x[ATOM_OFFSETS["num_hs"] + min(a.total_h, 4)] = 1.0
    x[ATOM_OFFSETS["hybridization"] + int(a.hybridization)] = 1.0
    x[ATOM_OFFSETS["aromatic"]] = float(a.aromatic)
    x[ATOM_OFFSETS["mass"]] = elements.atomic_weight(a.atomic_number) / 100.0
    return x


def bond_features(b: Bond) -> np.ndarray:
    e = np.zeros(BOND_FDIM)
    e[BOND_OFFSETS["bond_type"] + int(b.order)] = 1.0
    e[BOND_OFFSETS["conjugated"]] = float(b.conjugated)
    e[BOND_OFFSETS["in_ring"]] = float(b.in_ring)
    e[BOND_OFFSETS["stereo"] + int(b.stereo)] = 1.0
    return e


def edge_input(v: Atom, b: Bond) -> np.ndarray:
    """Input of the directed edge leaving atom ``v`` along bond ``b``."""
    return np.concatenate([atom_features(v), bond_features(b)])


def molecule_arrays(g: MolGraph) -> tuple[np.ndarray, np.ndarray]:
    """Atom matrix (n_atoms x ATOM_FDIM) and bond matrix (n_bonds x BOND_FDIM)."""
    atoms = np.array([atom_features(a) for a in g.atoms]).reshape(g.num_atoms, ATOM_FDIM)
    bonds = np.array([bond_features(b) for b in g.bonds]).reshape(g.num_bonds, BOND_FDIM)
    return atoms, bonds


# --- Morgan / ECFP-style fingerprints -------------------------------------

_MASK64 = (1 << 64) - 1
_FP_SEED = 0x9E3779B97F4A7C15


def _mix64(x: int) -> int:
    # splitmix64 finalizer
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def hash_ints(values: Sequence[int]) -> int:
    h = _FP_SEED
    for v in values:
        h = _mix64(h ^ (v & _MASK64))
    return h


def morgan_identifiers(g: MolGraph, radius: int) -> list[int]:
    """Identifiers of every atom at every iteration 0..radius."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    ids = [
        hash_ints((a.atomic_number, a.degree, a.formal_charge, a.total_h, int(a.in_ring), int(a.aromatic)))
        for a in g.atoms
    ]
    found = list(ids)
    for it in range(1, radius + 1):
        new = []
        for v in range(g.num_atoms):
            env = sorted((int(g.bonds[bi].order), ids[w]) for w, bi in g.adjacency[v])
            flat = [it, ids[v]]
            for order, nid in env:
                flat.extend((order, nid))
            new.append(hash_ints(flat))
        ids = new
        found.extend(ids)
    return found


def morgan_fingerprint(g: MolGraph, radius: int = 2, nbits: int = 2048, counted: bool = False) -> np.ndarray:
    if nbits < 1:
        raise ValueError("nbits must be >= 1")
    fp = np.zeros(nbits)
    for ident in morgan_identifiers(g, radius):
        if counted:
            fp[ident % nbits] += 1.0
        else:
            fp[ident % nbits] = 1.0
    return fp


def tanimoto(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a) > 0, np.asarray(b) > 0
    union = np.logical_or(a, b).sum()
    return 1.0 if union == 0 else float(np.logical_and(a, b).sum() / union)


# --- native descriptors -----------------------------------------------------

DESCRIPTOR_NAMES = (
    "MolWt",
    "HeavyAtomCount",
    "RingCount",
    "NumAromaticRings",
    "NumHAcceptors",
    "NumHDonors",
    "FractionCSP3",
    "NumRotatableBonds",
    "FormalChargeSum",
    "HalogenCount",
)


def _aromatic_ring_count(g: MolGraph) -> int:
    aro = [b for b in g.bonds if b.order == BondOrder.AROMATIC]
    if not aro:
        return 0
    atoms = sorted({b.begin for b in aro} | {b.end for b in aro})
    parent = {a: a for a in atoms}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for b in aro:
        parent[find(b.begin)] = find(b.end)
    components = len({find(a) for a in atoms})
    return cycle_rank(len(atoms), len(aro), components)


def compute_descriptors(g: MolGraph) -> np.ndarray:
    """The ten native descriptors listed in :data:`DESCRIPTOR_NAMES`."""
    atoms = g.atoms
    # fsum keeps the weight independent of atom order
    mol_wt = math.fsum(elements.atomic_weight(a.atomic_number) + a.total_h * elements.HYDROGEN_MASS for a in atoms)
    heavy = sum(a.atomic_number > 1 for a in atoms)
    rings = cycle_rank(g.num_atoms, g.num_bonds, g.num_components())
    acceptors = sum(a.atomic_number in (7, 8) for a in atoms)
    donors = sum(a.atomic_number in (7, 8) and a.total_h > 0 for a in atoms)
    carbons = [a for a in atoms if a.atomic_number == 6]
    csp3 = sum(a.hybridization == Hybridization.SP3 for a in carbons) / len(carbons) if carbons else 0.0
    heavy_degree = [sum(atoms[w].atomic_number > 1 for w, _ in g.adjacency[v]) for v in range(g.num_atoms)]
    rotatable = sum(
        b.order == BondOrder.SINGLE and not b.in_ring and heavy_degree[b.begin] > 1 and heavy_degree[b.end] > 1
        for b in g.bonds
    )
    charge = sum(a.formal_charge for a in atoms)
    halogens = sum(a.atomic_number in elements.HALOGENS for a in atoms)
    return np.array(
        [mol_wt, heavy, rings, _aromatic_ring_count(g), acceptors, donors, csp3, rotatable, charge, halogens],
        dtype=np.float64,
    )


# --- empirical CDF normalization ---------------------------------------------


@dataclass(frozen=True)
class FeatureCdfTable:
    """Per-feature empirical CDF support.

    ``support[j]`` holds the distinct sorted reference values of feature ``j``
    and ``levels[j]`` their mid-rank fraction ``(first + last) / 2 / (n - 1)``.
    Queries interpolate linearly between support points and clamp to 0 below
    the minimum and 1 above the maximum.
    """

    support: tuple[np.ndarray, ...]
    levels: tuple[np.ndarray, ...]
    num_reference: int

    @property
    def dim(self) -> int:
        return len(self.support)

    @property
    def degenerate(self) -> tuple[bool, ...]:
        return tuple(len(s) == 1 for s in self.support)

    def digest(self) -> str:
        h = hashlib.sha256()
        for s, lv in zip(self.support, self.levels):
            h.update(np.ascontiguousarray(s).tobytes())
            h.update(np.ascontiguousarray(lv).tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {
            "num_reference": self.num_reference,
            "support": [s.tolist() for s in self.support],
            "levels": [lv.tolist() for lv in self.levels],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureCdfTable":
        return cls(
            tuple(np.asarray(s, dtype=np.float64) for s in d["support"]),
            tuple(np.asarray(lv, dtype=np.float64) for lv in d["levels"]),
            int(d["num_reference"]),
        )


def fit_cdf(reference) -> FeatureCdfTable:
    ref = np.asarray(reference, dtype=np.float64)
    if ref.ndim != 2 or ref.shape[0] < 2:
        raise ValueError("fit_cdf needs a matrix with at least two rows")
    if not np.all(np.isfinite(ref)):
        raise ValueError("reference features must be finite")
    n = ref.shape[0]
    support, levels = [], []
    for j in range(ref.shape[1]):
        values, counts = np.unique(ref[:, j], return_counts=True)
        first = np.concatenate([[0], np.cumsum(counts)[:-1]])
        if len(values) == 1:
            warnings.warn(f"feature {j} is constant in the reference set", DegenerateColumnWarning, stacklevel=2)
            lv = np.array([0.5])
        else:
            lv = (first + (counts - 1) / 2.0) / (n - 1)
        support.append(values)
        levels.append(lv)
    return FeatureCdfTable(tuple(support), tuple(levels), n)


def normalize(raw, table: FeatureCdfTable) -> np.ndarray:
    """Map raw features (vector or row matrix) to their CDF level in ``table``."""
    x = np.asarray(raw, dtype=np.float64)
    single = x.ndim == 1
    rows = x[None, :] if single else x
    if rows.ndim != 2 or rows.shape[1] != table.dim:
        raise DimensionMismatch(f"expected {table.dim} features, got shape {x.shape}")
    out = np.empty_like(rows)
    for j, (s, lv) in enumerate(zip(table.support, table.levels)):
        col = rows[:, j]
        if len(s) == 1:
            out[:, j] = 0.5
            continue
        vals = np.interp(col, s, lv)
        vals[col < s[0]] = 0.0
        vals[col > s[-1]] = 1.0
        out[:, j] = vals
    return out[0] if single else out


def load_feature_file(path) -> np.ndarray:
    """Numeric CSV, one row per molecule; a non-numeric first row is treated as a header."""
    with open(Path(path), newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ValueError(f"{path}: empty feature file")
    try:
        [float(v) for v in rows[0]]
    except ValueError:
        rows = rows[1:]
    if len({len(r) for r in rows}) != 1:
        raise DimensionMismatch(f"{path}: rows have differing lengths")
    return np.array([[float(v) for v in r] for r in rows], dtype=np.float64)


# --- molecule-level feature pipelines -----------------------------------------

FEATURE_KINDS = ("none", "native", "file")


def native_matrix(mols: Sequence[MolGraph]) -> np.ndarray:
    return np.array([compute_descriptors(g) for g in mols]).reshape(len(mols), len(DESCRIPTOR_NAMES))


@dataclass(frozen=True)
class Featurization:
    """How molecule-level features are produced and scaled for a model.

    ``kind`` is ``none``, ``native`` (the descriptors above) or ``file``
    (user-supplied columns). Raw values go through the CDF table fitted on
    the training molecules.
    """

    kind: str = "none"
    table: Optional[FeatureCdfTable] = None

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ValueError(f"feature kind must be one of {FEATURE_KINDS}")
        if (self.kind == "none") != (self.table is None):
            raise ValueError("a CDF table is required exactly when features are used")

    @property
    def dim(self) -> int:
        return 0 if self.table is None else self.table.dim

    @classmethod
    def fit(cls, kind: str, raw_train: Optional[np.ndarray]) -> "Featurization":
        if kind == "none":
            return cls()
        if raw_train is None:
            raise ValueError(f"{kind} features requested but none were attached")
        return cls(kind, fit_cdf(raw_train))

    def transform(self, raw: Optional[np.ndarray]) -> Optional[np.ndarray]:
        if self.table is None:
            if raw is not None and np.size(raw):
                raise DimensionMismatch("model uses no features but features were supplied")
            return None
        if raw is None:
            raise DimensionMismatch(f"model expects {self.dim} features, got none")
        return normalize(raw, self.table)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "dim": self.dim}
        if self.table is not None:
            d["cdf"] = self.table.to_dict()
            d["digest"] = self.table.digest()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Featurization":
        if d["kind"] == "none":
            return cls()
        table = FeatureCdfTable.from_dict(d["cdf"])
        if table.digest() != d["digest"]:
            raise ValueError("CDF table digest does not match its contents")
        if table.dim != d["dim"]:
            raise DimensionMismatch(f"CDF table has {table.dim} columns, header says {d['dim']}")
        return cls(d["kind"], table)
