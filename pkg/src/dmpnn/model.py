"""Directed message passing network, its ablations and the feed-forward readout.

Every bond ``(u, v)`` contributes two directed edges, ``u -> v`` at index
``2k`` and ``v -> u`` at ``2k + 1``, so the reverse of edge ``e`` is ``e ^ 1``.
The message into edge ``v -> w`` (the sum over ``k -> v`` with ``k != w``) is
computed as the full incoming sum at ``v`` minus the reverse edge ``w -> v``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from .chem.graph import MolGraph
from .featurize import ATOM_FDIM, EDGE_FDIM, molecule_arrays
from .tensor import Tensor

MESSAGE_TYPES = ("directed", "undirected", "atom", "none")


class EmptyBatch(ValueError):
    pass


@dataclass(frozen=True)
class MolTensors:
    """Per-molecule feature arrays, computed once and reused across batches."""

    atom_x: np.ndarray  # n_atoms x ATOM_FDIM
    edge_x: np.ndarray  # n_edges x EDGE_FDIM
    src: np.ndarray
    dst: np.ndarray

    @property
    def num_atoms(self) -> int:
        return self.atom_x.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edge_x.shape[0]


def mol_tensors(g: MolGraph) -> MolTensors:
    atoms, bonds = molecule_arrays(g)
    n_edges = 2 * g.num_bonds
    edge_x = np.zeros((n_edges, EDGE_FDIM))
    src = np.zeros(n_edges, dtype=np.int64)
    dst = np.zeros(n_edges, dtype=np.int64)
    for k, b in enumerate(g.bonds):
        for e, (u, v) in ((2 * k, (b.begin, b.end)), (2 * k + 1, (b.end, b.begin))):
            src[e], dst[e] = u, v
            edge_x[e, :ATOM_FDIM] = atoms[u]
            edge_x[e, ATOM_FDIM:] = bonds[k]
    return MolTensors(atoms, edge_x, src, dst)


@dataclass
class BatchGraph:
    atom_x: np.ndarray
    edge_x: np.ndarray
    b2a: np.ndarray  # edge -> source atom
    b2t: np.ndarray  # edge -> target atom
    b2rev: np.ndarray
    atom_spans: list[tuple[int, int]]
    edge_spans: list[tuple[int, int]]
    features: Optional[np.ndarray] = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def num_atoms(self) -> int:
        return self.atom_x.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edge_x.shape[0]

    @property
    def num_mols(self) -> int:
        return len(self.atom_spans)

    @property
    def a2b(self) -> list[np.ndarray]:
        """Incoming edge indices per atom."""
        order = np.argsort(self.b2t, kind="stable")
        counts = np.bincount(self.b2t, minlength=self.num_atoms)
        return np.split(order, np.cumsum(counts)[:-1])

    @property
    def atom_mol(self) -> np.ndarray:
        out = np.empty(self.num_atoms, dtype=np.int64)
        for i, (a, b) in enumerate(self.atom_spans):
            out[a:b] = i
        return out

    def matrix(self, name: str) -> sp.csr_matrix:
        """Cached sparse scatter matrices: ``incoming``, ``source``, ``reverse``, ``pool``."""
        if name not in self._cache:
            if name == "incoming":
                m = T.segment_matrix(self.b2t, self.num_atoms)
            elif name == "source":
                m = T.segment_matrix(self.b2a, self.num_atoms)
            elif name == "reverse":
                m = T.segment_matrix(self.b2rev, self.num_edges)
            elif name == "pool":
                m = T.segment_matrix(self.atom_mol, self.num_mols)
            else:
                raise KeyError(name)
            self._cache[name] = m
        return self._cache[name]


def build_batch(
    mols: Sequence[Union[MolGraph, MolTensors]],
    features: Optional[np.ndarray] = None,
) -> BatchGraph:
    if len(mols) == 0:
        raise EmptyBatch("cannot batch zero molecules")
    parts = [m if isinstance(m, MolTensors) else mol_tensors(m) for m in mols]
    atom_spans, edge_spans = [], []
    a_off = e_off = 0
    for p in parts:
        atom_spans.append((a_off, a_off + p.num_atoms))
        edge_spans.append((e_off, e_off + p.num_edges))
        a_off += p.num_atoms
        e_off += p.num_edges
    atom_x = np.concatenate([p.atom_x for p in parts]) if a_off else np.zeros((0, ATOM_FDIM))
    edge_x = np.concatenate([p.edge_x for p in parts]) if e_off else np.zeros((0, EDGE_FDIM))
    b2a = np.concatenate([p.src + s for p, (s, _) in zip(parts, atom_spans)]).astype(np.int64)
    b2t = np.concatenate([p.dst + s for p, (s, _) in zip(parts, atom_spans)]).astype(np.int64)
    b2rev = np.arange(e_off, dtype=np.int64) ^ 1
    if features is not None:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] != len(parts):
            raise T.ShapeMismatch(f"features shape {features.shape} does not match {len(parts)} molecules")
    return BatchGraph(atom_x, edge_x, b2a, b2t, b2rev, atom_spans, edge_spans, features)


@dataclass(frozen=True)
class ModelConfig:
    n_tasks: int = 1
    depth: int = 3
    hidden: int = 300
    ffn_layers: int = 2
    ffn_hidden: Optional[int] = None
    dropout: float = 0.0
    message_type: str = "directed"
    features_dim: int = 0
    classification: bool = False

    def __post_init__(self):
        if self.message_type not in MESSAGE_TYPES:
            raise ValueError(f"message_type must be one of {MESSAGE_TYPES}")
        if self.depth < 1 or self.hidden < 1 or self.ffn_layers < 1 or self.n_tasks < 1:
            raise ValueError("depth, hidden, ffn_layers and n_tasks must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.message_type == "none" and self.features_dim < 1:
            raise ValueError("a features-only model needs features_dim >= 1")

    @property
    def ffn_width(self) -> int:
        return self.ffn_hidden or self.hidden

    @property
    def ffn_input(self) -> int:
        base = 0 if self.message_type == "none" else self.hidden
        return base + self.features_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    if cfg.message_type != "none":
        in_dim = ATOM_FDIM if cfg.message_type == "atom" else EDGE_FDIM
        shapes["W_i"] = (cfg.hidden, in_dim)
        shapes["W_m"] = (cfg.hidden, cfg.hidden)
        shapes["W_a"] = (cfg.hidden, ATOM_FDIM + cfg.hidden)
    dims = [cfg.ffn_input] + [cfg.ffn_width] * (cfg.ffn_layers - 1) + [cfg.n_tasks]
    for i in range(cfg.ffn_layers):
        shapes[f"ffn{i}_W"] = (dims[i + 1], dims[i])
        shapes[f"ffn{i}_b"] = (1, dims[i + 1])
    return shapes


class DmpnnParams:
    """Named weight tensors plus the config that fixes their shapes."""

    def __init__(self, config: ModelConfig, weights: dict[str, np.ndarray]):
        expected = param_shapes(config)
        if set(weights) != set(expected):
            raise T.ShapeMismatch(f"weights {sorted(weights)} do not match {sorted(expected)}")
        for name, shape in expected.items():
            if tuple(np.shape(weights[name])) != shape:
                raise T.ShapeMismatch(f"{name}: expected {shape}, got {np.shape(weights[name])}")
        self.config = config
        self.tensors = {n: Tensor(weights[n], requires_grad=True) for n in expected}

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator) -> "DmpnnParams":
        weights = {}
        for name, shape in param_shapes(config).items():
            if name.endswith("_b"):
                weights[name] = np.zeros(shape)
            else:
                fan_out, fan_in = shape
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                weights[name] = rng.uniform(-limit, limit, size=shape)
        return cls(config, weights)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.tensors.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for n, t in self.tensors.items():
            t.data = np.array(arrays[n], dtype=np.float64).reshape(t.shape)

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def copy(self) -> "DmpnnParams":
        return DmpnnParams(self.config, self.arrays())

    def with_config(self, **changes) -> "DmpnnParams":
        return DmpnnParams(replace(self.config, **changes), self.arrays())


def _linear(x: Tensor, W: Tensor) -> Tensor:
    return T.matmul(x, T.transpose(W))


def _drop(x: Tensor, p: float, training: bool, rng) -> Tensor:
    return T.dropout(x, p, training, rng)


def ffn_forward(x: Tensor, params: DmpnnParams, training: bool = False, rng=None) -> Tensor:
    cfg = params.config
    for i in range(cfg.ffn_layers):
        x = T.add(_linear(x, params[f"ffn{i}_W"]), params[f"ffn{i}_b"])
        if i < cfg.ffn_layers - 1:
            x = _drop(T.relu(x), cfg.dropout, training, rng)
    return x


def _check_inputs(bg: BatchGraph, params: DmpnnParams) -> None:
    cfg = params.config
    fdim = 0 if bg.features is None else bg.features.shape[1]
    if fdim != cfg.features_dim:
        raise T.ShapeMismatch(f"model expects {cfg.features_dim} molecule features, batch has {fdim}")


def _readout(bg: BatchGraph, atom_hidden: Tensor, params: DmpnnParams, training: bool, rng) -> Tensor:
    cfg = params.config
    atom_in = T.concat([Tensor(bg.atom_x), atom_hidden], axis=1)
    h_v = _drop(T.relu(_linear(atom_in, params["W_a"])), cfg.dropout, training, rng)
    mol = T.segment_sum(h_v, bg.atom_mol, bg.num_mols, matrix=bg.matrix("pool"))
    if cfg.features_dim:
        mol = T.concat([mol, Tensor(bg.features)], axis=1)
    return ffn_forward(mol, params, training, rng)


def _edge_passing(bg: BatchGraph, params: DmpnnParams, training: bool, rng, undirected: bool, trace, inputs) -> Tensor:
    cfg = params.config
    x = Tensor(bg.edge_x) if inputs is None else inputs
    h0 = T.relu(_linear(x, params["W_i"]))
    h = _drop(h0, cfg.dropout, training, rng)
    if trace is not None:
        trace.append(("init", h))
    incoming, source, reverse = bg.matrix("incoming"), bg.matrix("source"), bg.matrix("reverse")
    W_m = params["W_m"]
    for _ in range(cfg.depth):
        if undirected:
            h = T.scale(T.add(h, T.gather_rows(h, bg.b2rev, reverse)), 0.5)
            if trace is not None:
                trace.append(("average", h))
        into_atom = T.segment_sum(h, bg.b2t, bg.num_atoms, matrix=incoming)
        msg = T.sub(T.gather_rows(into_atom, bg.b2a, source), T.gather_rows(h, bg.b2rev, reverse))
        h = _drop(T.relu(T.add(h0, _linear(msg, W_m))), cfg.dropout, training, rng)
        if trace is not None:
            trace.append(("step", h))
    return T.segment_sum(h, bg.b2t, bg.num_atoms, matrix=incoming)


def dmpnn_forward(
    bg: BatchGraph, params: DmpnnParams, training: bool = False, rng=None, trace=None, inputs: Optional[Tensor] = None
) -> Tensor:
    """Predictions (n_mols x n_tasks) with messages on directed edges.

    ``trace``, when a list, receives ``(stage, edge_states)`` pairs for the
    initial states and every message step. ``inputs`` replaces the stacked
    edge-input matrix, e.g. with a tracked tensor to take input Jacobians.
    """
    _check_inputs(bg, params)
    m_v = _edge_passing(bg, params, training, rng, False, trace, inputs)
    return _readout(bg, m_v, params, training, rng)


def undirected_message_forward(
    bg: BatchGraph, params: DmpnnParams, training: bool = False, rng=None, trace=None, inputs: Optional[Tensor] = None
) -> Tensor:
    """As :func:`dmpnn_forward`, but each bond's two edge states are averaged before every step."""
    _check_inputs(bg, params)
    m_v = _edge_passing(bg, params, training, rng, True, trace, inputs)
    return _readout(bg, m_v, params, training, rng)


def atom_message_forward(
    bg: BatchGraph, params: DmpnnParams, training: bool = False, rng=None, trace=None, inputs: Optional[Tensor] = None
) -> Tensor:
    """Messages on atoms: each step sums the states of all neighbors, the sender included."""
    _check_inputs(bg, params)
    cfg = params.config
    x = Tensor(bg.atom_x) if inputs is None else inputs
    h0 = T.relu(_linear(x, params["W_i"]))
    h = _drop(h0, cfg.dropout, training, rng)
    if trace is not None:
        trace.append(("init", h))
    incoming, source = bg.matrix("incoming"), bg.matrix("source")

    def neighbor_sum(states: Tensor) -> Tensor:
        return T.segment_sum(T.gather_rows(states, bg.b2a, source), bg.b2t, bg.num_atoms, matrix=incoming)

    for _ in range(cfg.depth):
        h = _drop(T.relu(T.add(h0, _linear(neighbor_sum(h), params["W_m"]))), cfg.dropout, training, rng)
        if trace is not None:
            trace.append(("step", h))
    return _readout(bg, neighbor_sum(h), params, training, rng)


def ffn_baseline_forward(x, params: DmpnnParams, training: bool = False, rng=None) -> Tensor:
    """Readout FFN applied directly to fingerprint or descriptor rows."""
    x = T.as_tensor(x)
    if x.data.ndim != 2 or x.shape[1] != params.config.ffn_input:
        raise T.ShapeMismatch(f"expected input width {params.config.ffn_input}, got {x.shape}")
    return ffn_forward(x, params, training, rng)


def forward(bg: BatchGraph, params: DmpnnParams, training: bool = False, rng=None) -> Tensor:
    kind = params.config.message_type
    if kind == "directed":
        return dmpnn_forward(bg, params, training, rng)
    if kind == "undirected":
        return undirected_message_forward(bg, params, training, rng)
    if kind == "atom":
        return atom_message_forward(bg, params, training, rng)
    _check_inputs(bg, params)
    return ffn_baseline_forward(bg.features, params, training, rng)
