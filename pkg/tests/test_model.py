import numpy as np
import pytest

from dmpnn import tensor as T
from dmpnn.chem import parse_smiles, random_smiles
from dmpnn.data import load_builtin
from dmpnn.featurize import ATOM_FDIM, EDGE_FDIM
from dmpnn.model import (
    DmpnnParams,
    EmptyBatch,
    ModelConfig,
    atom_message_forward,
    build_batch,
    dmpnn_forward,
    ffn_baseline_forward,
    forward,
    mol_tensors,
    param_shapes,
    undirected_message_forward,
)
from helpers import analytic_grads, edge_jacobian_rows, gradient_case, numeric_grad, rel_error

ESOL = load_builtin("esol").smiles
VARIANTS = {"directed": dmpnn_forward, "undirected": undirected_message_forward, "atom": atom_message_forward}


def _params(seed=0, **cfg):
    return DmpnnParams.init(ModelConfig(**cfg), np.random.default_rng(seed))


def test_ethane_batch_layout():
    bg = build_batch([parse_smiles("CC")])
    assert bg.b2rev.tolist() == [1, 0]
    assert bg.b2a.tolist() == [0, 1] and bg.b2t.tolist() == [1, 0]
    assert bg.edge_x.shape == (2, EDGE_FDIM) and bg.atom_x.shape == (2, ATOM_FDIM)


def test_methane_has_no_incoming_edges():
    bg = build_batch([parse_smiles("C")])
    assert bg.num_edges == 0
    assert [a.tolist() for a in bg.a2b] == [[]]


def test_spans_and_offsets():
    bg = build_batch([parse_smiles(s) for s in ["CCO", "C", "c1ccccc1"]])
    assert bg.atom_spans == [(0, 3), (3, 4), (4, 10)]
    assert bg.edge_spans == [(0, 4), (4, 4), (4, 16)]
    for (a0, a1), (e0, e1) in zip(bg.atom_spans, bg.edge_spans):
        assert np.all((bg.b2a[e0:e1] >= a0) & (bg.b2a[e0:e1] < a1))
        assert np.all((bg.b2t[e0:e1] >= a0) & (bg.b2t[e0:e1] < a1))


def test_empty_batch_rejected():
    with pytest.raises(EmptyBatch):
        build_batch([])


def test_reverse_map_is_involution_on_corpus():
    bg = build_batch([parse_smiles(s) for s in ESOL[:200]])
    idx = np.arange(bg.num_edges)
    np.testing.assert_array_equal(bg.b2rev[bg.b2rev], idx)
    assert np.all(bg.b2rev != idx)
    np.testing.assert_array_equal(bg.b2a[bg.b2rev], bg.b2t)
    np.testing.assert_array_equal(bg.b2t[bg.b2rev], bg.b2a)


@pytest.mark.parametrize("variant", list(VARIANTS))
def test_single_atom_prediction_finite(variant):
    params = _params(message_type=variant)
    out = VARIANTS[variant](build_batch([parse_smiles("C")]), params)
    assert out.shape == (1, 1) and np.isfinite(out.data).all()
    # an isolated atom's hidden vector is W_a applied to [x_v, 0]
    mixed = build_batch([parse_smiles("C"), parse_smiles("[Na+].[Cl-]"), parse_smiles("CCO")])
    assert np.isfinite(VARIANTS[variant](mixed, params).data).all()


def test_ethane_first_step_equals_initial_state():
    trace = []
    dmpnn_forward(build_batch([parse_smiles("CC")]), _params(), trace=trace)
    assert [stage for stage, _ in trace] == ["init", "step", "step", "step"]
    np.testing.assert_array_equal(trace[1][1].data, trace[0][1].data)


def _backtrack_oracle(mol_smiles: str, params: DmpnnParams):
    """Recompute every directed step edge by edge, with an explicit neighbor loop."""
    g = parse_smiles(mol_smiles)
    mt = mol_tensors(g)
    W_i, W_m = params["W_i"].data, params["W_m"].data
    h0 = np.maximum(mt.edge_x @ W_i.T, 0.0)
    states = [h0]
    h = h0
    for _ in range(params.config.depth):
        msg = np.zeros_like(h)
        for e in range(mt.num_edges):
            v, w = mt.src[e], mt.dst[e]
            for k in range(mt.num_edges):
                if mt.dst[k] == v and mt.src[k] != w:
                    msg[e] += h[k]
        h = np.maximum(h0 + msg @ W_m.T, 0.0)
        states.append(h)
    return mt, states


@pytest.mark.parametrize("smiles", ["CC(C)(C)O", "c1ccccc1O", "C1CC2CCC1C2", "OCC(O)CO", "N#CC=CC(=O)Cl"])
def test_message_excludes_reverse_edge(smiles):
    params = _params(depth=4, hidden=16, seed=3)
    trace = []
    dmpnn_forward(build_batch([parse_smiles(smiles)]), params, trace=trace)
    mt, want = _backtrack_oracle(smiles, params)
    got = [t.data for _, t in trace]
    assert len(got) == len(want)
    for a, b in zip(got, want):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
    # excluded message + reverse state = full incoming sum at the source atom
    for h in want[:-1]:
        full = np.zeros((mt.num_atoms, h.shape[1]))
        np.add.at(full, mt.dst, h)
        for e in range(mt.num_edges):
            excl = sum((h[k] for k in range(mt.num_edges) if mt.dst[k] == mt.src[e] and mt.src[k] != mt.dst[e]),
                       np.zeros(h.shape[1]))
            np.testing.assert_allclose(excl + h[e ^ 1], full[mt.src[e]], rtol=0, atol=1e-12)


@pytest.mark.parametrize("depth", [1, 2, 3, 4])
def test_no_totter_on_path(depth):
    # n-octane: bond k joins atoms k and k+1, so edge 2k points away from atom 0
    last = 6
    rows = edge_jacobian_rows(dmpnn_forward, "CCCCCCCC", 2 * last, depth)
    expected = [2 * j for j in range(max(0, last - depth), last + 1)]
    assert rows.tolist() == expected


def test_undirected_variant_totters_on_path():
    rows = edge_jacobian_rows(undirected_message_forward, "CCCCCCCC", 12, 2)
    assert any(r % 2 == 1 for r in rows), "averaging should pull in edges pointing back"


def test_undirected_states_symmetric_every_step():
    trace = []
    undirected_message_forward(build_batch([parse_smiles(s) for s in ESOL[:20]]), _params(message_type="undirected"),
                               trace=trace)
    averaged = [h.data for stage, h in trace if stage == "average"]
    assert len(averaged) == 3
    for h in averaged:
        np.testing.assert_array_equal(h, h[np.arange(h.shape[0]) ^ 1])


def test_undirected_matches_directed_on_symmetric_diatomic():
    # both edges of a homonuclear diatomic start equal, so averaging is a no-op
    bg = build_batch([parse_smiles("ClCl")])
    outs = []
    for kind in ("directed", "undirected"):
        params = _params(seed=5, depth=1, message_type=kind)
        outs.append(forward(bg, params).data)
    np.testing.assert_allclose(outs[0], outs[1], rtol=0, atol=1e-12)


def test_atom_messages_include_sender():
    cfg = ModelConfig(depth=1, hidden=6, message_type="atom")
    params = _params(seed=2, depth=1, hidden=6, message_type="atom")
    bg = build_batch([parse_smiles("CCO")])
    trace = []
    atom_message_forward(bg, params, trace=trace)
    h0 = np.maximum(bg.atom_x @ params["W_i"].data.T, 0.0)
    # middle carbon hears both ends, end atoms hear the middle
    msgs = np.stack([h0[1], h0[0] + h0[2], h0[1]])
    want = np.maximum(h0 + msgs @ params["W_m"].data.T, 0.0)
    np.testing.assert_allclose(trace[-1][1].data, want, rtol=0, atol=1e-12)
    assert cfg.ffn_input == 6


def test_ffn_baseline():
    cfg = ModelConfig(message_type="none", features_dim=5, ffn_layers=1)
    params = DmpnnParams.init(cfg, np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(7, 5))
    out = ffn_baseline_forward(x, params).data
    np.testing.assert_allclose(out, x @ params["ffn0_W"].data.T + params["ffn0_b"].data, atol=1e-14)
    params.load_arrays({n: np.zeros(s) for n, s in param_shapes(cfg).items()})
    assert not ffn_baseline_forward(x, params).data.any()
    with pytest.raises(T.ShapeMismatch):
        ffn_baseline_forward(np.ones((2, 4)), params)


def test_features_dim_checked():
    params = _params(features_dim=3)
    with pytest.raises(T.ShapeMismatch):
        forward(build_batch([parse_smiles("CC")]), params)
    out = forward(build_batch([parse_smiles("CC")], features=np.ones((1, 3))), params)
    assert out.shape == (1, 1)


@pytest.mark.parametrize("variant", list(VARIANTS))
def test_atom_renumbering_invariance(variant):
    params = _params(seed=4, message_type=variant)
    for i, smi in enumerate(ESOL[::60]):
        g = parse_smiles(smi)
        a = forward(build_batch([g]), params).data
        b = forward(build_batch([parse_smiles(random_smiles(g, seed=i))]), params).data
        assert rel_error(a, b, floor=1e-12) < 1e-9, smi


def test_molecule_order_permutes_predictions():
    params = _params(seed=1)
    mols = [parse_smiles(s) for s in ESOL[:40]]
    base = forward(build_batch(mols), params).data
    perm = np.random.default_rng(0).permutation(len(mols))
    moved = forward(build_batch([mols[i] for i in perm]), params).data
    np.testing.assert_array_equal(moved, base[perm])


def test_forward_deterministic():
    mols = [parse_smiles(s) for s in ESOL[:10]]
    a = forward(build_batch(mols), _params(seed=9)).data
    b = forward(build_batch(mols), _params(seed=9)).data
    np.testing.assert_array_equal(a, b)


def test_dropout_only_in_training():
    params = _params(dropout=0.3)
    bg = build_batch([parse_smiles(s) for s in ESOL[:5]])
    np.testing.assert_array_equal(forward(bg, params).data, forward(bg, params).data)
    a = forward(bg, params, training=True, rng=np.random.default_rng(0)).data
    b = forward(bg, params, training=True, rng=np.random.default_rng(1)).data
    assert not np.array_equal(a, b)


@pytest.mark.parametrize(
    "message_type, features_dim, classification",
    [("directed", 0, False), ("directed", 4, True), ("undirected", 0, False), ("atom", 0, False), ("none", 6, False)],
)
def test_full_model_gradients(message_type, features_dim, classification):
    params, loss = gradient_case(message_type, features_dim, classification, n_tasks=2)
    leaves = [params[n] for n in params.names()]
    grads = analytic_grads(loss, leaves)
    for name, leaf, g in zip(params.names(), leaves, grads):
        assert rel_error(g, numeric_grad(lambda: loss().item(), leaf.data)) < 1e-4, name
