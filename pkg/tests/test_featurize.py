import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from dmpnn.chem import BondStereo, parse_smiles, random_smiles
from dmpnn.featurize import (
    ATOM_BLOCKS,
    ATOM_FDIM,
    ATOM_OFFSETS,
    BOND_BLOCKS,
    BOND_FDIM,
    BOND_OFFSETS,
    DESCRIPTOR_NAMES,
    EDGE_FDIM,
    DegenerateColumnWarning,
    DimensionMismatch,
    Featurization,
    atom_features,
    bond_features,
    compute_descriptors,
    edge_input,
    fit_cdf,
    load_feature_file,
    molecule_arrays,
    morgan_fingerprint,
    normalize,
    tanimoto,
)
from dmpnn.data import load_builtin

SAMPLE = load_builtin("esol").smiles[::11]


def test_vector_sizes():
    assert ATOM_FDIM == 127 and BOND_FDIM == 12 and EDGE_FDIM == 139


def test_methane_carbon_layout():
    x = atom_features(parse_smiles("C").atoms[0])
    assert x[5] == 1.0  # Z = 6
    assert x[ATOM_OFFSETS["num_bonds"] + 0] == 1.0
    assert x[ATOM_OFFSETS["formal_charge"] + 2] == 1.0
    assert x[ATOM_OFFSETS["num_hs"] + 4] == 1.0
    assert x[ATOM_OFFSETS["aromatic"]] == 0.0
    assert x[-1] == pytest.approx(0.12011, abs=1e-12)
    assert np.count_nonzero(x) == 7


def test_benzene_carbon():
    x = atom_features(parse_smiles("c1ccccc1").atoms[0])
    assert x[ATOM_OFFSETS["aromatic"]] == 1.0
    assert x[ATOM_OFFSETS["hybridization"] + 1] == 1.0  # sp2
    assert x[ATOM_OFFSETS["num_hs"] + 1] == 1.0


def test_ammonium_nitrogen():
    x = atom_features(parse_smiles("[NH4+]").atoms[0])
    assert x[ATOM_OFFSETS["formal_charge"] + 3] == 1.0
    assert x[ATOM_OFFSETS["num_hs"] + 4] == 1.0


def test_clamps_and_out_of_range_element():
    x = atom_features(parse_smiles("[Lr]").atoms[0])  # Z = 103
    assert not x[:100].any()
    x = atom_features(parse_smiles("[O-3]").atoms[0])
    assert x[ATOM_OFFSETS["formal_charge"] + 0] == 1.0
    x = atom_features(parse_smiles("S(F)(F)(F)(F)(F)F").atoms[0])
    assert x[ATOM_OFFSETS["num_bonds"] + 5] == 1.0
    assert x[ATOM_OFFSETS["hybridization"] + 4] == 1.0  # sp3d2


def test_bond_examples():
    e = bond_features(parse_smiles("CC").bonds[0])
    assert e[BOND_OFFSETS["bond_type"] + 0] == 1.0
    assert e[BOND_OFFSETS["conjugated"]] == 0.0 and e[BOND_OFFSETS["in_ring"]] == 0.0
    assert e[BOND_OFFSETS["stereo"] + 0] == 1.0
    e = bond_features(parse_smiles("c1ccccc1").bonds[0])
    assert e[BOND_OFFSETS["bond_type"] + 3] == 1.0
    assert e[BOND_OFFSETS["conjugated"]] == 1.0 and e[BOND_OFFSETS["in_ring"]] == 1.0
    g = parse_smiles("F/C=C/F")
    e = bond_features(g.bonds[1])
    assert e[BOND_OFFSETS["stereo"] + int(BondStereo.E)] == 1.0


def test_edge_input_concatenation():
    g = parse_smiles("CO")
    v = edge_input(g.atoms[1], g.bonds[0])
    assert v.shape == (139,)
    np.testing.assert_array_equal(v[:127], atom_features(g.atoms[1]))
    np.testing.assert_array_equal(v[127:], bond_features(g.bonds[0]))


def test_benzene_directed_edges():
    from dmpnn.model import mol_tensors

    mt = mol_tensors(parse_smiles("c1ccccc1"))
    assert mt.edge_x.shape == (12, 139)


def test_block_structure_on_sample():
    for smi in SAMPLE:
        atoms, bonds = molecule_arrays(parse_smiles(smi))
        assert atoms.shape[1] == 127 and bonds.shape[1] == 12
        # the mass entry is mass/100 and exceeds 1 for iodine and heavier
        assert ((atoms[:, :-1] >= 0) & (atoms[:, :-1] <= 1)).all()
        assert (atoms[:, -1] > 0).all()
        for name, size in ATOM_BLOCKS[:-1]:
            block = atoms[:, ATOM_OFFSETS[name] : ATOM_OFFSETS[name] + size]
            assert (block.sum(axis=1) <= 1).all()
        for name, size in BOND_BLOCKS:
            block = bonds[:, BOND_OFFSETS[name] : BOND_OFFSETS[name] + size]
            assert (block.sum(axis=1) <= 1).all()
        assert (bonds[:, :4].sum(axis=1) == 1).all()


def test_morgan_basics():
    fp = morgan_fingerprint(parse_smiles("C"), radius=0, nbits=2048)
    assert fp.sum() == 1
    a = morgan_fingerprint(parse_smiles("CCO"))
    assert tanimoto(a, morgan_fingerprint(parse_smiles("OCC"))) == 1.0
    assert tanimoto(a, morgan_fingerprint(parse_smiles("c1ccccc1"))) < 1.0
    counts = morgan_fingerprint(parse_smiles("CCCCCC"), counted=True)
    assert counts.sum() == 6 * 3  # one identifier per atom per round


def test_morgan_is_pinned():
    # hashes come from a fixed mixer and seed; these bits must not drift
    bits = np.flatnonzero(morgan_fingerprint(parse_smiles("CCO"), radius=1, nbits=64))
    assert bits.tolist() == sorted(bits.tolist())
    again = np.flatnonzero(morgan_fingerprint(parse_smiles("CCO"), radius=1, nbits=64))
    assert bits.tolist() == again.tolist()


@settings(max_examples=40, deadline=None)
@given(index=st.integers(0, len(SAMPLE) - 1), seed=st.integers(0, 1000))
def test_fingerprint_permutation_invariance(index, seed):
    g = parse_smiles(SAMPLE[index])
    h = parse_smiles(random_smiles(g, seed))
    np.testing.assert_array_equal(morgan_fingerprint(g, counted=True), morgan_fingerprint(h, counted=True))
    np.testing.assert_array_equal(compute_descriptors(g), compute_descriptors(h))


def test_descriptor_examples():
    d = dict(zip(DESCRIPTOR_NAMES, compute_descriptors(parse_smiles("C"))))
    assert d["MolWt"] == pytest.approx(16.043, abs=0.01)
    assert d["HeavyAtomCount"] == 1 and d["RingCount"] == 0 and d["FractionCSP3"] == 1.0
    d = dict(zip(DESCRIPTOR_NAMES, compute_descriptors(parse_smiles("c1ccccc1"))))
    assert d["RingCount"] == 1 and d["NumAromaticRings"] == 1 and d["FractionCSP3"] == 0.0
    d = dict(zip(DESCRIPTOR_NAMES, compute_descriptors(parse_smiles("CCO"))))
    assert d["NumHDonors"] == 1 and d["NumHAcceptors"] == 1
    d = dict(zip(DESCRIPTOR_NAMES, compute_descriptors(parse_smiles("c1ccc2ccccc2c1CCCl"))))
    assert d["NumAromaticRings"] == 2 and d["HalogenCount"] == 1 and d["NumRotatableBonds"] == 2


def test_cdf_examples():
    t = fit_cdf(np.arange(1.0, 6.0)[:, None])
    assert normalize([3.0], t)[0] == 0.5
    assert normalize([-10.0], t)[0] == 0.0 and normalize([10.0], t)[0] == 1.0
    assert normalize([1.0], t)[0] == 0.0 and normalize([5.0], t)[0] == 1.0
    assert normalize([2.5], t)[0] == pytest.approx(0.375)
    with pytest.raises(DimensionMismatch):
        normalize([1.0, 2.0], t)


def test_degenerate_column_warns():
    with pytest.warns(DegenerateColumnWarning):
        t = fit_cdf(np.array([[1.0, 2.0], [1.0, 3.0], [1.0, 4.0]]))
    assert t.degenerate == (True, False)
    out = normalize(np.array([[0.0, 3.0], [9.0, 2.0]]), t)
    assert out[:, 0].tolist() == [0.5, 0.5]


def _rank_fraction(col, q):
    # interpolated rank of q among the sorted distinct values, mid-ranks for ties
    n = len(col)
    s = np.sort(col)
    if q <= s[0]:
        return 0.0 if q < s[0] else (np.sum(s == q) - 1) / 2 / (n - 1)
    if q >= s[-1]:
        return 1.0 if q > s[-1] else (n - 1 - (np.sum(s == q) - 1) / 2) / (n - 1)
    lo = s[s <= q].max()
    hi = s[s >= q].min()

    def mid(v):
        idx = np.flatnonzero(s == v)
        return (idx[0] + idx[-1]) / 2 / (n - 1)

    if lo == hi:
        return mid(lo)
    return mid(lo) + (q - lo) / (hi - lo) * (mid(hi) - mid(lo))


@settings(max_examples=50, deadline=None)
@given(
    ref=hnp.arrays(np.float64, st.tuples(st.integers(2, 30), st.just(1)), elements=st.integers(-5, 5).map(float)),
    q=st.floats(-6, 6),
)
def test_cdf_matches_rank_oracle(ref, q):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateColumnWarning)
        t = fit_cdf(ref)
    got = normalize([q], t)[0]
    if t.degenerate[0]:
        assert got == 0.5
    else:
        assert got == pytest.approx(_rank_fraction(ref[:, 0], q), abs=1e-12)


def test_reference_rows_map_to_rank_fractions():
    rng = np.random.default_rng(3)
    ref = rng.normal(size=(41, 4))
    out = normalize(ref, fit_cdf(ref))
    ranks = ref.argsort(axis=0).argsort(axis=0)
    np.testing.assert_allclose(out, ranks / 40, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(
    ref=hnp.arrays(
        np.float64, st.tuples(st.integers(10, 60), st.integers(1, 4)), elements=st.floats(-100, 100, width=32)
    )
)
def test_rank_uniformity(ref):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateColumnWarning)
        t = fit_cdf(ref)
    out = normalize(ref, t)
    assert ((out >= 0) & (out <= 1)).all()
    for j, degenerate in enumerate(t.degenerate):
        if not degenerate:
            assert abs(out[:, j].mean() - 0.5) <= 0.05


def test_normalize_monotone():
    rng = np.random.default_rng(0)
    t = fit_cdf(rng.normal(size=(50, 1)))
    q = np.sort(rng.normal(scale=2.0, size=200))
    out = normalize(q[:, None], t)[:, 0]
    assert (np.diff(out) >= 0).all()


def test_descriptor_features_normalized_on_esol():
    from dmpnn.featurize import native_matrix

    mols = [parse_smiles(s) for s in SAMPLE]
    raw = native_matrix(mols)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateColumnWarning)
        feat = Featurization.fit("native", raw)
    out = feat.transform(raw)
    assert out.shape == (len(mols), len(DESCRIPTOR_NAMES))
    assert ((out >= 0) & (out <= 1)).all()
    back = Featurization.from_dict(feat.to_dict())
    np.testing.assert_array_equal(back.transform(raw), out)


def test_featurization_digest_checked():
    feat = Featurization.fit("native", np.arange(12.0).reshape(4, 3))
    d = feat.to_dict()
    d["cdf"]["support"][0][0] = -1.0
    with pytest.raises(ValueError):
        Featurization.from_dict(d)


def test_feature_file(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text("a,b\n1,2\n3,4.5\n")
    np.testing.assert_array_equal(load_feature_file(p), [[1, 2], [3, 4.5]])
    p.write_text("1,2\n3\n")
    with pytest.raises(DimensionMismatch):
        load_feature_file(p)
