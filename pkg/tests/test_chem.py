import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fragforge.chem import (
    ELEMENTS, AtomCloud, ChemError, FragmentMultiset, bundled_manifest, bundled_multisets,
    heavy_anchor_of, load_fragment_library, multiset_count_vector, parse_formula, parse_xyz,
    perceive_bonds, read_xyz, write_xyz,
)
from fragforge.geometry import random_rotation

from conftest import METHANE

METHANE_XYZ = """5
methane
C 0.000000 0.000000 0.000000
H 0.629312 0.629312 0.629312
H -0.629312 -0.629312 0.629312
H -0.629312 0.629312 -0.629312
H 0.629312 -0.629312 -0.629312"""


def test_element_table():
    assert set(ELEMENTS) == {"C", "H", "N", "O", "F", "S"}
    assert all(e.covalent_radius > 0 and e.max_valence >= 1 for e in ELEMENTS.values())
    assert {s: e.max_valence for s, e in ELEMENTS.items()} == {"H": 1, "C": 4, "N": 3, "O": 2, "F": 1, "S": 6}


def test_parse_methane():
    cloud = parse_xyz(METHANE_XYZ)
    assert cloud.formula() == "CH4"
    assert len(cloud) == 5
    np.testing.assert_allclose(cloud.positions[1], [0.629312] * 3)


def test_parse_count_mismatch():
    with pytest.raises(ChemError, match="declares 3"):
        parse_xyz("3\n\nC 0 0 0\nH 0 0 1")


def test_parse_unknown_element():
    with pytest.raises(ChemError, match="unknown element"):
        parse_xyz("1\n\nXx 0 0 0")


def test_parse_bad_coordinate():
    with pytest.raises(ChemError, match="unparsable"):
        parse_xyz("1\n\nC 0 zero 0")


def test_write_single_carbon():
    c = AtomCloud(("C",), np.zeros((1, 3)))
    assert write_xyz(c, "hello") == "1\nhello\nC 0.000000 0.000000 0.000000"


def test_write_roundtrip_methane():
    back = parse_xyz(write_xyz(METHANE, "m"))
    assert back.symbols == METHANE.symbols
    assert np.abs(back.positions - METHANE.positions).max() <= 5e-7


def test_write_empty_rejected():
    with pytest.raises(ChemError):
        write_xyz(AtomCloud((), np.zeros((0, 3))))


def test_nan_position_rejected():
    with pytest.raises(ChemError, match="finite"):
        AtomCloud(("C",), np.array([[np.nan, 0, 0]]))


def test_duplicate_coordinates_rejected():
    with pytest.raises(ChemError, match="identical"):
        AtomCloud(("C", "H"), np.zeros((2, 3)))


coords = st.floats(-20, 20, allow_nan=False, allow_infinity=False)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(list(ELEMENTS)), coords, coords, coords), min_size=1, max_size=12,
                unique_by=lambda t: (t[1], t[2], t[3])))
def test_xyz_roundtrip_property(atoms):
    pos = np.array([a[1:] for a in atoms], dtype=float)
    if len({tuple(np.round(p, 6)) for p in pos}) != len(pos):
        return  # distinct floats that collide after 6-decimal formatting
    cloud = AtomCloud(tuple(a[0] for a in atoms), pos)
    back = parse_xyz(write_xyz(cloud))
    assert back.symbols == cloud.symbols
    assert np.abs(back.positions - pos).max() <= 5e-7 + 1e-12


def test_bonds_carbon_pair():
    near = AtomCloud(("C", "C"), np.array([[0, 0, 0], [1.52, 0, 0]]))
    far = AtomCloud(("C", "C"), np.array([[0, 0, 0], [2.50, 0, 0]]))
    # threshold 1.3 * (0.76 + 0.76) = 1.976
    assert perceive_bonds(near).edges == [(0, 1)]
    assert perceive_bonds(far).edges == []
    edge = AtomCloud(("C", "C"), np.array([[0, 0, 0], [1.976, 0, 0]]))
    assert perceive_bonds(edge).edges == [(0, 1)]


def test_bonds_single_atom():
    g = perceive_bonds(AtomCloud(("O",), np.zeros((1, 3))))
    assert g.edges == [] and list(g.degree) == [0]


def test_bonds_methane_and_ethane(ethane):
    assert list(perceive_bonds(METHANE).degree) == [4, 1, 1, 1, 1]
    g = perceive_bonds(ethane)
    assert g.n_components() == 1
    assert list(g.degree) == [4, 4, 1, 1, 1, 1, 1, 1]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bonds_rigid_and_permutation(seed):
    rng = np.random.default_rng(seed)
    n = 9
    cloud = AtomCloud(tuple(rng.choice(list(ELEMENTS), n)), rng.normal(scale=1.5, size=(n, 3)))
    adj = perceive_bonds(cloud)
    rot = random_rotation(rng)
    moved = cloud.with_positions(cloud.positions @ rot.T + rng.normal(size=3) * 5)
    assert perceive_bonds(moved).neighbors == adj.neighbors
    perm = rng.permutation(n)
    relabeled = cloud.subset(perm)
    got = {tuple(sorted((int(perm[i]), int(perm[j])))) for i, j in perceive_bonds(relabeled).edges}
    assert got == set(adj.edges)
    assert all(i not in nb for i, nb in enumerate(adj.neighbors))
    assert all(i in adj.neighbors[j] for i, nb in enumerate(adj.neighbors) for j in nb)


def test_heavy_anchor_methane():
    for h in range(1, 5):
        assert heavy_anchor_of(METHANE, h) == 0


def test_heavy_anchor_errors():
    h2 = AtomCloud(("H", "H"), np.array([[0, 0, 0], [0.74, 0, 0]]))
    with pytest.raises(ChemError, match="no heavy"):
        heavy_anchor_of(h2, 0)
    with pytest.raises(ChemError, match="not a hydrogen"):
        heavy_anchor_of(METHANE, 0)


def test_heavy_anchor_ethanol_hydroxyl():
    # ethanol, literature-like geometry (C-C 1.52, C-O 1.43, O-H 0.96)
    ethanol = parse_xyz("""9
ethanol
C -0.0014 -0.0191 0.0000
C 1.5138 0.0020 0.0000
O 1.9923 1.3498 0.0000
H -0.3803 1.0054 0.0000
H -0.3732 -0.5267 0.8891
H -0.3732 -0.5267 -0.8891
H 1.8800 -0.5155 0.8889
H 1.8800 -0.5155 -0.8889
H 2.9507 1.3311 0.0000""")
    assert heavy_anchor_of(ethanol, 8) == 2
    assert heavy_anchor_of(ethanol, 3) == 0


def test_heavy_anchor_tie_lowest_index():
    # H equidistant between two carbons
    cloud = AtomCloud(("C", "H", "C"), np.array([[-0.9, 0, 0], [0, 0, 0], [0.9, 0, 0]]))
    assert heavy_anchor_of(cloud, 1) == 0


def test_drug1_manifest(drug1):
    assert drug1.ids == ["methylimidazole", "methylthiazole", "cyclopropane", "propanamide"]
    formulas = [f.cloud.formula() for f in drug1.fragments]
    assert formulas == ["C4H6N2", "C4H5NS", "C3H6", "C3H7NO"]
    assert list(multiset_count_vector(drug1)) == [1, 1, 1, 1]
    assert drug1.fragment_atom_count()[1] == 20


def test_count_vector_decrements(drug1):
    ms = drug1.take(drug1.index_of("cyclopropane"))
    assert list(multiset_count_vector(ms)) == [1, 1, 0, 1]
    for i in (0, 1, 3):
        ms = ms.take(i)
    assert list(multiset_count_vector(ms)) == [0, 0, 0, 0]
    assert ms.exhausted
    with pytest.raises(ChemError, match="exhausted"):
        ms.take(0)


def test_oled1_total_formula():
    ms = load_fragment_library(bundled_manifest("oled1"))
    assert sorted(f.cloud.formula() for f in ms.fragments) == ["C6H6", "C8H6N2", "H3N"]
    assert ms.initial_counts == (2, 3, 1)
    # summed fragment formula; the assembled molecule loses 2 H per bond
    assert parse_formula(ms.total_formula()) == parse_formula("C34H33N5")
    assert ms.assembled_atom_count() == (62, 39)


def _write_manifest(tmp_path, entries, extra=""):
    lines = ["name: t", extra, "fragments:"]
    for fid, text, count in entries:
        (tmp_path / f"{fid}.xyz").write_text(text)
        lines.append(f"  - {{id: {fid}, path: {fid}.xyz, count: {count}}}")
    p = tmp_path / "m.yaml"
    p.write_text("\n".join(lines) + "\n")
    return p


def test_manifest_without_hydrogen_rejected(tmp_path):
    co2 = "3\n\nO -1.16 0 0\nC 0 0 0\nO 1.16 0 0"
    with pytest.raises(ChemError, match="no hydrogen"):
        load_fragment_library(_write_manifest(tmp_path, [("co2", co2, 1)]))


def test_manifest_count_zero_rejected(tmp_path):
    with pytest.raises(ChemError, match="count"):
        load_fragment_library(_write_manifest(tmp_path, [("m", METHANE_XYZ, 0)]))


def test_manifest_missing_file(tmp_path):
    p = tmp_path / "m.yaml"
    p.write_text("fragments:\n  - {id: x, path: nope.xyz, count: 1}\n")
    with pytest.raises(ChemError, match="not found"):
        load_fragment_library(p)
    with pytest.raises(ChemError, match="not found"):
        load_fragment_library(tmp_path / "absent.yaml")


def test_manifest_total_formula_checked(tmp_path):
    ok = _write_manifest(tmp_path, [("m", METHANE_XYZ, 2)], "total_formula: C2H8")
    assert load_fragment_library(ok).total_fragments == 2
    bad = _write_manifest(tmp_path, [("m", METHANE_XYZ, 2)], "total_formula: C2H6")
    with pytest.raises(ChemError, match="total"):
        load_fragment_library(bad)


def test_multiset_invariants(drug1):
    with pytest.raises(ChemError):
        FragmentMultiset(drug1.fragments, (2, 1, 1, 1))
    assert drug1.take(0).fresh().remaining == drug1.initial_counts


def test_all_bundled_fragments_are_sane():
    for name in bundled_multisets():
        ms = load_fragment_library(bundled_manifest(name))
        for f in ms.fragments:
            g = perceive_bonds(f.cloud)
            assert g.n_components() == 1, (name, f.id)
            caps = np.array([ELEMENTS[s].max_valence for s in f.cloud.symbols])
            assert np.all(g.degree <= caps), (name, f.id)


def test_read_xyz_file(tmp_path):
    p = tmp_path / "m.xyz"
    p.write_text(METHANE_XYZ)
    assert read_xyz(p).formula() == "CH4"


def test_content_hash_resolution():
    a = METHANE.content_hash()
    b = METHANE.with_positions(METHANE.positions + 1e-9).content_hash()
    assert a == b
    assert a != METHANE.with_positions(METHANE.positions + 1e-3).content_hash()
