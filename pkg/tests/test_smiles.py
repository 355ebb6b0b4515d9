import csv
import re

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from synfuse.smiles import (
    ELEMENT_VOCAB,
    N_FEATURES,
    Atom,
    EmptyInput,
    SmilesError,
    UnbalancedParenthesis,
    UnknownAtomToken,
    UnmatchedRingClosure,
    featurize_atom,
    parse_smiles,
)
from synfuse.synthetic import DRUG_LIBRARY

from conftest import fixture_path


def formula_counts(formula):
    counts = {}
    for sym, n in re.findall(r"([A-Z][a-z]?)(\d*)", formula):
        counts[sym] = counts.get(sym, 0) + (int(n) if n else 1)
    return counts


def load_corpus():
    with open(fixture_path("smiles_corpus.tsv")) as fh:
        rows = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(rows, delimiter="\t"))


CORPUS = load_corpus()


def test_corpus_size():
    assert len(CORPUS) >= 56
    names = {r["name"] for r in CORPUS}
    assert {"5-FU", "ABT-888", "erlotinib", "aspirin", "benzene", "pyridine"} <= names


@pytest.mark.parametrize("row", CORPUS, ids=[r["name"] for r in CORPUS])
def test_corpus_matches_formula(row):
    counts = formula_counts(row["formula"])
    heavy = sum(n for sym, n in counts.items() if sym != "H")
    g = parse_smiles(row["smiles"])
    assert g.n_atoms == heavy
    # a graph with F fragments and R independent rings has V − F + R edges
    assert g.n_edges == heavy - int(row["fragments"]) + int(row["rings"])
    assert sum(a.implicit_h for a in g.atoms) == counts.get("H", 0)
    assert int(g.adjacency.sum(axis=1).sum()) == 2 * g.n_edges
    assert sorted(g.atom_symbols) == sorted(s for s, n in counts.items() if s != "H" for _ in range(n))


@pytest.mark.parametrize("name,smiles", DRUG_LIBRARY)
def test_synthetic_library_parses(name, smiles):
    assert parse_smiles(smiles).n_atoms > 0


def test_methane():
    g = parse_smiles("C")
    assert g.n_atoms == 1
    assert g.atoms[0].degree == 0 and g.atoms[0].implicit_h == 4


def test_fluorouracil_counts():
    g = parse_smiles("C1=C(C(=O)NC(=O)N1)F")
    assert (g.n_atoms, g.n_edges) == (9, 9)


def test_aspirin_heavy_atoms():
    assert parse_smiles("CC(=O)OC1=CC=CC=C1C(=O)O").n_atoms == 13


def test_benzene_atoms_aromatic_degree_two():
    g = parse_smiles("c1ccccc1")
    for row, atom in zip(g.features, g.atoms):
        assert atom.degree == 2 and atom.implicit_h == 1
        assert row[-1] == 1.0


def test_carbon_feature_unrolled():
    v = featurize_atom(Atom("C", degree=0, implicit_h=4, implicit_valence=4))
    expected = np.zeros(78)
    expected[0] = 1           # element C
    expected[44 + 0] = 1      # degree 0
    expected[55 + 4] = 1      # implicit H 4
    expected[66 + 4] = 1      # implicit valence 4
    np.testing.assert_array_equal(v, expected)


def test_unknown_element_and_clamping():
    v = featurize_atom(Atom("Xx", degree=14, implicit_h=12, implicit_valence=30, aromatic=True))
    assert v[len(ELEMENT_VOCAB) - 1] == 1 and v[:43].sum() == 0
    assert v[54] == 1 and v[65] == 1 and v[76] == 1 and v[77] == 1


def test_bracket_hydrogen_count():
    g = parse_smiles("[NH4+].[Cl-]")
    assert [a.implicit_h for a in g.atoms] == [4, 0]
    assert g.atoms[0].charge == 1 and g.n_edges == 0
    pyrrole = parse_smiles("c1cc[nH]c1")
    assert [a.implicit_h for a in pyrrole.atoms] == [1, 1, 1, 1, 1]


def test_explicit_hydrogen_atoms_fold_into_counts():
    g = parse_smiles("[H]C([H])([H])[H]")
    assert g.n_atoms == 1 and g.atoms[0].implicit_h == 4


def test_stereo_and_isotopes_ignored():
    plain = parse_smiles("FC=CF")
    marked = parse_smiles("F/C=C\\F")
    np.testing.assert_array_equal(plain.features, marked.features)
    chiral = parse_smiles("N[C@@H](C)C(=O)O")
    flat = parse_smiles("NC(C)C(=O)O")
    assert chiral.n_edges == flat.n_edges
    assert parse_smiles("[13CH4]").atoms[0].implicit_h == 4


def test_percent_ring_closure():
    a = parse_smiles("C%12CCCCC%12")
    b = parse_smiles("C1CCCCC1")
    np.testing.assert_array_equal(a.adjacency, b.adjacency)


@pytest.mark.parametrize("s,exc,offset", [
    ("", EmptyInput, 0),
    ("   ", EmptyInput, 0),
    ("C1CC", UnmatchedRingClosure, 1),
    ("CC(C", UnbalancedParenthesis, 2),
    ("CC)C", UnbalancedParenthesis, 2),
    ("CXC", UnknownAtomToken, 1),
    ("C[Qq]", UnknownAtomToken, 2),
])
def test_errors_carry_offset(s, exc, offset):
    with pytest.raises(exc) as info:
        parse_smiles(s)
    assert isinstance(info.value, SmilesError)
    assert info.value.offset == offset
    assert "offset" in str(info.value)


def test_non_ascii_rejected():
    with pytest.raises(UnknownAtomToken):
        parse_smiles("CCé")


smiles_from_corpus = st.sampled_from([r["smiles"] for r in CORPUS] + [s for _, s in DRUG_LIBRARY])


@given(smiles_from_corpus)
def test_graph_invariants(s):
    g = parse_smiles(s)
    a = g.adjacency
    assert g.features.shape == (g.n_atoms, N_FEATURES)
    np.testing.assert_array_equal(a, a.T)
    assert not np.diag(a).any()
    assert set(np.unique(a)) <= {0.0, 1.0}
    np.testing.assert_array_equal(a.sum(axis=1), [atom.degree for atom in g.atoms])
    f = g.features
    for lo, hi in [(0, 44), (44, 55), (55, 66), (66, 77)]:
        np.testing.assert_array_equal(f[:, lo:hi].sum(axis=1), 1.0)
    assert set(np.unique(f[:, 77])) <= {0.0, 1.0}
    assert set(f.sum(axis=1)) <= {4.0, 5.0}


@given(smiles_from_corpus)
def test_parsing_is_deterministic(s):
    a, b = parse_smiles(s), parse_smiles(s)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.adjacency, b.adjacency)
    assert a.atom_symbols == b.atom_symbols


@given(st.text(alphabet="CNOcn()=#123[]+-H.%", max_size=20))
def test_random_strings_parse_or_raise_cleanly(s):
    try:
        g = parse_smiles(s)
    except SmilesError:
        return
    assert g.n_atoms >= 1
