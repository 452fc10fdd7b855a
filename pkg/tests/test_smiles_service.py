from collections import Counter

import numpy as np
import pytest

from app.core.errors import (
    DanglingBond, EmptyInput, UnknownCharacter, UnknownElement, UnmatchedRingClosure, UnterminatedBracket,
)
from app.schemas.chem import BondOrder
from app.services.smiles_service import (
    UnmatchedBranch, parse_smiles, permute_atoms, read_smiles_file, to_smiles, tokenize,
)

CORPUS = [
    "C", "CCO", "OCC", "C(=O)O", "CC(=O)O", "c1ccccc1", "c1ccncc1", "C1CC1", "C%10CC%10",
    "ClC(Cl)Cl", "[NH4+]", "[Na+].[Cl-]", "CC(C)(C)Br", "C1CCC2CCCCC2C1", "N#Cc1ccc(O)cc1",
    "[13CH3-]", "F/C=C/F", "C[C@H](O)N", "O=C1NC(=O)c2ccccc21",
]


def _kinds(smiles):
    return [t.kind for t in tokenize(smiles)]


def _signature(mol):
    atoms = Counter((a.element, mol.degree(i), a.aromatic) for i, a in enumerate(mol.atoms))
    bonds = Counter(b.order for b in mol.bonds)
    return atoms, bonds


def test_tokenize_chain():
    assert _kinds("CCO") == ["atom", "atom", "atom"]


def test_tokenize_branch_and_bond():
    assert _kinds("C(=O)O") == ["atom", "branch_open", "bond", "atom", "branch_close", "atom"]


def test_tokenize_aromatic_ring():
    tokens = tokenize("c1ccccc1")
    assert sum(1 for t in tokens if t.kind == "atom") == 6
    assert [t.text for t in tokens if t.kind == "ring"] == ["1", "1"]


def test_tokens_cover_input():
    for smiles in CORPUS:
        assert "".join(t.text for t in tokenize(smiles)) == smiles


def test_parse_chain():
    mol = parse_smiles("CCO")
    assert len(mol.atoms) == 3
    assert [b.order for b in mol.bonds] == [BondOrder.SINGLE, BondOrder.SINGLE]
    assert mol.cycle_rank() == 0


def test_parse_small_ring():
    mol = parse_smiles("C1CC1")
    assert len(mol.atoms) == 3
    assert len(mol.bonds) == 3
    assert mol.cycle_rank() == 1


def test_parse_benzene_bonds_are_aromatic():
    mol = parse_smiles("c1ccccc1")
    assert all(a.aromatic for a in mol.atoms)
    assert len(mol.bonds) == 6
    assert all(b.order is BondOrder.AROMATIC for b in mol.bonds)
    assert mol.cycle_rank() == 1


def test_two_digit_ring_closure():
    assert parse_smiles("C%10CC%10").cycle_rank() == 1


def test_bracket_atoms():
    ammonium = parse_smiles("[NH4+]").atoms[0]
    assert (ammonium.element, ammonium.explicit_h, ammonium.formal_charge) == ("N", 4, 1)
    carbon = parse_smiles("[13CH3-]").atoms[0]
    assert (carbon.isotope, carbon.explicit_h, carbon.formal_charge) == (13, 3, -1)
    assert parse_smiles("[Fe+2]").atoms[0].formal_charge == 2


def test_multi_fragment():
    mol = parse_smiles("[Na+].[Cl-]")
    assert len(mol.atoms) == 2
    assert mol.bonds == []
    assert mol.component_count() == 2


def test_stereo_markers_are_discarded():
    assert parse_smiles("F/C=C/F").stereo_discarded == 2
    mol = parse_smiles("C[C@H](O)N")
    assert mol.stereo_discarded == 1
    assert len(mol.atoms) == 4


@pytest.mark.parametrize(
    "smiles, error, position",
    [
        ("C$C", UnknownCharacter, 1),
        ("C[NH4", UnterminatedBracket, 1),
        ("CC=", DanglingBond, 2),
        ("C1CC", UnmatchedRingClosure, 1),
        ("C[Xx]", UnknownElement, 1),
    ],
)
def test_parse_errors_carry_position(smiles, error, position):
    with pytest.raises(error) as exc:
        parse_smiles(smiles)
    assert exc.value.position == position


def test_empty_input():
    with pytest.raises(EmptyInput):
        parse_smiles("")


def test_unclosed_branch():
    with pytest.raises(UnmatchedBranch):
        parse_smiles("C(C")


def test_ring_openings_match_closings():
    for smiles in CORPUS:
        rings = Counter(t.text for t in tokenize(smiles) if t.kind == "ring")
        assert all(count % 2 == 0 for count in rings.values())


def test_reserialize_roundtrip_is_isomorphic():
    for smiles in CORPUS:
        mol = parse_smiles(smiles)
        again = parse_smiles(to_smiles(mol))
        assert _signature(again) == _signature(mol), smiles


def test_permute_atoms_keeps_graph():
    mol = parse_smiles("CC(=O)O")
    order = [int(i) for i in np.random.default_rng(3).permutation(len(mol.atoms))]
    permuted = permute_atoms(mol, order)
    assert _signature(permuted) == _signature(mol)
    with pytest.raises(ValueError):
        permute_atoms(mol, [0, 0, 1, 2])


def test_read_smiles_file_skips_bad_lines(tmp_path):
    path = tmp_path / "mols.smi"
    path.write_text("CCO\tethanol\nC1CC\n\n# comentario\nc1ccccc1\n", encoding="utf-8")
    entries, failures, lines = read_smiles_file(path)
    assert [e.mol_id for e in entries] == ["ethanol", "mol5"]
    assert lines == 3
    assert len(failures) == 1
    assert failures[0].line_no == 2


def test_read_smiles_file_skips_invalid_utf8(tmp_path):
    path = tmp_path / "mols.smi"
    path.write_bytes(b"CCO\nC\xff\xfeC\nCCN\n")
    entries, failures, lines = read_smiles_file(path)
    assert [e.smiles for e in entries] == ["CCO", "CCN"]
    assert lines == 3
    assert failures[0].line_no == 2
    assert "UTF-8" in failures[0].error
