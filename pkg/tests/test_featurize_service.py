import numpy as np
import pytest

from app.core.errors import AlreadyNormalized, ContainerFormatError, EmptyTrainingSet, InvalidConfig
from app.schemas.chem import Atom
from app.schemas.episodes import MoleculeRecord
from app.schemas.features import FeatureVector
from app.services.featurize_service import (
    apply_normalize, atom_invariant, circular_fingerprint, descriptors, featurize_records, fingerprint_indices,
    fit_normalize, normalize_records, read_container, read_norm_stats, tanimoto, write_container,
    write_norm_stats,
)
from app.services.smiles_service import parse_smiles, permute_atoms


def _descriptor_vector(values):
    return FeatureVector.from_parts(np.zeros(0, dtype=np.uint8), np.asarray(values, dtype=float))


# ============================================================================
# HUELLA
# ============================================================================

def test_golden_fingerprints(golden_fingerprints):
    radius, nbits = golden_fingerprints["radius"], golden_fingerprints["nbits"]
    for smiles, expected in golden_fingerprints["fingerprints"].items():
        assert fingerprint_indices(parse_smiles(smiles), radius, nbits) == expected, smiles


def test_golden_atom_invariants(golden_fingerprints):
    carbon = Atom(element="C")
    assert atom_invariant(carbon, 1) == golden_fingerprints["atom_invariants"]["C_deg1"]
    assert atom_invariant(carbon, 2) == golden_fingerprints["atom_invariants"]["C_deg2"]


def test_atom_invariant_is_deterministic():
    assert atom_invariant(Atom(element="N", aromatic=True), 2) == atom_invariant(Atom(element="N", aromatic=True), 2)
    assert atom_invariant(Atom(element="C"), 1) != atom_invariant(Atom(element="C"), 2)


def test_single_atom_radius_zero_sets_one_bit():
    assert circular_fingerprint(parse_smiles("C"), radius=0).sum() == 1


def test_atom_order_does_not_change_bits():
    assert np.array_equal(circular_fingerprint(parse_smiles("CCO")), circular_fingerprint(parse_smiles("OCC")))


def test_permutation_invariance_random_orders():
    rng = np.random.default_rng(7)
    for smiles in ("CC(=O)O", "c1ccncc1", "N#Cc1ccc(O)cc1", "C1CCC2CCCCC2C1"):
        mol = parse_smiles(smiles)
        expected = fingerprint_indices(mol)
        for _ in range(50):
            order = [int(i) for i in rng.permutation(len(mol.atoms))]
            assert fingerprint_indices(permute_atoms(mol, order)) == expected


def test_fingerprint_rejects_bad_sizes():
    mol = parse_smiles("CCO")
    with pytest.raises(InvalidConfig):
        fingerprint_indices(mol, nbits=1000)
    with pytest.raises(InvalidConfig):
        fingerprint_indices(mol, radius=-1)


def test_tanimoto():
    bits = circular_fingerprint(parse_smiles("CCO"))
    assert tanimoto(bits, bits) == 1.0
    empty = np.zeros_like(bits)
    assert tanimoto(empty, empty) == 0.0
    other = circular_fingerprint(parse_smiles("c1ccccc1"))
    assert 0.0 <= tanimoto(bits, other) < 1.0


# ============================================================================
# DESCRIPTORES Y NORMALIZACIÓN
# ============================================================================

@pytest.mark.parametrize(
    "smiles, expected",
    [
        ("CCO", [3, 2, 0, 0, 1 / 3, 4 / 3]),
        ("c1ccccc1", [6, 6, 1, 1, 0, 2]),
        ("C", [1, 0, 0, 0, 0, 0]),
    ],
)
def test_descriptors(smiles, expected):
    np.testing.assert_allclose(descriptors(parse_smiles(smiles)), expected, rtol=0, atol=1e-12)


def test_single_training_molecule_normalizes_to_zero():
    vec = _descriptor_vector([3.0, 2.0, 0.0])
    stats = fit_normalize([vec])
    assert min(stats.std) >= 1e-8
    np.testing.assert_array_equal(apply_normalize(vec, stats).descriptors, np.zeros(3))


def test_zscore_against_training_stats():
    stats = fit_normalize([_descriptor_vector([1.0]), _descriptor_vector([3.0])])
    assert stats.mean == [2.0]
    assert stats.std == [1.0]
    assert apply_normalize(_descriptor_vector([3.0]), stats).descriptors[0] == 1.0


def test_bits_pass_through_normalization():
    vec = FeatureVector.from_parts(np.array([1, 0, 1], dtype=np.uint8), np.array([5.0, 7.0]))
    out = apply_normalize(vec, fit_normalize([vec]))
    np.testing.assert_array_equal(out.combined[:3], [1.0, 0.0, 1.0])


def test_apply_normalize_only_once():
    vec = _descriptor_vector([1.0, 2.0])
    stats = fit_normalize([vec])
    with pytest.raises(AlreadyNormalized):
        apply_normalize(apply_normalize(vec, stats), stats)


def test_fit_normalize_needs_molecules():
    with pytest.raises(EmptyTrainingSet):
        fit_normalize([])


def test_pipeline_normalizes_each_record_once():
    records = [MoleculeRecord(id=s, smiles=s) for s in ("CCO", "c1ccccc1", "CC(=O)O")]
    assert featurize_records(records) == 3
    assert featurize_records(records) == 0
    stats = normalize_records(records[:2], [records[0], records[2]])
    assert stats.count == 2
    assert all(r.features.normalized for r in records)
    assert len({r.features.dim for r in records}) == 1


# ============================================================================
# ARCHIVOS
# ============================================================================

def test_container_roundtrip(tmp_path):
    matrix = np.arange(12, dtype=float).reshape(3, 4) / 7.0
    path = tmp_path / "features.craf"
    write_container(path, matrix)
    assert path.read_bytes()[:4] == b"CRAF"
    np.testing.assert_array_equal(read_container(path), matrix)


def test_container_rejects_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "features.craf"
    write_container(path, np.ones((2, 2)))
    data = path.read_bytes()
    path.write_bytes(b"XXXX" + data[4:])
    with pytest.raises(ContainerFormatError):
        read_container(path)
    path.write_bytes(data[:-8])
    with pytest.raises(ContainerFormatError):
        read_container(path)


def test_norm_stats_file_roundtrip(tmp_path):
    stats = fit_normalize([_descriptor_vector([1.0, 4.0]), _descriptor_vector([3.0, 8.0])])
    path = tmp_path / "norm_stats.json"
    write_norm_stats(path, stats)
    assert read_norm_stats(path) == stats
