# app/services/featurize_service.py

"""
Featurización: MolGraph -> vector x ∈ R^d.

x = [bits de huella circular (B) ∥ descriptores de grafo z-normalizados (D)].

La huella es de tipo ECFP con hash FNV-1a de 64 bits: sólo aritmética entera de
ancho fijo, sin flotantes, así los bits son idénticos en cualquier plataforma.
"""

import json
import logging
import struct
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np

from app.core.errors import AlreadyNormalized, ContainerFormatError, EmptyTrainingSet, InvalidConfig
from app.core.logging import log_structured
from app.schemas.chem import Atom, MolGraph
from app.schemas.episodes import MoleculeRecord
from app.schemas.features import DESCRIPTOR_NAMES, FeatureVector, NormStats
from app.services.smiles_service import parse_smiles

logger = logging.getLogger(__name__)

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = 0xFFFFFFFFFFFFFFFF

DEFAULT_RADIUS = 2
DEFAULT_NBITS = 2048

CONTAINER_MAGIC = b"CRAF"
CONTAINER_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & MASK64
    return h


# ============================================================================
# HUELLA CIRCULAR
# ============================================================================

def atom_invariant(atom: Atom, degree: int) -> int:
    """
    Invariante inicial del átomo: FNV-1a de los bytes
    (número atómico, grado, carga+9, aromático, H explícitos o 255).
    """
    if degree < 0:
        raise ValueError("degree must be non-negative")
    h_byte = 255 if atom.explicit_h is None else min(atom.explicit_h, 254)
    data = bytes([
        atom.atomic_number & 0xFF,
        min(degree, 255),
        atom.formal_charge + 9,
        1 if atom.aromatic else 0,
        h_byte,
    ])
    return fnv1a_64(data)


def _invariant_rounds(mol: MolGraph, radius: int) -> List[List[int]]:
    adj = mol.adjacency()
    current = [atom_invariant(a, len(adj[i])) for i, a in enumerate(mol.atoms)]
    rounds = [current]
    for _ in range(radius):
        nxt = []
        for i in range(len(mol.atoms)):
            pairs = sorted((order.code, current[j]) for j, order in adj[i])
            data = current[i].to_bytes(8, "little") + b"".join(
                bytes([code]) + inv.to_bytes(8, "little") for code, inv in pairs
            )
            nxt.append(fnv1a_64(data))
        current = nxt
        rounds.append(current)
    return rounds


def fingerprint_indices(mol: MolGraph, radius: int = DEFAULT_RADIUS, nbits: int = DEFAULT_NBITS) -> List[int]:
    """Índices de bits encendidos, ordenados."""
    if nbits <= 0 or nbits & (nbits - 1):
        raise InvalidConfig(f"nbits must be a power of two, got {nbits}")
    if radius < 0:
        raise InvalidConfig(f"radius must be >= 0, got {radius}")
    on = {inv % nbits for rnd in _invariant_rounds(mol, radius) for inv in rnd}
    return sorted(on)


def circular_fingerprint(mol: MolGraph, radius: int = DEFAULT_RADIUS, nbits: int = DEFAULT_NBITS) -> np.ndarray:
    """Vector de bits (uint8) de longitud nbits."""
    bits = np.zeros(nbits, dtype=np.uint8)
    bits[fingerprint_indices(mol, radius, nbits)] = 1
    return bits


def tanimoto(bits_a: np.ndarray, bits_b: np.ndarray) -> float:
    """|A∩B| / |A∪B| sobre bits encendidos; 0 si ambos están vacíos."""
    a = np.asarray(bits_a, dtype=bool)
    b = np.asarray(bits_b, dtype=bool)
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 0.0
    return int(np.count_nonzero(a & b)) / union


# ============================================================================
# DESCRIPTORES
# ============================================================================

def descriptors(mol: MolGraph) -> np.ndarray:
    """[átomos, enlaces, rango cíclico, fracción aromática, fracción de heteroátomos, grado medio]"""
    n = len(mol.atoms)
    n_bonds = len(mol.bonds)
    aromatic = sum(1 for a in mol.atoms if a.aromatic)
    hetero = sum(1 for a in mol.atoms if a.element not in ("C", "H"))
    return np.array([
        float(n),
        float(n_bonds),
        float(mol.cycle_rank()),
        aromatic / n,
        hetero / n,
        2.0 * n_bonds / n,
    ])


_ATOM_ELEMENTS = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I", "H")
_MAX_DEGREE = 5
ATOM_FEATURE_DIM = len(_ATOM_ELEMENTS) + 1 + (_MAX_DEGREE + 1) + 3


def atom_features(atom: Atom, degree: int) -> np.ndarray:
    """Entrada por nodo del encoder GIN."""
    vec = np.zeros(ATOM_FEATURE_DIM)
    elem = _ATOM_ELEMENTS.index(atom.element) if atom.element in _ATOM_ELEMENTS else len(_ATOM_ELEMENTS)
    vec[elem] = 1.0
    base = len(_ATOM_ELEMENTS) + 1
    vec[base + min(degree, _MAX_DEGREE)] = 1.0
    base += _MAX_DEGREE + 1
    vec[base] = float(atom.formal_charge)
    vec[base + 1] = 1.0 if atom.aromatic else 0.0
    vec[base + 2] = float(atom.explicit_h or 0)
    return vec


def featurize_molecule(mol: MolGraph, radius: int = DEFAULT_RADIUS, nbits: int = DEFAULT_NBITS) -> FeatureVector:
    """Vector sin normalizar (los descriptores se normalizan después con NormStats)."""
    return FeatureVector.from_parts(circular_fingerprint(mol, radius, nbits), descriptors(mol))


# ============================================================================
# NORMALIZACIÓN
# ============================================================================

def fit_normalize(vectors: Sequence[FeatureVector]) -> NormStats:
    """Media y desviación (poblacional) de los descriptores de entrenamiento."""
    if not vectors:
        raise EmptyTrainingSet("cannot fit normalization statistics without training molecules")
    table = np.vstack([v.descriptors for v in vectors])
    return NormStats(mean=table.mean(axis=0).tolist(), std=table.std(axis=0).tolist(), count=len(vectors))


def apply_normalize(vec: FeatureVector, stats: NormStats) -> FeatureVector:
    """z-score de los descriptores; los bits pasan sin cambios. Se aplica una sola vez."""
    if vec.normalized:
        raise AlreadyNormalized("feature vector was already normalized")
    if len(stats.mean) != vec.descriptors.shape[0]:
        raise InvalidConfig(f"stats cover {len(stats.mean)} descriptors, vector has {vec.descriptors.shape[0]}")
    z = (vec.descriptors - np.asarray(stats.mean)) / np.asarray(stats.std)
    return FeatureVector.from_parts(vec.bits, z, normalized=True)


# ============================================================================
# REGISTROS
# ============================================================================

def featurize_records(
    records: Iterable[MoleculeRecord],
    radius: int = DEFAULT_RADIUS,
    nbits: int = DEFAULT_NBITS,
) -> int:
    """
    Calcula (in-place) el FeatureVector crudo de los registros con SMILES y sin features.

    Returns:
        cantidad de registros featurizados
    """
    count = 0
    for record in records:
        if record.features is not None:
            continue
        if record.graph is None:
            record.graph = parse_smiles(record.smiles)
        record.features = featurize_molecule(record.graph, radius, nbits)
        count += 1
    return count


def normalize_records(
    train_records: Sequence[MoleculeRecord],
    other_records: Iterable[MoleculeRecord],
) -> Optional[NormStats]:
    """
    Ajusta NormStats sobre los registros de entrenamiento y normaliza todos una única vez.

    Registros con vectores crudos (ya marcados como normalizados) se dejan intactos.
    Si ningún registro de entrenamiento tiene descriptores, no hay nada que normalizar.
    """
    pending_train = [r for r in train_records if r.features is not None and not r.features.normalized]
    if not pending_train:
        return None
    stats = fit_normalize([r.features for r in pending_train])
    seen = set()
    for record in list(train_records) + list(other_records):
        if id(record) in seen or record.features is None or record.features.normalized:
            continue
        seen.add(id(record))
        record.features = apply_normalize(record.features, stats)
    log_structured(logger, "info", "featurize.normalized", molecules=len(seen), fit_on=stats.count)
    return stats


# ============================================================================
# CONTENEDOR BINARIO
# ============================================================================

def write_container(path: str | Path, matrix: np.ndarray) -> None:
    """Cabecera (CRAF, versión u32, count u64, d u64) + float64 little-endian por filas."""
    matrix = np.asarray(matrix, dtype="<f8")
    if matrix.ndim != 2:
        raise InvalidConfig("container payload must be a 2-D matrix")
    count, d = matrix.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(CONTAINER_MAGIC, CONTAINER_VERSION, count, d))
        f.write(np.ascontiguousarray(matrix).tobytes())


def read_container(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise ContainerFormatError(f"{path}: file too short for a CRAF header")
    magic, version, count, d = _HEADER.unpack_from(raw)
    if magic != CONTAINER_MAGIC:
        raise ContainerFormatError(f"{path}: bad magic {magic!r}, expected {CONTAINER_MAGIC!r}")
    if version != CONTAINER_VERSION:
        raise ContainerFormatError(f"{path}: unsupported container version {version}")
    payload = raw[_HEADER.size:]
    if len(payload) != count * d * 8:
        raise ContainerFormatError(f"{path}: payload has {len(payload)} bytes, expected {count * d * 8}")
    return np.frombuffer(payload, dtype="<f8").reshape(count, d).astype(np.float64)


def write_norm_stats(path: str | Path, stats: NormStats) -> None:
    doc = {"descriptors": list(DESCRIPTOR_NAMES), **stats.model_dump()}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_norm_stats(path: str | Path) -> NormStats:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    doc.pop("descriptors", None)
    return NormStats(**doc)
