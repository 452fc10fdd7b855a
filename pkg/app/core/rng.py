"""
Flujos aleatorios reproducibles.

Todo el azar sale de una única semilla. Cada propósito (muestreo de episodios,
inicialización, generador sintético, ...) obtiene su propio flujo Philox4x64-10
(generador basado en contador de numpy) cuya clave es el hash BLAKE2b de
(semilla, etiquetas). Así los resultados no dependen del orden de ejecución
de los workers.
"""

import hashlib
from typing import Union

import numpy as np

Tag = Union[str, int]


def derive_seed(seed: int, *tags: Tag) -> int:
    """Sub-semilla de 64 bits derivada de (seed, *tags)."""
    h = hashlib.blake2b(digest_size=8)
    h.update(int(seed).to_bytes(8, "little", signed=True))
    for tag in tags:
        h.update(b"\x1f")
        h.update(str(tag).encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


def make_rng(seed: int, *tags: Tag) -> np.random.Generator:
    """Generador Philox con clave derivada de (seed, *tags)."""
    return np.random.Generator(np.random.Philox(key=derive_seed(seed, *tags)))
