from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

STD_FLOOR = 1e-8

DESCRIPTOR_NAMES = (
    "atom_count",
    "bond_count",
    "cycle_rank",
    "aromatic_fraction",
    "heteroatom_fraction",
    "mean_degree",
)


class FeatureVector(BaseModel):
    """
    Vector de entrada x de una molécula: bits de huella ∥ descriptores.

    Para registros con vectores crudos (sin SMILES) `bits` y `descriptors`
    quedan vacíos y `combined` es el vector tal cual.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    bits: np.ndarray = Field(..., description="Bits 0/1 (uint8), longitud B")
    descriptors: np.ndarray = Field(..., description="Descriptores (normalizados si normalized)")
    combined: np.ndarray = Field(..., description="[bits ∥ descriptores] como float64")
    normalized: bool = Field(default=False, description="Los descriptores ya pasaron por apply_normalize")

    @model_validator(mode="after")
    def _consistent(self) -> "FeatureVector":
        parts = self.bits.shape[0] + self.descriptors.shape[0]
        if parts and self.combined.shape[0] != parts:
            raise ValueError("combined length must equal len(bits) + len(descriptors)")
        if not np.all(np.isfinite(self.combined)):
            raise ValueError("feature vector contains NaN or Inf")
        return self

    @property
    def dim(self) -> int:
        return int(self.combined.shape[0])

    @classmethod
    def from_parts(cls, bits: np.ndarray, descriptors: np.ndarray, normalized: bool = False) -> "FeatureVector":
        bits = np.asarray(bits, dtype=np.uint8)
        descriptors = np.asarray(descriptors, dtype=np.float64)
        combined = np.concatenate([bits.astype(np.float64), descriptors])
        return cls(bits=bits, descriptors=descriptors, combined=combined, normalized=normalized)

    @classmethod
    def from_raw(cls, values) -> "FeatureVector":
        combined = np.asarray(values, dtype=np.float64).reshape(-1)
        empty_bits = np.zeros(0, dtype=np.uint8)
        return cls(bits=empty_bits, descriptors=np.zeros(0), combined=combined, normalized=True)


class NormStats(BaseModel):
    """Media y desviación de los descriptores, calculadas sólo sobre moléculas de entrenamiento"""
    mean: List[float]
    std: List[float]
    count: int = Field(..., ge=1, description="Moléculas usadas en el ajuste")

    @field_validator("std")
    @classmethod
    def _floor_std(cls, v: List[float]) -> List[float]:
        return [max(float(s), STD_FLOOR) for s in v]

    @model_validator(mode="after")
    def _same_length(self) -> "NormStats":
        if len(self.mean) != len(self.std):
            raise ValueError("mean and std must have the same length")
        return self
