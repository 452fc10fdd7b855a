from typing import List, Literal, Optional

from pydantic import BaseModel, Field, model_validator


class MoleculeInput(BaseModel):
    """Molécula como SMILES o como vector de features crudo"""
    id: Optional[str] = None
    smiles: Optional[str] = None
    features: Optional[List[float]] = None

    @model_validator(mode="after")
    def _one_source(self) -> "MoleculeInput":
        if (self.smiles is None) == (self.features is None):
            raise ValueError("exactly one of 'smiles' or 'features' is required")
        return self


class LabeledMolecule(MoleculeInput):
    label: Literal[-1, 0, 1] = Field(..., description="0 es alias de -1")


class PredictRequest(BaseModel):
    support: List[LabeledMolecule] = Field(..., min_length=2, description="Soporte con ambas clases")
    query: List[MoleculeInput] = Field(..., min_length=1)
    seed: int = Field(default=0, description="Semilla del muestreo de referencias")


class QueryPrediction(BaseModel):
    id: str
    probability: float = Field(..., ge=0.0, le=1.0, description="p(y = +1)")


class PredictResponse(BaseModel):
    variant: str
    reference_size: int
    predictions: List[QueryPrediction]


class HealthResponse(BaseModel):
    status: str
    model_loaded: bool
    variant: Optional[str] = None
