from collections import Counter
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.schemas.chem import MolGraph
from app.schemas.features import FeatureVector


class MoleculeRecord(BaseModel):
    """Molécula de una tarea (con etiqueta) o del pool de referencia (sin etiqueta)"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    id: str
    smiles: Optional[str] = None
    features: Optional[FeatureVector] = None
    label: Optional[Literal[-1, 1]] = None
    task_id: Optional[str] = None
    pool: Optional[Literal["support", "query"]] = Field(
        default=None, description="Restringe el registro a soporte o consulta (generador sintético)"
    )
    graph: Optional[MolGraph] = Field(default=None, description="Grafo parseado (encoder GIN, Tanimoto)")

    def unlabeled(self) -> "MoleculeRecord":
        return self.model_copy(update={"label": None, "task_id": None, "pool": None})


class Task(BaseModel):
    """Tarea de predicción binaria T_τ"""
    task_id: str
    records: List[MoleculeRecord]

    @model_validator(mode="after")
    def _min_records(self) -> "Task":
        if len(self.records) < 2:
            raise ValueError(f"task {self.task_id!r} needs at least 2 records")
        return self

    def class_counts(self) -> Dict[int, int]:
        counts = Counter(r.label for r in self.records)
        return {-1: counts.get(-1, 0), 1: counts.get(1, 0)}

    @property
    def prevalence(self) -> float:
        return self.class_counts()[1] / len(self.records)


class Episode(BaseModel):
    """Instancia few-shot: soporte S_τ, consulta Q_τ y referencia B_τ"""
    task_id: str
    support: List[MoleculeRecord]
    query: List[MoleculeRecord]
    reference: List[MoleculeRecord] = Field(default_factory=list)

    @model_validator(mode="after")
    def _invariants(self) -> "Episode":
        support_ids = {r.id for r in self.support}
        if support_ids & {r.id for r in self.query}:
            raise ValueError("support and query sets overlap")
        labels = {r.label for r in self.support}
        if -1 not in labels or 1 not in labels:
            raise ValueError("support set must contain both classes")
        if any(r.label is not None for r in self.reference):
            raise ValueError("reference records must be unlabeled")
        return self

    def support_labels(self) -> List[int]:
        return [int(r.label) for r in self.support]

    def query_labels(self) -> List[int]:
        return [int(r.label) for r in self.query]


class SynthConfig(BaseModel):
    """Generador de tareas sintéticas con sesgo de selección"""
    model_config = ConfigDict(extra="forbid")

    dim: int = Field(default=32, gt=0, description="Dimensión d de los vectores")
    task_count: int = Field(default=40, ge=3)
    separation: float = Field(default=3.0, gt=0.0, description="Radio s de las medias de clase")
    bias: float = Field(default=0.5, ge=0.0, le=1.0, description="Intensidad b del sesgo de soporte")
    prevalence: float = Field(default=0.3, gt=0.0, lt=1.0, description="Fracción de positivos ρ")
    pool_size: int = Field(default=4096, gt=0)
    support_pool_size: int = Field(default=64, ge=4, description="Registros candidatos a soporte por tarea")
    query_pool_size: int = Field(default=64, ge=4, description="Registros candidatos a consulta por tarea")
    train_fraction: float = Field(default=0.6, gt=0.0, lt=1.0)
    valid_fraction: float = Field(default=0.2, gt=0.0, lt=1.0)
