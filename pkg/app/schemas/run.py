from enum import Enum
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.schemas.episodes import SynthConfig
from app.schemas.model import ModelConfig, SamplingMode, TrainConfig, Variant


class Preset(str, Enum):
    """Protocolo de episodios"""
    MOLECULENET = "moleculenet"   # 2-way 10-shot, consulta 16
    FSMOL = "fsmol"               # soporte 16 estratificado, consulta = resto en evaluación
    CUSTOM = "custom"


_PRESET_TRAIN = {
    Preset.MOLECULENET: {"support_size": 20, "query_size": 16, "validation_query_size": 16,
                         "sampling_mode": SamplingMode.BALANCED},
    Preset.FSMOL: {"support_size": 16, "query_size": 16, "validation_query_size": None,
                   "sampling_mode": SamplingMode.STRATIFIED},
}
_PRESET_EVAL_QUERY = {Preset.MOLECULENET: 16, Preset.FSMOL: None}

SUPPORT_SWEEP = [2, 8, 16, 32, 64, 128]
REFERENCE_SWEEP = [32, 128, 512, 2048]


class PathsConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    train_tasks: Optional[str] = None
    valid_tasks: Optional[str] = None
    test_tasks: Optional[str] = None
    reference_pool: Optional[str] = None
    eval_reference_pool: Optional[str] = Field(
        default=None, description="Pool del dominio de prueba (reference_source=test_domain)"
    )
    checkpoint: Optional[str] = None


class EvalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    reruns: int = Field(default=5, ge=1, description="Reruns de entrenamiento R")
    draws: int = Field(default=10, ge=1, description="Selecciones de soporte K")
    support_size: Optional[int] = Field(default=None, gt=1, description="None = train.support_size")
    support_sizes: List[int] = Field(default_factory=list, description="Barrido de tamaños de soporte")
    query_size: Optional[int] = Field(default=None, gt=0, description="None = todo el resto de la tarea")
    reference_source: Literal["train_pool", "test_domain"] = "train_pool"
    workers: Optional[int] = Field(default=None, ge=1)


class AblationConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    variants: List[Variant] = Field(default_factory=lambda: list(Variant))
    reference_sizes: List[int] = Field(default_factory=lambda: list(REFERENCE_SWEEP))


class RunConfig(BaseModel):
    """Configuración completa de un experimento (JSON)"""
    model_config = ConfigDict(extra="forbid")

    preset: Preset = Preset.FSMOL
    seed: Optional[int] = None
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    ablation: AblationConfig = Field(default_factory=AblationConfig)
    synth: SynthConfig = Field(default_factory=SynthConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)

    @model_validator(mode="after")
    def _apply_preset(self) -> "RunConfig":
        if self.preset is Preset.CUSTOM:
            return self
        for key, value in _PRESET_TRAIN[self.preset].items():
            if key not in self.train.model_fields_set:
                setattr(self.train, key, value)
        if "query_size" not in self.eval.model_fields_set:
            self.eval.query_size = _PRESET_EVAL_QUERY[self.preset]
        return self

    @property
    def eval_support_size(self) -> int:
        return self.eval.support_size or self.train.support_size
