from enum import Enum
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field


class Variant(str, Enum):
    """Ruta de ablación del modelo"""
    ENCODER_ONLY = "encoder-only"   # sin aumentos, matching sobre S', Q'
    AM = "am"                       # atención AAM sobre [S' : Q'] sin anclas (ancho h)
    AAM = "aam"                     # aumento por anclas P sin contexto
    FULL = "full"                   # +AAM +CAM

    @property
    def uses_reference(self) -> bool:
        return self is Variant.FULL


class SamplingMode(str, Enum):
    BALANCED = "balanced"
    STRATIFIED = "stratified"


class EncoderConfig(BaseModel):
    """Encoder compartido f_e"""
    model_config = ConfigDict(extra="forbid")

    kind: Literal["mlp", "gin"] = "mlp"
    hidden: List[int] = Field(default_factory=lambda: [128], description="Anchos ocultos del MLP")
    activation: Literal["relu", "tanh"] = "relu"
    gin_layers: int = Field(default=3, ge=1)
    gin_eps: float = 0.0


class ModelConfig(BaseModel):
    """Hiperparámetros de arquitectura"""
    model_config = ConfigDict(extra="forbid")

    d: Optional[int] = Field(default=None, gt=0, description="Dimensión de entrada; None = se infiere de los datos")
    h: int = Field(default=64, gt=0, description="Dimensión del embedding")
    heads: int = Field(default=4, ge=1, description="Número de cabezas H")
    d_k: Optional[int] = Field(
        default=None, gt=0,
        description="Dimensión de proyección por cabeza; None = ancho del bloque (h en CAM, 3h en AAM)",
    )
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    reference_size: int = Field(default=512, ge=1, description="Tamaño M del lote de referencia")
    matching_scale: Literal["sqrt2h", "none"] = "sqrt2h"
    aam_block_query_attention: bool = Field(
        default=False, description="Bloquea la atención consulta→consulta en el AAM"
    )
    variant: Variant = Variant.FULL
    seed: int = 0


class TrainConfig(BaseModel):
    """Entradas del bucle de entrenamiento"""
    model_config = ConfigDict(extra="forbid")

    lr: float = Field(default=1e-3, ge=0.0, description="Tasa de aprendizaje η")
    max_episodes: int = Field(default=2000, gt=0)
    validation_interval: int = Field(default=100, gt=0)
    patience: int = Field(default=5, gt=0, description="Rondas de validación sin mejora")
    min_episodes: int = Field(default=0, ge=0, description="Sin corte temprano antes de este episodio")
    support_size: int = Field(default=16, gt=1)
    query_size: Optional[int] = Field(default=16, gt=0, description="None = todo el resto de la tarea")
    validation_query_size: Optional[int] = Field(
        default=None, gt=0, description="Consulta de los episodios de validación; None = todo el resto, como en evaluación"
    )
    sampling_mode: SamplingMode = SamplingMode.STRATIFIED
    clip_norm: float = Field(default=5.0, gt=0.0)
    validation_draws: int = Field(default=2, gt=0, description="Episodios de validación por tarea")
