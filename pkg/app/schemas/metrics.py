from typing import List, Optional

from pydantic import BaseModel, Field


class EpisodeReport(BaseModel):
    """Métricas de un episodio de evaluación"""
    task_id: str
    auroc: float = Field(..., ge=0.0, le=1.0)
    auc_pr: float = Field(..., ge=0.0, le=1.0)
    delta_auc_pr: float
    prevalence: float = Field(..., description="Prevalencia de la consulta del episodio")
    ties: int = Field(default=0, ge=0, description="Pares de puntajes empatados en el ranking")
    rerun: int = 0
    draw: int = 0


class TaskReport(BaseModel):
    """Promedio por tarea sobre reruns × selecciones de soporte"""
    task_id: str
    auroc: float
    auc_pr: float
    delta_auc_pr: float
    prevalence: float
    episodes: int
    ties: int = 0


class MetricSummary(BaseModel):
    mean: float
    stderr: float


class EvalReport(BaseModel):
    """Reporte agregado sobre tareas"""
    tasks: List[TaskReport]
    auroc: MetricSummary
    auc_pr: MetricSummary
    delta_auc_pr: MetricSummary
    reruns: int
    draws: int
    support_size: Optional[int] = None
    variant: Optional[str] = None
