# app/services/metrics_service.py

"""
Métricas de evaluación (AUROC, AUC-PR como average precision, ΔAUC-PR),
agregación sobre reruns × selecciones de soporte y PCA 2-D.
"""

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.metrics import roc_auc_score

from app.core.errors import DegenerateInput, NoPositives, RaggedInput, ShapeMismatch, SingleClass
from app.core.logging import log_structured
from app.schemas.metrics import EpisodeReport, EvalReport, MetricSummary, TaskReport

logger = logging.getLogger(__name__)


def _arrays(scores: Sequence[float], labels: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1) > 0
    if s.shape != y.shape:
        raise ShapeMismatch("metrics", s.shape, y.shape)
    return s, y


def tied_pairs(scores: Sequence[float]) -> int:
    _, counts = np.unique(np.asarray(scores, dtype=np.float64), return_counts=True)
    return int((counts * (counts - 1) // 2).sum())


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """P(positivo aleatorio > negativo aleatorio), empates valen 0.5."""
    s, y = _arrays(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUROC needs at least one positive and one negative")
    return float(roc_auc_score(y.astype(np.int64), s))


def ranking_order(scores: Sequence[float], ids: Optional[Sequence[str]] = None) -> List[int]:
    """Orden determinista: puntaje descendente, luego id ascendente."""
    keys = list(ids) if ids is not None else [f"{i:09d}" for i in range(len(scores))]
    return sorted(range(len(scores)), key=lambda i: (-float(scores[i]), keys[i]))


def auc_pr(scores: Sequence[float], labels: Sequence[int], ids: Optional[Sequence[str]] = None) -> Tuple[float, int]:
    """
    Average precision: media de la precisión en el rango de cada positivo.

    Returns:
        (ap, pares empatados en el ranking)
    """
    s, y = _arrays(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise NoPositives("AUC-PR needs at least one positive")
    hits = 0
    total = 0.0
    for rank, i in enumerate(ranking_order(s, ids), start=1):
        if y[i]:
            hits += 1
            total += hits / rank
    return total / n_pos, tied_pairs(s)


def prevalence(labels: Sequence[int]) -> float:
    y = np.asarray(labels).reshape(-1) > 0
    return float(y.mean()) if len(y) else 0.0


def delta_auc_pr(ap: float, prev: float) -> float:
    return ap - prev


def episode_report(
    task_id: str,
    scores: Sequence[float],
    labels: Sequence[int],
    ids: Optional[Sequence[str]] = None,
    rerun: int = 0,
    draw: int = 0,
) -> EpisodeReport:
    """ΔAUC-PR usa la prevalencia de la consulta de este episodio."""
    ap, ties = auc_pr(scores, labels, ids)
    prev = prevalence(labels)
    return EpisodeReport(
        task_id=task_id, auroc=auroc(scores, labels), auc_pr=ap,
        delta_auc_pr=delta_auc_pr(ap, prev), prevalence=prev,
        ties=ties, rerun=rerun, draw=draw,
    )


# ============================================================================
# AGREGACIÓN
# ============================================================================

def summarize(values: Sequence[float]) -> MetricSummary:
    """Media y error estándar (desviación muestral / sqrt(n)); exactos con valores constantes."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise RaggedInput("cannot summarize an empty set of tasks")
    if np.all(v == v[0]):
        return MetricSummary(mean=float(v[0]), stderr=0.0)
    stderr = float(v.std(ddof=1) / np.sqrt(v.size))
    return MetricSummary(mean=float(v.mean()), stderr=stderr)


def aggregate(
    reports: Sequence[EpisodeReport],
    reruns: int,
    draws: int,
    support_size: Optional[int] = None,
    variant: Optional[str] = None,
) -> EvalReport:
    """Media por tarea sobre R·K episodios, luego media ± error estándar sobre tareas."""
    grouped: Dict[str, List[EpisodeReport]] = {}
    for r in reports:
        grouped.setdefault(r.task_id, []).append(r)
    expected = reruns * draws
    tasks: List[TaskReport] = []
    for task_id in sorted(grouped):
        rows = grouped[task_id]
        if len(rows) != expected:
            raise RaggedInput(f"task {task_id!r} has {len(rows)} episode reports, expected {reruns}x{draws}={expected}")
        tasks.append(TaskReport(
            task_id=task_id,
            auroc=float(np.mean([r.auroc for r in rows])),
            auc_pr=float(np.mean([r.auc_pr for r in rows])),
            delta_auc_pr=float(np.mean([r.delta_auc_pr for r in rows])),
            prevalence=float(np.mean([r.prevalence for r in rows])),
            episodes=len(rows),
            ties=sum(r.ties for r in rows),
        ))
    if not tasks:
        raise RaggedInput("no episode reports to aggregate")
    return EvalReport(
        tasks=tasks,
        auroc=summarize([t.auroc for t in tasks]),
        auc_pr=summarize([t.auc_pr for t in tasks]),
        delta_auc_pr=summarize([t.delta_auc_pr for t in tasks]),
        reruns=reruns, draws=draws, support_size=support_size, variant=variant,
    )


# ============================================================================
# PCA
# ============================================================================

@dataclass
class PcaResult:
    coords: np.ndarray       # n×2
    components: np.ndarray   # 2×h, filas ortonormales
    mean: np.ndarray         # h
    explained: np.ndarray    # varianza por componente


def _fix_sign(v: np.ndarray) -> np.ndarray:
    return -v if v[int(np.argmax(np.abs(v)))] < 0 else v


def pca_2d(x: np.ndarray) -> PcaResult:
    """Centrado + eigh de la covarianza; signo fijado (entrada de mayor magnitud positiva)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DegenerateInput(f"PCA needs at least 2 rows, got shape {x.shape}")
    n, h = x.shape
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals, kind="mergesort")[::-1]
    components = np.zeros((2, h))
    explained = np.zeros(2)
    for k, idx in enumerate(order[:2]):
        components[k] = _fix_sign(vecs[:, idx])
        explained[k] = max(float(vals[idx]), 0.0)
    if not np.any(explained > 1e-12):
        log_structured(logger, "warning", "pca.zero_variance", rows=n)
        return PcaResult(coords=np.zeros((n, 2)), components=components, mean=mean, explained=explained)
    return PcaResult(coords=centered @ components.T, components=components, mean=mean, explained=explained)


# ============================================================================
# SALIDAS
# ============================================================================

TASK_COLUMNS = ("task_id", "auroc", "auc_pr", "delta_auc_pr", "prevalence", "episodes", "ties")
EPISODE_COLUMNS = ("task_id", "rerun", "draw", "auroc", "auc_pr", "delta_auc_pr", "prevalence", "ties")


def _fmt(value) -> str:
    return repr(float(value)) if isinstance(value, float) else str(value)


def write_task_csv(path: str | Path, report: EvalReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(TASK_COLUMNS)
        for t in report.tasks:
            writer.writerow([_fmt(getattr(t, c)) for c in TASK_COLUMNS])


def write_episode_csv(path: str | Path, reports: Sequence[EpisodeReport]) -> None:
    rows = sorted(reports, key=lambda r: (r.task_id, r.rerun, r.draw))
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(EPISODE_COLUMNS)
        for r in rows:
            writer.writerow([_fmt(getattr(r, c)) for c in EPISODE_COLUMNS])


def write_summary_json(path: str | Path, report: EvalReport) -> None:
    doc = report.model_dump(mode="json", exclude={"tasks"})
    doc["task_count"] = len(report.tasks)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
