# app/services/evaluation_service.py

"""
Protocolo de evaluación: R reruns de entrenamiento × K selecciones de soporte
por tarea, paralelo sobre tareas.

Cada tarea usa flujos aleatorios derivados de (seed, tarea, draw), así el
resultado no depende de cuántos workers haya ni del orden en que terminan.
Las K selecciones son las mismas para todos los reruns y variantes.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

from app.core.errors import SingleClassTask, TaskTooSmall
from app.core.logging import log_structured
from app.core.rng import make_rng
from app.schemas.episodes import Episode, MoleculeRecord, Task
from app.schemas.metrics import EpisodeReport, EvalReport
from app.schemas.model import ModelConfig, SamplingMode, Variant
from app.services import cra_model
from app.services.cra_model import CraParams
from app.services.episode_service import sample_episode, sample_reference, with_reference
from app.services.metrics_service import aggregate, episode_report

logger = logging.getLogger(__name__)

TrainedRun = Tuple[ModelConfig, CraParams]


@dataclass
class EvalSettings:
    support_size: int
    query_size: Optional[int]
    draws: int
    sampling_mode: SamplingMode
    seed: int
    workers: int = 1
    variant: Optional[Variant] = None


def task_episodes(task: Task, pool: Sequence[MoleculeRecord], reference_size: Optional[int],
                  settings: EvalSettings) -> List[Episode]:
    """K episodios fijos de la tarea; TaskTooSmall/SingleClassTask se propagan."""
    episodes = []
    for k in range(settings.draws):
        rng = make_rng(settings.seed, "eval", task.task_id, k)
        ep = sample_episode(task, rng, settings.support_size, settings.query_size,
                            settings.sampling_mode, require_query_classes=True)
        if reference_size:
            ep = with_reference(ep, sample_reference(pool, reference_size, rng))
        episodes.append(ep)
    return episodes


def _needs_reference(runs: Sequence[TrainedRun], variant: Optional[Variant]) -> Optional[int]:
    sizes = {cfg.reference_size for cfg, _ in runs if (variant or cfg.variant).uses_reference}
    return max(sizes) if sizes else None


def _evaluate_task(task: Task, runs: Sequence[TrainedRun], pool: Sequence[MoleculeRecord],
                   settings: EvalSettings) -> List[EpisodeReport]:
    reference_size = _needs_reference(runs, settings.variant)
    try:
        episodes = task_episodes(task, pool, reference_size, settings)
    except (TaskTooSmall, SingleClassTask) as exc:
        log_structured(logger, "warning", "eval.task_skipped", task_id=task.task_id, reason=str(exc))
        return []
    reports = []
    for r, (config, params) in enumerate(runs):
        for k, ep in enumerate(episodes):
            if ep.reference and len(ep.reference) > config.reference_size:
                ep = with_reference(ep, ep.reference[:config.reference_size])
            probs = cra_model.predict(ep, params, config, settings.variant)
            reports.append(episode_report(
                task.task_id, probs, ep.query_labels(), [q.id for q in ep.query], rerun=r, draw=k,
            ))
    return reports


def evaluate(
    runs: Sequence[TrainedRun],
    tasks: Sequence[Task],
    pool: Sequence[MoleculeRecord],
    settings: EvalSettings,
) -> Tuple[EvalReport, List[EpisodeReport]]:
    """
    Evalúa R modelos entrenados (uno por rerun) sobre las tareas de prueba.

    Returns:
        (reporte agregado, reportes por episodio ordenados por tarea/rerun/draw)
    """
    workers = max(1, min(settings.workers, len(tasks) or 1))
    with ThreadPoolExecutor(max_workers=workers) as executor:
        per_task: Dict[str, List[EpisodeReport]] = dict(zip(
            [t.task_id for t in tasks],
            executor.map(lambda t: _evaluate_task(t, runs, pool, settings), tasks),
        ))
    reports = [r for task_id in sorted(per_task) for r in per_task[task_id]]
    variant = (settings.variant or runs[0][0].variant).value
    report = aggregate(reports, len(runs), settings.draws, support_size=settings.support_size, variant=variant)
    log_structured(
        logger, "info", "eval.done", tasks=len(report.tasks), skipped=len(tasks) - len(report.tasks),
        support_size=settings.support_size, variant=variant,
        auroc=report.auroc.mean, delta_auc_pr=report.delta_auc_pr.mean, workers=workers,
    )
    return report, reports


def evaluate_sweep(
    runs: Sequence[TrainedRun],
    tasks: Sequence[Task],
    pool: Sequence[MoleculeRecord],
    settings: EvalSettings,
    support_sizes: Sequence[int],
) -> Dict[int, Tuple[EvalReport, List[EpisodeReport]]]:
    """Un reporte por tamaño de soporte."""
    results = {}
    for size in support_sizes:
        results[size] = evaluate(runs, tasks, pool, replace(settings, support_size=size))
    return results
