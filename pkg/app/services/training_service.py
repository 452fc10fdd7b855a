# app/services/training_service.py

"""
Bucle de entrenamiento episódico:

    por episodio: tarea aleatoria -> episodio -> M referencias -> forward ->
    BCE -> backward -> recorte de gradiente -> Adam

Cada `validation_interval` episodios se mide el ΔAUC-PR medio sobre episodios
de validación fijos (misma semilla en toda la corrida, consulta de tamaño
`validation_query_size`); se conservan los parámetros del mejor punto y se
corta tras `patience` rondas sin mejora, nunca antes de `min_episodes`.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from app.core import ndiff
from app.core.errors import (
    EmptyReferencePool, EmptyTrainingSet, NonFiniteLoss, PoolTooSmall, SingleClassTask, TaskTooSmall,
)
from app.core.logging import log_structured
from app.core.rng import make_rng
from app.schemas.episodes import Episode, MoleculeRecord, Task
from app.schemas.model import ModelConfig, TrainConfig
from app.services import cra_model
from app.services.cra_model import CraParams
from app.services.episode_service import sample_episode, sample_reference, with_reference
from app.services.metrics_service import episode_report

logger = logging.getLogger(__name__)


@dataclass
class CurvePoint:
    episode: int
    loss: float
    val_delta_auc_pr: Optional[float]


@dataclass
class TrainResult:
    config: ModelConfig
    params: CraParams
    curve: List[CurvePoint] = field(default_factory=list)
    baseline_val: Optional[float] = None
    best_val: Optional[float] = None
    best_episode: int = 0
    episodes_run: int = 0
    skipped_episodes: int = 0
    stopped_early: bool = False


def resolve_model_config(config: ModelConfig, records: Sequence[MoleculeRecord]) -> ModelConfig:
    """Completa d con la dimensión de los features (encoder MLP)."""
    if config.encoder.kind == "gin" or config.d is not None:
        return config
    dims = {r.features.dim for r in records if r.features is not None}
    if not dims:
        raise EmptyTrainingSet("no featurized training molecules to infer the input dimension from")
    if len(dims) > 1:
        raise EmptyTrainingSet(f"training molecules have inconsistent feature dimensions {sorted(dims)}")
    return config.model_copy(update={"d": dims.pop()})


def fixed_episodes(
    tasks: Sequence[Task],
    pool: Sequence[MoleculeRecord],
    model_config: ModelConfig,
    support_size: int,
    query_size: Optional[int],
    train_config: TrainConfig,
    draws: int,
    seed: int,
    purpose: str = "valid",
) -> List[Episode]:
    """Episodios deterministas por (seed, propósito, tarea, draw); tareas no muestreables se omiten."""
    episodes = []
    for task in tasks:
        for d in range(draws):
            rng = make_rng(seed, purpose, task.task_id, d)
            try:
                ep = sample_episode(task, rng, support_size, query_size, train_config.sampling_mode,
                                    require_query_classes=True)
            except (TaskTooSmall, SingleClassTask) as exc:
                log_structured(logger, "warning", "train.validation_task_skipped", task_id=task.task_id, reason=str(exc))
                break
            if model_config.variant.uses_reference:
                ep = with_reference(ep, sample_reference(pool, model_config.reference_size, rng))
            episodes.append(ep)
    return episodes


def mean_delta_auc_pr(episodes: Sequence[Episode], params: CraParams, config: ModelConfig) -> float:
    deltas = []
    for ep in episodes:
        probs = cra_model.predict(ep, params, config)
        deltas.append(episode_report(ep.task_id, probs, ep.query_labels(), [r.id for r in ep.query]).delta_auc_pr)
    return float(np.mean(deltas))


def _check_pool(pool: Sequence[MoleculeRecord], config: ModelConfig) -> None:
    if not config.variant.uses_reference:
        return
    if not pool:
        raise EmptyReferencePool("the reference pool is empty; the full variant needs unlabeled molecules")
    if len(pool) < config.reference_size:
        raise PoolTooSmall(len(pool), config.reference_size)


def train(
    tasks: Sequence[Task],
    pool: Sequence[MoleculeRecord],
    model_config: ModelConfig,
    train_config: TrainConfig,
    valid_tasks: Sequence[Task] = (),
    seed: int = 0,
) -> TrainResult:
    """
    Entrena CRA y devuelve los parámetros con mejor ΔAUC-PR de validación
    (o los finales si no hay tareas de validación).
    """
    sampleable = []
    for t in tasks:
        if min(t.class_counts().values()) > 0:
            sampleable.append(t)
        else:
            log_structured(logger, "warning", "train.single_class_task", task_id=t.task_id)
    if not sampleable:
        raise EmptyTrainingSet("no training task contains both classes")
    config = resolve_model_config(model_config, [r for t in sampleable for r in t.records])
    _check_pool(pool, config)

    params = cra_model.init_params(config, seed=seed)
    state = ndiff.AdamState()
    result = TrainResult(config=config, params=params)

    val_episodes = fixed_episodes(
        valid_tasks, pool, config, train_config.support_size, train_config.validation_query_size,
        train_config, train_config.validation_draws, seed,
    )
    best_params = cra_model.copy_params(params)
    if val_episodes:
        result.baseline_val = result.best_val = mean_delta_auc_pr(val_episodes, params, config)
        log_structured(logger, "info", "train.baseline", val_delta_auc_pr=result.baseline_val,
                       val_episodes=len(val_episodes))

    log_structured(
        logger, "info", "train.start", variant=config.variant.value, tasks=len(sampleable),
        params=sum(p.value.size for p in params.values()), max_episodes=train_config.max_episodes, seed=seed,
    )
    window: List[float] = []
    stale = 0
    for episode in range(1, train_config.max_episodes + 1):
        rng = make_rng(seed, "train", episode)
        task = sampleable[int(rng.integers(len(sampleable)))]
        try:
            ep = sample_episode(task, rng, train_config.support_size, train_config.query_size,
                                train_config.sampling_mode)
        except (TaskTooSmall, SingleClassTask) as exc:
            result.skipped_episodes += 1
            log_structured(logger, "debug", "train.episode_skipped", episode=episode, task_id=task.task_id, reason=str(exc))
            continue
        if config.variant.uses_reference:
            ep = with_reference(ep, sample_reference(pool, config.reference_size, rng))

        ndiff.zero_grad(params.values())
        with ndiff.Tape() as tape:
            probs = cra_model.forward_episode(ep, params, config)
            loss = cra_model.bce_loss(probs, ep.query_labels())
        value = loss.item()
        if not math.isfinite(value):
            raise NonFiniteLoss(episode, task.task_id, value)
        tape.backward(loss)
        tape.clear()
        ndiff.clip_grad_norm(params.values(), train_config.clip_norm)
        ndiff.adam_step(params, state, train_config.lr)
        window.append(value)
        result.episodes_run = episode

        if episode % train_config.validation_interval:
            continue
        mean_loss = float(np.mean(window))
        window.clear()
        val = mean_delta_auc_pr(val_episodes, params, config) if val_episodes else None
        result.curve.append(CurvePoint(episode=episode, loss=mean_loss, val_delta_auc_pr=val))
        log_structured(logger, "info", "train.step", episode=episode, loss=mean_loss, val_delta_auc_pr=val)
        if val is None:
            continue
        if val > result.best_val:
            result.best_val = val
            result.best_episode = episode
            best_params = cra_model.copy_params(params)
            stale = 0
            log_structured(logger, "info", "train.best", episode=episode, val_delta_auc_pr=val)
        else:
            stale += 1
            if stale >= train_config.patience and episode >= train_config.min_episodes:
                result.stopped_early = True
                log_structured(logger, "info", "train.early_stop", episode=episode, best_episode=result.best_episode)
                break

    if result.episodes_run == 0 or result.skipped_episodes == train_config.max_episodes:
        raise EmptyTrainingSet("every sampled training episode was rejected (tasks too small for the support size)")
    if window:
        result.curve.append(CurvePoint(episode=result.episodes_run, loss=float(np.mean(window)), val_delta_auc_pr=None))
    result.params = best_params if val_episodes else params
    log_structured(
        logger, "info", "train.done", episodes=result.episodes_run, skipped=result.skipped_episodes,
        best_episode=result.best_episode, best_val=result.best_val, baseline_val=result.baseline_val,
    )
    return result
