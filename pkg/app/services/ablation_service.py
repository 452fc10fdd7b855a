# app/services/ablation_service.py

"""
Ablación de componentes (encoder-only, +AM, +AAM, +AAM+CAM) y barrido del
tamaño M del lote de referencia.

Todas las variantes comparten semillas: la misma inicialización del encoder,
los mismos episodios de entrenamiento y las mismas selecciones de soporte.
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

from app.core.logging import log_structured
from app.core.rng import derive_seed
from app.schemas.episodes import MoleculeRecord, Task
from app.schemas.metrics import EvalReport
from app.schemas.model import ModelConfig, TrainConfig, Variant
from app.services.evaluation_service import EvalSettings, TrainedRun, evaluate
from app.services.training_service import train

logger = logging.getLogger(__name__)


def rerun_seed(seed: int, rerun: int) -> int:
    return derive_seed(seed, "rerun", rerun) & 0x7FFFFFFFFFFFFFFF


def train_reruns(
    reruns: int,
    train_tasks: Sequence[Task],
    valid_tasks: Sequence[Task],
    pool: Sequence[MoleculeRecord],
    model_config: ModelConfig,
    train_config: TrainConfig,
    seed: int,
) -> List[TrainedRun]:
    runs = []
    for r in range(reruns):
        result = train(train_tasks, pool, model_config, train_config, valid_tasks, seed=rerun_seed(seed, r))
        runs.append((result.config, result.params))
    return runs


@dataclass
class AblationRow:
    label: str
    status: str = "ok"
    auroc: Optional[float] = None
    auroc_stderr: Optional[float] = None
    delta_auc_pr: Optional[float] = None
    delta_auc_pr_stderr: Optional[float] = None
    detail: str = ""

    @classmethod
    def from_report(cls, label: str, report: EvalReport) -> "AblationRow":
        return cls(
            label=label,
            auroc=report.auroc.mean, auroc_stderr=report.auroc.stderr,
            delta_auc_pr=report.delta_auc_pr.mean, delta_auc_pr_stderr=report.delta_auc_pr.stderr,
        )


def run_variants(
    variants: Sequence[Variant],
    reruns: int,
    train_tasks: Sequence[Task],
    valid_tasks: Sequence[Task],
    test_tasks: Sequence[Task],
    train_pool: Sequence[MoleculeRecord],
    eval_pool: Sequence[MoleculeRecord],
    model_config: ModelConfig,
    train_config: TrainConfig,
    settings: EvalSettings,
) -> List[AblationRow]:
    """
    Una fila por variante, en el orden pedido.

    Si el pool no alcanza para M, las variantes con referencias usan el pool
    entero y la fila lo indica en `detail`; sin pool quedan como skipped.
    """
    rows = []
    available = min(len(train_pool), len(eval_pool))
    for variant in variants:
        config = model_config.model_copy(update={"variant": variant})
        detail = ""
        if variant.uses_reference and model_config.reference_size > available:
            if available == 0:
                rows.append(AblationRow(label=variant.value, status="skipped", detail="reference pool is empty"))
                log_structured(logger, "warning", "ablation.variant_skipped", variant=variant.value)
                continue
            config.reference_size = available
            detail = f"reference_size clamped from {model_config.reference_size} to {available}"
            log_structured(logger, "warning", "ablation.reference_clamped", variant=variant.value,
                           requested=model_config.reference_size, pool=available)
        runs = train_reruns(reruns, train_tasks, valid_tasks, train_pool, config, train_config, settings.seed)
        report, _ = evaluate(runs, test_tasks, eval_pool, settings)
        row = AblationRow.from_report(variant.value, report)
        row.detail = detail
        rows.append(row)
        log_structured(logger, "info", "ablation.variant", variant=variant.value,
                       auroc=report.auroc.mean, delta_auc_pr=report.delta_auc_pr.mean)
    return rows


def run_reference_sweep(
    sizes: Sequence[int],
    reruns: int,
    train_tasks: Sequence[Task],
    valid_tasks: Sequence[Task],
    test_tasks: Sequence[Task],
    train_pool: Sequence[MoleculeRecord],
    eval_pool: Sequence[MoleculeRecord],
    model_config: ModelConfig,
    train_config: TrainConfig,
    settings: EvalSettings,
) -> List[AblationRow]:
    """Variante completa con cada M; los M mayores que el pool quedan marcados como skipped."""
    rows = []
    available = min(len(train_pool), len(eval_pool))
    for size in sizes:
        label = str(size)
        if size > available:
            rows.append(AblationRow(label=label, status="skipped", detail=f"pool has {available} molecules"))
            log_structured(logger, "warning", "ablation.reference_skipped", reference_size=size, pool=available)
            continue
        config = model_config.model_copy(update={"variant": Variant.FULL, "reference_size": size})
        runs = train_reruns(reruns, train_tasks, valid_tasks, train_pool, config, train_config, settings.seed)
        report, _ = evaluate(runs, test_tasks, eval_pool, settings)
        rows.append(AblationRow.from_report(label, report))
        log_structured(logger, "info", "ablation.reference", reference_size=size,
                       delta_auc_pr=report.delta_auc_pr.mean)
    return rows


ROW_COLUMNS = ("status", "auroc", "auroc_stderr", "delta_auc_pr", "delta_auc_pr_stderr", "detail")


def write_rows(path: str | Path, rows: Sequence[AblationRow], key: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow((key,) + ROW_COLUMNS)
        for row in rows:
            values = [getattr(row, c) for c in ROW_COLUMNS]
            writer.writerow([row.label] + ["" if v is None else (repr(v) if isinstance(v, float) else v) for v in values])
