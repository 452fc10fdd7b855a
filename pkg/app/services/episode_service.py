# app/services/episode_service.py

"""
Tareas, muestreo episódico y generador sintético con sesgo de selección.

Formato de archivo de tareas (JSON lines):
    {"task_id": str, "id": str, "smiles": str | "features": [f64...], "label": -1|1|0}
(0 es alias de -1). Pool de referencia: mismo formato sin "label"/"task_id".
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import (
    DuplicateRecordId, InvalidConfig, MalformedLine, PoolTooSmall, SingleClassTask, TaskTooSmall,
)
from app.core.logging import log_structured
from app.core.rng import make_rng
from app.schemas.episodes import Episode, MoleculeRecord, SynthConfig, Task
from app.schemas.features import FeatureVector
from app.schemas.model import SamplingMode

logger = logging.getLogger(__name__)

_LABEL_ALIASES = {-1: -1, 0: -1, 1: 1}


# ============================================================================
# LECTURA / ESCRITURA
# ============================================================================

def _parse_record(path: str, line_no: int, line: str, labeled: bool) -> MoleculeRecord:
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedLine(path, line_no, f"invalid JSON ({exc.msg})") from exc
    if not isinstance(doc, dict):
        raise MalformedLine(path, line_no, "expected a JSON object")

    record_id = doc.get("id")
    if not isinstance(record_id, str) or not record_id:
        raise MalformedLine(path, line_no, "missing or non-string 'id'")

    smiles = doc.get("smiles")
    raw = doc.get("features")
    if (smiles is None) == (raw is None):
        raise MalformedLine(path, line_no, "exactly one of 'smiles' or 'features' is required")
    features = None
    if raw is not None:
        if not isinstance(raw, list) or not raw or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw
        ):
            raise MalformedLine(path, line_no, "'features' must be a non-empty list of numbers")
        if not all(math.isfinite(v) for v in raw):
            raise MalformedLine(path, line_no, "'features' contains NaN or Inf")
        features = FeatureVector.from_raw(raw)
    elif not isinstance(smiles, str) or not smiles.strip():
        raise MalformedLine(path, line_no, "'smiles' must be a non-empty string")

    pool = doc.get("pool")
    if pool not in (None, "support", "query"):
        raise MalformedLine(path, line_no, f"'pool' must be 'support' or 'query', got {pool!r}")

    if not labeled:
        return MoleculeRecord(id=record_id, smiles=smiles, features=features)

    task_id = doc.get("task_id")
    if not isinstance(task_id, str) or not task_id:
        raise MalformedLine(path, line_no, "missing or non-string 'task_id'")
    label = doc.get("label")
    if isinstance(label, bool) or label not in _LABEL_ALIASES:
        raise MalformedLine(path, line_no, f"label must be -1, 1 or 0 (alias of -1), got {label!r}")
    return MoleculeRecord(
        id=record_id, smiles=smiles, features=features,
        label=_LABEL_ALIASES[label], task_id=task_id, pool=pool,
    )


def _data_lines(path: str | Path) -> Iterable[Tuple[int, str]]:
    with open(path, "rb") as f:
        for line_no, raw in enumerate(f, start=1):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as e:
                raise MalformedLine(str(path), line_no, f"invalid UTF-8 at byte {e.start}") from e
            if line.strip():
                yield line_no, line


def load_tasks(path: str | Path) -> List[Task]:
    """Agrupa los registros por task_id, en orden de primera aparición."""
    grouped: Dict[str, List[MoleculeRecord]] = {}
    seen: Dict[Tuple[str, str], int] = {}
    for line_no, line in _data_lines(path):
        record = _parse_record(str(path), line_no, line, labeled=True)
        key = (record.task_id, record.id)
        if key in seen:
            raise DuplicateRecordId(record.id, line_no)
        seen[key] = line_no
        grouped.setdefault(record.task_id, []).append(record)

    if not grouped:
        log_structured(logger, "warning", "tasks.empty_file", path=str(path))
        return []

    tasks = []
    for task_id, records in grouped.items():
        if len(records) < 2:
            raise TaskTooSmall(task_id, f"{len(records)} record(s) in {path}, at least 2 required")
        task = Task(task_id=task_id, records=records)
        counts = task.class_counts()
        log_structured(logger, "debug", "tasks.class_counts", task_id=task_id, negatives=counts[-1], positives=counts[1])
        tasks.append(task)
    log_structured(logger, "info", "tasks.loaded", path=str(path), tasks=len(tasks), records=len(seen))
    return tasks


def load_pool(path: str | Path) -> List[MoleculeRecord]:
    """Pool de referencia sin etiquetas; ids repetidos son error."""
    records: List[MoleculeRecord] = []
    seen = set()
    for line_no, line in _data_lines(path):
        record = _parse_record(str(path), line_no, line, labeled=False)
        if record.id in seen:
            raise DuplicateRecordId(record.id, line_no)
        seen.add(record.id)
        records.append(record)
    if not records:
        log_structured(logger, "warning", "pool.empty_file", path=str(path))
    log_structured(logger, "info", "pool.loaded", path=str(path), records=len(records))
    return records


def _record_doc(record: MoleculeRecord, labeled: bool) -> dict:
    doc: dict = {"id": record.id}
    if record.smiles is not None:
        doc["smiles"] = record.smiles
    else:
        doc["features"] = [float(v) for v in record.features.combined]
    if labeled:
        doc["task_id"] = record.task_id
        doc["label"] = int(record.label)
        if record.pool is not None:
            doc["pool"] = record.pool
    return doc


def write_tasks(path: str | Path, tasks: Sequence[Task]) -> int:
    lines = [
        json.dumps(_record_doc(r, labeled=True), sort_keys=True)
        for task in tasks for r in task.records
    ]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return len(lines)


def write_pool(path: str | Path, records: Sequence[MoleculeRecord]) -> int:
    lines = [json.dumps(_record_doc(r, labeled=False), sort_keys=True) for r in records]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return len(lines)


def strip_labels(tasks: Sequence[Task]) -> List[MoleculeRecord]:
    """Unión de las moléculas de las tareas (primera aparición por id), sin etiquetas."""
    pool: List[MoleculeRecord] = []
    seen = set()
    for task in tasks:
        for r in task.records:
            if r.id in seen:
                continue
            seen.add(r.id)
            pool.append(r.unlabeled())
    return pool


# ============================================================================
# MUESTREO
# ============================================================================

def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def support_class_sizes(n_support: int, prevalence: float, mode: SamplingMode) -> Tuple[int, int]:
    """(negativos, positivos) pedidos para el soporte, antes de ajustar a disponibilidad."""
    if mode is SamplingMode.BALANCED:
        n_pos = n_support // 2
    else:
        n_pos = min(max(round_half_up(n_support * prevalence), 1), n_support - 1)
    return n_support - n_pos, n_pos


def _fit_to_available(wanted: Dict[int, int], available: Dict[int, int], total: int) -> Dict[int, int]:
    take = {c: min(wanted[c], available[c]) for c in (-1, 1)}
    # el déficit de una clase se cubre con la otra
    for c in (-1, 1):
        other = -c
        short = total - take[c] - take[other]
        if short > 0:
            take[other] = min(take[other] + short, available[other])
    return take


def sample_episode(
    task: Task,
    rng: np.random.Generator,
    support_size: int,
    query_size: Optional[int],
    mode: SamplingMode = SamplingMode.STRATIFIED,
    require_query_classes: bool = False,
) -> Episode:
    """
    Soporte con >= 1 registro por clase y consulta con el resto.

    Si la tarea trae hints de pool (generador sintético), el soporte sale de los
    registros 'support' y la consulta de los 'query'. query_size=None toma todo
    el resto; si quedan menos de query_size, también.
    """
    counts = task.class_counts()
    if counts[-1] == 0 or counts[1] == 0:
        raise SingleClassTask(task.task_id)
    if support_size < 2:
        raise TaskTooSmall(task.task_id, f"support size {support_size} cannot hold both classes")

    hinted = any(r.pool is not None for r in task.records)
    support_pool = [r for r in task.records if not hinted or r.pool != "query"]
    by_class = {c: [r for r in support_pool if r.label == c] for c in (-1, 1)}
    available = {c: len(v) for c, v in by_class.items()}
    if not hinted and query_size != 0:
        # deja al menos uno por clase para la consulta cuando se puede
        available = {c: n - 1 if n >= 2 else n for c, n in available.items()}
    if min(available.values()) == 0:
        raise TaskTooSmall(task.task_id, "support candidates lack one of the classes")

    n_neg, n_pos = support_class_sizes(support_size, task.prevalence, mode)
    take = _fit_to_available({-1: n_neg, 1: n_pos}, available, support_size)
    if take[-1] + take[1] < support_size:
        raise TaskTooSmall(
            task.task_id, f"support needs {support_size} records, {take[-1] + take[1]} available"
        )

    support: List[MoleculeRecord] = []
    for c in (-1, 1):
        picks = rng.permutation(len(by_class[c]))[:take[c]]
        support.extend(by_class[c][i] for i in sorted(picks))
    support = [support[i] for i in rng.permutation(len(support))]

    chosen = {r.id for r in support}
    rest = [r for r in task.records if r.id not in chosen and (not hinted or r.pool != "support")]
    if query_size is None or len(rest) <= query_size:
        query = [rest[i] for i in rng.permutation(len(rest))]
    else:
        query = [rest[i] for i in rng.permutation(len(rest))[:query_size]]
    if not query and query_size != 0:
        raise TaskTooSmall(task.task_id, "no records left for the query set")
    if require_query_classes and len({r.label for r in query}) < 2:
        raise TaskTooSmall(task.task_id, "query set lacks one of the classes")
    return Episode(task_id=task.task_id, support=support, query=query)


def sample_reference(pool: Sequence[MoleculeRecord], size: int, rng: np.random.Generator) -> List[MoleculeRecord]:
    """M registros uniformes sin reemplazo, en orden del RNG."""
    if size > len(pool):
        raise PoolTooSmall(len(pool), size)
    return [pool[i] for i in rng.permutation(len(pool))[:size]]


def with_reference(episode: Episode, reference: Sequence[MoleculeRecord]) -> Episode:
    return episode.model_copy(update={"reference": list(reference)})


# ============================================================================
# GENERADOR SINTÉTICO
# ============================================================================

@dataclass
class SynthSplit:
    train: List[Task]
    valid: List[Task]
    test: List[Task]
    pool: List[MoleculeRecord]


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def _labels(rng: np.random.Generator, n: int, prevalence: float) -> np.ndarray:
    n_pos = int(min(max(rng.binomial(n, prevalence), 2), n - 2))
    labels = np.full(n, -1)
    labels[:n_pos] = 1
    return labels[rng.permutation(n)]


def split_sizes(config: SynthConfig) -> Tuple[int, int, int]:
    if config.train_fraction + config.valid_fraction >= 1.0:
        raise InvalidConfig("train_fraction + valid_fraction must be < 1")
    n_train = round_half_up(config.task_count * config.train_fraction)
    n_valid = round_half_up(config.task_count * config.valid_fraction)
    n_test = config.task_count - n_train - n_valid
    if min(n_train, n_valid, n_test) < 1:
        raise InvalidConfig(
            f"task split {n_train}/{n_valid}/{n_test} leaves an empty split; raise task_count"
        )
    return n_train, n_valid, n_test


def synth_tasks(config: SynthConfig, seed: int) -> SynthSplit:
    """
    Cada tarea: dos clusters gaussianos (covarianza identidad) con medias en la
    esfera de radio s. La consulta sale de los clusters originales; el soporte
    de clusters desplazados b·s en una dirección aleatoria por clase. El pool
    de referencia son muestras sin etiqueta de la unión de todos los clusters.
    """
    n_train, n_valid, _ = split_sizes(config)
    dim, s, b = config.dim, config.separation, config.bias
    tasks: List[Task] = []
    means: List[Dict[int, np.ndarray]] = []
    for t in range(config.task_count):
        task_id = f"synth-{t:03d}"
        rng = make_rng(seed, "synth", task_id)
        mu = {c: s * _unit(rng, dim) for c in (-1, 1)}
        shifted = {c: mu[c] + b * s * _unit(rng, dim) for c in (-1, 1)}
        records: List[MoleculeRecord] = []
        for pool, size, centers in (
            ("support", config.support_pool_size, shifted),
            ("query", config.query_pool_size, mu),
        ):
            for i, y in enumerate(_labels(rng, size, config.prevalence)):
                x = centers[int(y)] + rng.standard_normal(dim)
                records.append(MoleculeRecord(
                    id=f"{task_id}-{pool[0]}{i:04d}", features=FeatureVector.from_raw(x),
                    label=int(y), task_id=task_id, pool=pool,
                ))
        tasks.append(Task(task_id=task_id, records=records))
        means.append(mu)

    rng = make_rng(seed, "synth", "pool")
    pool_records = []
    for i in range(config.pool_size):
        t = int(rng.integers(config.task_count))
        c = 1 if rng.random() < config.prevalence else -1
        x = means[t][c] + rng.standard_normal(dim)
        pool_records.append(MoleculeRecord(id=f"ref-{i:05d}", features=FeatureVector.from_raw(x)))

    split = SynthSplit(
        train=tasks[:n_train],
        valid=tasks[n_train:n_train + n_valid],
        test=tasks[n_train + n_valid:],
        pool=pool_records,
    )
    log_structured(
        logger, "info", "synth.generated", seed=seed, bias=b, train=len(split.train),
        valid=len(split.valid), test=len(split.test), pool=len(pool_records),
    )
    return split
