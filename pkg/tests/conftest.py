import json
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pytest

from app.core.config import get_settings
from app.schemas.episodes import Episode, MoleculeRecord, SynthConfig, Task
from app.schemas.features import FeatureVector
from app.schemas.model import EncoderConfig, ModelConfig, Variant

GOLDEN_DIR = Path(__file__).parent / "golden"


def feature_record(record_id: str, values, label: Optional[int] = None, task_id: Optional[str] = None,
                   pool: Optional[str] = None) -> MoleculeRecord:
    return MoleculeRecord(
        id=record_id, features=FeatureVector.from_raw(values), label=label,
        task_id=task_id if label is not None else None, pool=pool,
    )


def labeled_records(rng: np.random.Generator, labels: Sequence[int], d: int, prefix: str,
                    task_id: str = "t0") -> List[MoleculeRecord]:
    return [
        feature_record(f"{prefix}{i}", rng.standard_normal(d), int(y), task_id)
        for i, y in enumerate(labels)
    ]


def make_task(task_id: str, n_pos: int, n_neg: int, d: int = 4, seed: int = 0) -> Task:
    rng = np.random.default_rng(seed)
    labels = [1] * n_pos + [-1] * n_neg
    return Task(task_id=task_id, records=labeled_records(rng, labels, d, f"{task_id}-", task_id))


@pytest.fixture
def golden_fingerprints() -> dict:
    return json.loads((GOLDEN_DIR / "fingerprints.json").read_text(encoding="utf-8"))


@pytest.fixture
def model_config():
    """Fábrica de configs chicos (d=5, h=4, H=2) para pruebas rápidas."""

    def build(variant: Variant = Variant.FULL, **overrides) -> ModelConfig:
        doc = dict(d=5, h=4, heads=2, encoder=EncoderConfig(hidden=[6]), reference_size=3, variant=variant)
        doc.update(overrides)
        return ModelConfig(**doc)

    return build


@pytest.fixture
def episode_factory():
    """Episodios aleatorios con features crudos; ambas clases en soporte y consulta."""

    def build(seed: int = 0, n_support: int = 4, n_query: int = 3, n_reference: int = 3, d: int = 5) -> Episode:
        rng = np.random.default_rng(seed)
        support_labels = [1, -1] + [int(rng.choice([-1, 1])) for _ in range(n_support - 2)]
        query_labels = [1, -1][:n_query] + [int(rng.choice([-1, 1])) for _ in range(max(n_query - 2, 0))]
        return Episode(
            task_id="t0",
            support=labeled_records(rng, support_labels, d, "s"),
            query=labeled_records(rng, query_labels, d, "q"),
            reference=[feature_record(f"r{i}", rng.standard_normal(d)) for i in range(n_reference)],
        )

    return build


@pytest.fixture
def small_synth() -> SynthConfig:
    return SynthConfig(
        dim=6, task_count=6, separation=3.0, bias=0.5, prevalence=0.4, pool_size=64,
        support_pool_size=12, query_pool_size=12,
    )


@pytest.fixture(autouse=True)
def _fresh_settings(monkeypatch):
    """Cada prueba ve Settings recién leídos del entorno."""
    for name in ("CRA_SEED", "CRA_CHECKPOINT", "CRA_REFERENCE_POOL", "CRA_NORM_STATS", "CRA_WORKERS"):
        monkeypatch.delenv(name, raising=False)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()
