# app/services/predict_service.py

"""
Puntaje de episodios few-shot para la superficie HTTP.

El checkpoint, las NormStats y el pool de referencia se cargan una sola vez
por proceso (rutas tomadas de Settings).
"""

import logging
from functools import lru_cache
from pathlib import Path
from typing import List, Optional, Tuple

from app.core.config import get_settings
from app.core.errors import EmptyReferencePool, MissingClass, MissingPath, PoolTooSmall
from app.core.logging import log_structured
from app.core.rng import make_rng
from app.schemas.episodes import Episode, MoleculeRecord
from app.schemas.features import FeatureVector, NormStats
from app.schemas.model import ModelConfig
from app.schemas.predict import MoleculeInput, PredictRequest, PredictResponse, QueryPrediction
from app.services import cra_model
from app.services.checkpoint_service import load_checkpoint
from app.services.cra_model import CraParams
from app.services.episode_service import load_pool, sample_reference
from app.services.featurize_service import apply_normalize, featurize_records, read_norm_stats

logger = logging.getLogger(__name__)


@lru_cache()
def _load_model(checkpoint: str) -> Tuple[ModelConfig, CraParams]:
    return load_checkpoint(checkpoint)


@lru_cache()
def _load_stats(path: str) -> Optional[NormStats]:
    if not Path(path).exists():
        return None
    return read_norm_stats(path)


@lru_cache()
def _load_reference(path: str, stats_path: str) -> List[MoleculeRecord]:
    pool = load_pool(path)
    _prepare(pool, _load_stats(stats_path), stats_path)
    return pool


def _prepare(records: List[MoleculeRecord], stats: Optional[NormStats], stats_path: str) -> None:
    """Featuriza los SMILES y normaliza sus descriptores con las NormStats del entrenamiento."""
    featurize_records(records)
    pending = [r for r in records if not r.features.normalized]
    if pending and stats is None:
        log_structured(logger, "warning", "serve.norm_stats_missing", path=stats_path, molecules=len(pending))
        raise MissingPath("CRA_NORM_STATS", f"{stats_path} not found; SMILES inputs need the training NormStats")
    for r in pending:
        r.features = apply_normalize(r.features, stats)


def _record(item: MoleculeInput, fallback_id: str, label: Optional[int] = None) -> MoleculeRecord:
    features = FeatureVector.from_raw(item.features) if item.features is not None else None
    return MoleculeRecord(
        id=item.id or fallback_id, smiles=item.smiles, features=features,
        label=None if label is None else (1 if label == 1 else -1),
        task_id=None if label is None else "request",
    )


class PredictService:
    def __init__(self):
        settings = get_settings()
        if not settings.CHECKPOINT:
            raise MissingPath("CRA_CHECKPOINT", "the HTTP surface needs a trained checkpoint")
        self.checkpoint = settings.CHECKPOINT
        self.stats_path = settings.NORM_STATS or str(Path(settings.CHECKPOINT).parent / "norm_stats.json")
        self.reference_pool = settings.REFERENCE_POOL
        self.config, self.params = _load_model(self.checkpoint)

    def _reference(self, seed: int) -> List[MoleculeRecord]:
        if not self.config.variant.uses_reference:
            return []
        if not self.reference_pool:
            raise EmptyReferencePool("the full variant needs CRA_REFERENCE_POOL to be set")
        pool = _load_reference(self.reference_pool, self.stats_path)
        if len(pool) < self.config.reference_size:
            raise PoolTooSmall(len(pool), self.config.reference_size)
        return sample_reference(pool, self.config.reference_size, make_rng(seed, "serve"))

    def predict(self, request: PredictRequest) -> PredictResponse:
        support = [_record(m, f"support-{i}", m.label) for i, m in enumerate(request.support)]
        query = [_record(m, f"query-{i}") for i, m in enumerate(request.query)]
        present = {r.label for r in support}
        for c in (-1, 1):
            if c not in present:
                raise MissingClass(c)
        _prepare(support + query, _load_stats(self.stats_path), self.stats_path)
        episode = Episode(task_id="request", support=support, query=query,
                          reference=self._reference(request.seed))
        probs = cra_model.predict(episode, self.params, self.config)
        log_structured(logger, "info", "serve.predict", support=len(support), query=len(query),
                       variant=self.config.variant.value)
        return PredictResponse(
            variant=self.config.variant.value,
            reference_size=len(episode.reference),
            predictions=[QueryPrediction(id=r.id, probability=float(p)) for r, p in zip(query, probs)],
        )

    def health(self) -> dict:
        return {"status": "ok", "model_loaded": True, "variant": self.config.variant.value}
