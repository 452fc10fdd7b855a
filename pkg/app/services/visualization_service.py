# app/services/visualization_service.py

"""
Datos para figuras (sólo CSV, sin gráficos):

- embed: embeddings antes y después de los aumentos, más las anclas, en 2-D por PCA.
- attn: pesos de atención del AAM entre pares de moléculas de soporte junto a su
  similitud Tanimoto.
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from app.core import ndiff
from app.core.errors import InvalidConfig
from app.core.logging import log_structured
from app.schemas.episodes import Episode, MoleculeRecord
from app.schemas.model import ModelConfig, Variant
from app.services import cra_model
from app.services.cra_model import CraParams
from app.services.featurize_service import circular_fingerprint, tanimoto
from app.services.metrics_service import pca_2d
from app.services.smiles_service import parse_smiles

logger = logging.getLogger(__name__)

EMBED_COLUMNS = ("id", "pc1", "pc2", "role", "label", "stage")


@dataclass
class EmbedRow:
    id: str
    pc1: float
    pc2: float
    role: str
    label: Optional[int]
    stage: str


def _stage_rows(stage: str, ids: List[str], roles: List[str], labels: List[Optional[int]],
                matrix: np.ndarray) -> List[EmbedRow]:
    coords = pca_2d(matrix).coords
    return [
        EmbedRow(id=i, pc1=float(c[0]), pc2=float(c[1]), role=role, label=y, stage=stage)
        for i, role, y, c in zip(ids, roles, labels, coords)
    ]


def embed_episode(episode: Episode, params: CraParams, config: ModelConfig) -> List[EmbedRow]:
    """
    Filas 'pre' (S', Q', B', P) y 'post' (S*, Q*, B*, P'); PCA ajustado por etapa.

    B* es la salida auxiliar de la atención de contexto para las referencias; sin
    CAM las referencias se repiten tal cual.
    """
    trace = cra_model.forward_trace(episode, params, config)
    refs = trace.reference_emb
    refs_post = None
    if refs is not None:
        refs_post = cra_model.r_mha(ndiff.concat_rows(trace.anchors, refs), params, "cam").value[2:]
    elif episode.reference:
        refs = cra_model.encode(episode.reference, params, config)
        refs_post = refs.value

    ids = [r.id for r in episode.support] + [r.id for r in episode.query]
    roles = ["support"] * len(episode.support) + ["query"] * len(episode.query)
    labels: List[Optional[int]] = episode.support_labels() + episode.query_labels()
    pre = [trace.support_emb.value, trace.query_emb.value]
    post = [trace.support_star.value, trace.query_star.value]
    if refs is not None:
        ids += [r.id for r in episode.reference]
        roles += ["reference"] * len(episode.reference)
        labels += [None] * len(episode.reference)
        pre.append(refs.value)
        post.append(refs_post)
    ids += ["anchor-neg", "anchor-pos"]
    roles += ["anchor", "anchor"]
    labels += [-1, 1]
    pre.append(trace.anchors.value)
    post.append(trace.augmented_anchors.value)

    rows = _stage_rows("pre", ids, roles, labels, np.vstack(pre))
    rows += _stage_rows("post", ids, roles, labels, np.vstack(post))
    log_structured(logger, "info", "embed.exported", task_id=episode.task_id, rows=len(rows))
    return rows


def write_embed_csv(path: str | Path, rows: Sequence[EmbedRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(EMBED_COLUMNS)
        for r in rows:
            writer.writerow([r.id, repr(r.pc1), repr(r.pc2), r.role, "" if r.label is None else r.label, r.stage])


# ============================================================================
# ATENCIÓN VS TANIMOTO
# ============================================================================

@dataclass
class AttentionExport:
    ids: List[str]
    heads: List[np.ndarray]   # N^s×N^s por cabeza, filas renormalizadas
    mean: np.ndarray
    tanimoto: np.ndarray


def support_attention(episode: Episode, params: CraParams, config: ModelConfig) -> List[np.ndarray]:
    """
    Sub-bloque soporte->soporte de la atención del AAM, por cabeza.

    Cada fila se renormaliza para sumar 1 sobre las moléculas de soporte.
    """
    if config.variant is Variant.ENCODER_ONLY:
        raise InvalidConfig("the encoder-only variant has no anchor-augmentation attention to export")
    trace = cra_model.forward_trace(episode, params, config, return_weights=True)
    n_s = len(episode.support)
    heads = []
    for w in trace.attention["aam"].heads:
        block = w[:n_s, :n_s]
        heads.append(block / block.sum(axis=1, keepdims=True))
    return heads


def _bits(record: MoleculeRecord) -> np.ndarray:
    if record.features is not None and record.features.bits.size:
        return record.features.bits
    if record.smiles is None:
        raise InvalidConfig(f"record {record.id!r} has no SMILES; Tanimoto similarity needs fingerprints")
    graph = record.graph or parse_smiles(record.smiles)
    return circular_fingerprint(graph)


def tanimoto_matrix(records: Sequence[MoleculeRecord]) -> np.ndarray:
    bits = [_bits(r) for r in records]
    n = len(bits)
    out = np.ones((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = tanimoto(bits[i], bits[j])
    return out


def attention_export(episode: Episode, params: CraParams, config: ModelConfig) -> AttentionExport:
    sims = tanimoto_matrix(episode.support)
    heads = support_attention(episode, params, config)
    return AttentionExport(
        ids=[r.id for r in episode.support], heads=heads, mean=np.mean(heads, axis=0), tanimoto=sims,
    )


def write_matrix_csv(path: str | Path, ids: Sequence[str], matrix: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["id"] + list(ids))
        for i, row in zip(ids, matrix):
            writer.writerow([i] + [repr(float(v)) for v in row])


def write_attention(out_dir: str | Path, export: AttentionExport) -> List[Path]:
    out_dir = Path(out_dir)
    paths = []
    for h, matrix in enumerate(export.heads):
        paths.append(out_dir / f"attn_head{h}.csv")
        write_matrix_csv(paths[-1], export.ids, matrix)
    paths.append(out_dir / "attn_mean.csv")
    write_matrix_csv(paths[-1], export.ids, export.mean)
    paths.append(out_dir / "tanimoto.csv")
    write_matrix_csv(paths[-1], export.ids, export.tanimoto)
    return paths
