# app/services/cra_model.py

"""
Red CRA: encoder compartido, atención multi-cabeza residual, aumento por
contexto (CAM), aumento por anclas (AAM), matching por coseno y pérdida BCE.

Parámetros (`CraParams`): diccionario ordenado nombre -> Tensor con nombres
deterministas, p.ej.

    encoder.0.weight, encoder.0.bias, ...      (MLP)
    encoder.gin0.weight, encoder.gin0.bias     (GIN)
    cam.head0.wq, cam.head0.wk, cam.head0.wv, cam.head0.wo, ...
    aam.head0.wq, ...

Convención de filas de anclas en todo el módulo: fila 0 = clase -1, fila 1 = clase +1.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core import ndiff
from app.core.errors import EncoderInputMismatch, InvalidConfig, MissingClass, ShapeMismatch
from app.core.logging import log_structured
from app.core.ndiff import Tensor
from app.core.rng import make_rng
from app.schemas.episodes import Episode, MoleculeRecord
from app.schemas.model import ModelConfig, Variant
from app.services.featurize_service import ATOM_FEATURE_DIM, atom_features

logger = logging.getLogger(__name__)

CraParams = Dict[str, Tensor]

PROB_EPS = 1e-12
_MASKED = -1e30
_HEAD_MATRICES = ("wq", "wk", "wv", "wo")


# ============================================================================
# INICIALIZACIÓN
# ============================================================================

def _uniform(rng: np.random.Generator, fan_in: int, shape: Tuple[int, int]) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def encoder_input_dim(config: ModelConfig) -> int:
    if config.encoder.kind == "gin":
        return ATOM_FEATURE_DIM
    if config.d is None:
        raise InvalidConfig("model.d must be set (or inferred from the data) before building an MLP encoder")
    return config.d


def encoder_widths(config: ModelConfig) -> List[int]:
    """Anchos de entrada/salida de cada capa del encoder."""
    if config.encoder.kind == "gin":
        return [ATOM_FEATURE_DIM] + [config.h] * config.encoder.gin_layers
    return [encoder_input_dim(config)] + list(config.encoder.hidden) + [config.h]


def aam_width(config: ModelConfig, variant: Optional[Variant] = None) -> int:
    variant = variant or config.variant
    return config.h if variant is Variant.AM else 3 * config.h


def param_shapes(config: ModelConfig) -> Dict[str, Tuple[int, int]]:
    """Nombres y formas de todos los parámetros, en orden de serialización."""
    shapes: Dict[str, Tuple[int, int]] = {}
    widths = encoder_widths(config)
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        layer = f"gin{i}" if config.encoder.kind == "gin" else str(i)
        shapes[f"encoder.{layer}.weight"] = (fan_in, fan_out)
        shapes[f"encoder.{layer}.bias"] = (1, fan_out)

    blocks: List[Tuple[str, int]] = []
    if config.variant is Variant.FULL:
        blocks.append(("cam", config.h))
    if config.variant is not Variant.ENCODER_ONLY:
        blocks.append(("aam", aam_width(config)))
    for block, width in blocks:
        d_k = config.d_k or width
        for head in range(config.heads):
            shapes[f"{block}.head{head}.wq"] = (width, d_k)
            shapes[f"{block}.head{head}.wk"] = (width, d_k)
            shapes[f"{block}.head{head}.wv"] = (width, d_k)
            shapes[f"{block}.head{head}.wo"] = (d_k, width)
    return shapes


def init_params(config: ModelConfig, seed: Optional[int] = None) -> CraParams:
    """
    uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) para matrices, sesgos en cero.

    Cada bloque (encoder, cam, aam) tiene su propio stream: con la misma semilla,
    las variantes comparten exactamente los pesos de los bloques que tienen en común.
    """
    base = config.seed if seed is None else seed
    streams: Dict[str, np.random.Generator] = {}
    params: CraParams = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".bias"):
            value = np.zeros(shape)
        else:
            block = name.split(".", 1)[0]
            if block not in streams:
                streams[block] = make_rng(base, "init", block)
            value = _uniform(streams[block], shape[0], shape)
        params[name] = ndiff.parameter(value, name=name)
    log_structured(
        logger, "debug", "model.init",
        variant=config.variant.value, tensors=len(params),
        values=sum(p.value.size for p in params.values()),
    )
    return params


def copy_params(params: CraParams) -> CraParams:
    return {name: ndiff.parameter(p.value.copy(), name=name) for name, p in params.items()}


def _activation(name: str):
    return ndiff.relu if name == "relu" else ndiff.tanh


# ============================================================================
# ATENCIÓN
# ============================================================================

@dataclass
class AttentionWeights:
    """Pesos softmax por cabeza (n1×n2) de un bloque de atención."""
    block: str
    heads: List[np.ndarray] = field(default_factory=list)

    def mean(self) -> np.ndarray:
        return np.mean(self.heads, axis=0)


def block_heads(params: CraParams, block: str) -> int:
    count = 0
    while f"{block}.head{count}.wq" in params:
        count += 1
    return count


def mha(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    params: CraParams,
    block: str,
    mask: Optional[np.ndarray] = None,
    return_weights: bool = False,
):
    """
    sum_i softmax(Q Wq_i (K Wk_i)^T / sqrt(d_k)) · V Wv_i · Wo_i

    Proyección de salida por cabeza y luego suma (no concatenación).
    `mask` (n1×n2, bool) marca con True los pares permitidos.
    """
    heads = block_heads(params, block)
    if heads == 0:
        raise InvalidConfig(f"no attention parameters for block {block!r}")
    width = params[f"{block}.head0.wq"].rows
    for name, t in (("query", q), ("key", k), ("value", v)):
        if t.cols != width:
            raise ShapeMismatch(f"mha[{block}].{name}", t.shape, f"(*, {width})")
    if k.rows != v.rows:
        raise ShapeMismatch(f"mha[{block}]", (k.shape, v.shape), "keys and values with equal row count")
    bias = None
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (q.rows, k.rows):
            raise ShapeMismatch(f"mha[{block}].mask", mask.shape, (q.rows, k.rows))
        bias = Tensor(np.where(mask, 0.0, _MASKED))

    weights = AttentionWeights(block=block)
    out = None
    for i in range(heads):
        wq, wk, wv, wo = (params[f"{block}.head{i}.{m}"] for m in _HEAD_MATRICES)
        d_k = wq.cols
        scores = ndiff.scale((q @ wq) @ ndiff.transpose(k @ wk), 1.0 / math.sqrt(d_k))
        if bias is not None:
            scores = scores + bias
        attn = ndiff.softmax_rows(scores)
        if return_weights:
            weights.heads.append(attn.value.copy())
        head_out = attn @ (v @ wv) @ wo
        out = head_out if out is None else out + head_out
    if return_weights:
        return out, weights
    return out


def r_mha(x: Tensor, params: CraParams, block: str, mask: Optional[np.ndarray] = None,
          return_weights: bool = False):
    """X + MHA(X, X, X)"""
    res = mha(x, x, x, params, block, mask=mask, return_weights=return_weights)
    if return_weights:
        out, weights = res
        return x + out, weights
    return x + res


# ============================================================================
# ENCODER
# ============================================================================

def _feature_matrix(records: Sequence[MoleculeRecord], d: int) -> np.ndarray:
    rows = []
    for r in records:
        if r.features is None:
            raise EncoderInputMismatch(f"record {r.id!r} has no feature vector")
        if r.features.dim != d:
            raise EncoderInputMismatch(f"record {r.id!r} has {r.features.dim} features, model expects {d}")
        rows.append(r.features.combined)
    return np.vstack(rows)


def encode_features(x, params: CraParams, config: ModelConfig) -> Tensor:
    """MLP: afín -> activación ... -> afín (sin activación final)."""
    x = ndiff.as_tensor(x)
    act = _activation(config.encoder.activation)
    layers = len(encoder_widths(config)) - 1
    if x.cols != params["encoder.0.weight"].rows:
        raise ShapeMismatch("encode", x.shape, f"(*, {params['encoder.0.weight'].rows})")
    for i in range(layers):
        x = x @ params[f"encoder.{i}.weight"] + params[f"encoder.{i}.bias"]
        if i < layers - 1:
            x = act(x)
    return x


@dataclass
class GraphBatch:
    """Átomos de un lote de moléculas y sus aristas en coordenadas (dst, src, peso)."""
    nodes: np.ndarray        # total_atoms × ATOM_FEATURE_DIM
    dst: np.ndarray
    src: np.ndarray
    weights: np.ndarray      # (1+eps) en los lazos, 1 por vecino
    molecule: np.ndarray     # índice de molécula de cada átomo
    molecules: int


def _graph_batch(records: Sequence[MoleculeRecord], eps: float) -> GraphBatch:
    """(1+eps)I + A como lista de aristas; memoria lineal en átomos y enlaces."""
    graphs = []
    for r in records:
        if r.graph is None:
            raise EncoderInputMismatch(f"record {r.id!r} has no molecular graph (GIN encoder needs SMILES input)")
        graphs.append(r.graph)
    nodes: List[np.ndarray] = []
    dst: List[int] = []
    src: List[int] = []
    weights: List[float] = []
    molecule: List[int] = []
    offset = 0
    for m, g in enumerate(graphs):
        adj = g.adjacency()
        for i, atom in enumerate(g.atoms):
            nodes.append(atom_features(atom, len(adj[i])))
            molecule.append(m)
            dst.append(offset + i)
            src.append(offset + i)
            weights.append(1.0 + eps)
            for j, _ in adj[i]:
                dst.append(offset + i)
                src.append(offset + j)
                weights.append(1.0)
        offset += len(g.atoms)
    return GraphBatch(
        nodes=np.vstack(nodes) if nodes else np.zeros((0, ATOM_FEATURE_DIM)),
        dst=np.asarray(dst, dtype=np.int64), src=np.asarray(src, dtype=np.int64),
        weights=np.asarray(weights), molecule=np.asarray(molecule, dtype=np.int64), molecules=len(graphs),
    )


def encode_graphs(records: Sequence[MoleculeRecord], params: CraParams, config: ModelConfig) -> Tensor:
    """GIN: x_v <- MLP((1+eps)·x_v + sum_u x_u) por capa, luego suma por molécula."""
    batch = _graph_batch(records, config.encoder.gin_eps)
    act = _activation(config.encoder.activation)
    total = batch.nodes.shape[0]
    x = Tensor(batch.nodes)
    layers = config.encoder.gin_layers
    for i in range(layers):
        x = ndiff.scatter_add_rows(x, batch.dst, batch.src, batch.weights, total)
        x = x @ params[f"encoder.gin{i}.weight"] + params[f"encoder.gin{i}.bias"]
        if i < layers - 1:
            x = act(x)
    atoms = np.arange(total)
    return ndiff.scatter_add_rows(x, batch.molecule, atoms, np.ones(total), batch.molecules)


def encode(records: Sequence[MoleculeRecord], params: CraParams, config: ModelConfig) -> Tensor:
    """f_e aplicado a un lote de registros -> n×h"""
    if not records:
        raise ShapeMismatch("encode", (0,), "at least one record")
    if config.encoder.kind == "gin":
        return encode_graphs(records, params, config)
    return encode_features(_feature_matrix(records, params["encoder.0.weight"].rows), params, config)


# ============================================================================
# ANCLAS Y AUMENTOS
# ============================================================================

def initial_anchors(support_emb: Tensor, labels: Sequence[int]) -> Tensor:
    """P (2×h): media de los embeddings de soporte por clase, filas (-1, +1)."""
    y = np.asarray(labels)
    if y.shape[0] != support_emb.rows:
        raise ShapeMismatch("initial_anchors", y.shape, f"({support_emb.rows},)")
    rows = []
    for c in (-1, 1):
        mask = y == c
        if not mask.any():
            raise MissingClass(c)
        rows.append(ndiff.mean_rows_masked(support_emb, mask))
    return ndiff.concat_rows(*rows)


def context_augment(anchors: Tensor, reference_emb: Tensor, params: CraParams,
                    return_weights: bool = False):
    """
    P' = primeras 2 filas de R-MHA([P : B']).

    Las M filas finales (B*) no se usan, así que sólo se evalúan las consultas
    de las anclas: P + MHA(P, X, X) con X = [P : B'] da exactamente esas filas.
    """
    if anchors.rows != 2:
        raise ShapeMismatch("context_augment", anchors.shape, "(2, h)")
    if reference_emb.rows < 1:
        raise ShapeMismatch("context_augment", reference_emb.shape, "(M >= 1, h)")
    x = ndiff.concat_rows(anchors, reference_emb)
    res = mha(anchors, x, x, params, "cam", return_weights=return_weights)
    if return_weights:
        out, weights = res
        return anchors + out, weights
    return anchors + res


def query_block_mask(n_support: int, n_query: int) -> np.ndarray:
    """Permite todo salvo consulta -> otra consulta (cada consulta se ve a sí misma)."""
    n = n_support + n_query
    mask = np.ones((n, n), dtype=bool)
    mask[n_support:, n_support:] = np.eye(n_query, dtype=bool)
    return mask


def anchor_augment(
    support_emb: Tensor,
    query_emb: Tensor,
    anchors: Optional[Tensor],
    params: CraParams,
    block_query_attention: bool = False,
    return_weights: bool = False,
):
    """
    S'' = [S' ∥ P'_-1 ∥ P'_+1], Q'' = [Q' ∥ P'_-1 ∥ P'_+1]; R-MHA sobre [S'' : Q''];
    S*, Q* son las primeras h columnas.

    Con anchors=None (variante am) la atención corre sobre [S' : Q'] de ancho h.
    """
    h = support_emb.cols
    if query_emb.cols != h:
        raise ShapeMismatch("anchor_augment", query_emb.shape, f"(*, {h})")
    n_s, n_q = support_emb.rows, query_emb.rows
    if anchors is not None:
        if anchors.shape != (2, h):
            raise ShapeMismatch("anchor_augment", anchors.shape, (2, h))
        neg = ndiff.slice_rows(anchors, 0, 1)
        pos = ndiff.slice_rows(anchors, 1, 2)
        s_in = ndiff.concat_cols(support_emb, ndiff.tile_rows(neg, n_s), ndiff.tile_rows(pos, n_s))
        q_in = ndiff.concat_cols(query_emb, ndiff.tile_rows(neg, n_q), ndiff.tile_rows(pos, n_q))
    else:
        s_in, q_in = support_emb, query_emb
    x = ndiff.concat_rows(s_in, q_in)
    mask = query_block_mask(n_s, n_q) if block_query_attention else None
    res = r_mha(x, params, "aam", mask=mask, return_weights=return_weights)
    out, weights = res if return_weights else (res, None)
    if out.cols != h:
        out = ndiff.slice_cols(out, 0, h)
    s_star = ndiff.slice_rows(out, 0, n_s)
    q_star = ndiff.slice_rows(out, n_s, n_s + n_q)
    if return_weights:
        return s_star, q_star, weights
    return s_star, q_star


# ============================================================================
# MATCHING Y PÉRDIDA
# ============================================================================

def label_weights(labels: Sequence[int]) -> np.ndarray:
    """y_i / N^s(y_i) como columna N^s×1."""
    y = np.asarray(labels, dtype=np.float64)
    counts = {c: int((y == c).sum()) for c in (-1, 1)}
    for c, n in counts.items():
        if n == 0:
            raise MissingClass(c)
    return np.array([v / counts[int(v)] for v in y]).reshape(-1, 1)


def match_predict(query_star: Tensor, support_star: Tensor, labels: Sequence[int],
                  matching_scale: str = "sqrt2h") -> Tensor:
    """
    p_j = sigmoid(scale · sum_i (y_i / N^s(y_i)) · cos(q*_j, s*_i)), columna N^q×1.

    Filas de norma cero dan coseno 0; se cuentan y se registran.
    """
    if query_star.cols != support_star.cols:
        raise ShapeMismatch("match_predict", query_star.shape, f"(*, {support_star.cols})")
    if len(labels) != support_star.rows:
        raise ShapeMismatch("match_predict", (len(labels),), f"({support_star.rows},)")
    w = label_weights(labels)
    zero_rows = int((np.linalg.norm(query_star.value, axis=1) <= PROB_EPS).sum()
                    + (np.linalg.norm(support_star.value, axis=1) <= PROB_EPS).sum())
    if zero_rows:
        log_structured(logger, "warning", "model.zero_vector", rows=zero_rows)
    cos = ndiff.l2_normalize_rows(query_star) @ ndiff.transpose(ndiff.l2_normalize_rows(support_star))
    logits = cos @ Tensor(w)
    if matching_scale == "sqrt2h":
        logits = ndiff.scale(logits, 1.0 / math.sqrt(2 * support_star.cols))
    return ndiff.sigmoid(logits)


def bce_loss(probs: Tensor, labels: Sequence[int]) -> Tensor:
    """-(1/N^q) sum_j [y=+1]·log p + [y=-1]·log(1-p), con p recortado a [1e-12, 1-1e-12]."""
    y = np.asarray(labels).reshape(-1, 1)
    if y.shape != probs.shape:
        raise ShapeMismatch("bce_loss", probs.shape, y.shape)
    pos = (y == 1).astype(np.float64)
    p = ndiff.clamp(probs, PROB_EPS, 1.0 - PROB_EPS)
    terms = ndiff.mul(ndiff.log(p), Tensor(pos)) + ndiff.mul(ndiff.log(1.0 - p), Tensor(1.0 - pos))
    return ndiff.scale(ndiff.sum_all(terms), -1.0 / probs.rows)


# ============================================================================
# EPISODIO COMPLETO
# ============================================================================

@dataclass
class EpisodeTrace:
    """Intermedios de un forward (visualización y exportación de atención)."""
    probs: Tensor
    support_emb: Tensor
    query_emb: Tensor
    support_star: Tensor
    query_star: Tensor
    anchors: Tensor
    augmented_anchors: Tensor
    reference_emb: Optional[Tensor] = None
    attention: Dict[str, AttentionWeights] = field(default_factory=dict)

    def probabilities(self) -> np.ndarray:
        return self.probs.value[:, 0].copy()


def forward_trace(
    episode: Episode,
    params: CraParams,
    config: ModelConfig,
    variant: Optional[Variant] = None,
    return_weights: bool = False,
) -> EpisodeTrace:
    """
    encode -> initial_anchors -> context_augment -> anchor_augment -> match_predict.

    `variant` selecciona la ruta de ablación (por defecto la del config).
    """
    variant = variant or config.variant
    if variant.uses_reference and not episode.reference:
        raise ShapeMismatch("forward_episode", (0,), "at least one reference molecule")
    labels = episode.support_labels()
    n_s, n_q = len(episode.support), len(episode.query)
    # S', Q' no dependen de B: mismo lote en todas las variantes
    emb = encode(list(episode.support) + list(episode.query), params, config)
    s_emb = ndiff.slice_rows(emb, 0, n_s)
    q_emb = ndiff.slice_rows(emb, n_s, n_s + n_q)

    anchors = initial_anchors(s_emb, labels)
    augmented = anchors
    attention: Dict[str, AttentionWeights] = {}
    s_star, q_star = s_emb, q_emb
    refs = None

    if variant is Variant.FULL:
        refs = encode(episode.reference, params, config)
        res = context_augment(anchors, refs, params, return_weights=return_weights)
        if return_weights:
            augmented, attention["cam"] = res
        else:
            augmented = res
    if variant is not Variant.ENCODER_ONLY:
        res = anchor_augment(
            s_emb, q_emb,
            None if variant is Variant.AM else augmented,
            params,
            block_query_attention=config.aam_block_query_attention,
            return_weights=return_weights,
        )
        if return_weights:
            s_star, q_star, attention["aam"] = res
        else:
            s_star, q_star = res

    probs = match_predict(q_star, s_star, labels, config.matching_scale)
    return EpisodeTrace(
        probs=probs, support_emb=s_emb, query_emb=q_emb,
        support_star=s_star, query_star=q_star,
        anchors=anchors, augmented_anchors=augmented, reference_emb=refs, attention=attention,
    )


def forward_episode(episode: Episode, params: CraParams, config: ModelConfig,
                    variant: Optional[Variant] = None) -> Tensor:
    """Probabilidades p(y=+1) por consulta, columna N^q×1."""
    return forward_trace(episode, params, config, variant).probs


def predict(episode: Episode, params: CraParams, config: ModelConfig,
            variant: Optional[Variant] = None) -> np.ndarray:
    """Forward fuera de la cinta; vector de probabilidades."""
    return forward_episode(episode, params, config, variant).value[:, 0].copy()
