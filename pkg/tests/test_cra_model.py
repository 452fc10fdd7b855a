import math

import numpy as np
import pytest

from app.core import ndiff
from app.core.errors import EncoderInputMismatch, MissingClass
from app.schemas.episodes import MoleculeRecord
from app.schemas.model import EncoderConfig, ModelConfig, Variant
from app.services import cra_model
from app.services.featurize_service import atom_features
from app.services.smiles_service import parse_smiles

SIGMOID_ONE = 0.7310585786


def _sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def _softmax(scores):
    e = np.exp(scores - scores.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _block(name, mats_per_head):
    """Parámetros de atención a mano: lista de (wq, wk, wv, wo) por cabeza."""
    params = {}
    for i, mats in enumerate(mats_per_head):
        for key, m in zip(("wq", "wk", "wv", "wo"), mats):
            params[f"{name}.head{i}.{key}"] = ndiff.parameter(np.asarray(m, dtype=float))
    return params


def _identity_block(name, width, heads=1):
    eye = np.eye(width)
    return _block(name, [(eye, eye, eye, eye)] * heads)


def _zero_values(params, block=None):
    for name, p in params.items():
        if name.endswith(".wv") and (block is None or name.startswith(block)):
            p.value[...] = 0.0
    return params


# ============================================================================
# PARÁMETROS
# ============================================================================

def test_param_shapes_per_variant(model_config):
    full = cra_model.param_shapes(model_config(Variant.FULL))
    assert full["encoder.0.weight"] == (5, 6)
    assert full["encoder.1.weight"] == (6, 4)
    assert full["cam.head1.wo"] == (4, 4)
    assert full["aam.head0.wq"] == (12, 12)

    aam = cra_model.param_shapes(model_config(Variant.AAM))
    assert not any(n.startswith("cam.") for n in aam)
    assert aam["aam.head0.wv"] == (12, 12)

    am = cra_model.param_shapes(model_config(Variant.AM))
    assert am["aam.head0.wq"] == (4, 4)

    encoder_only = cra_model.param_shapes(model_config(Variant.ENCODER_ONLY))
    assert all(n.startswith("encoder.") for n in encoder_only)

    narrow = cra_model.param_shapes(model_config(Variant.FULL, d_k=2))
    assert narrow["cam.head0.wq"] == (4, 2)
    assert narrow["aam.head0.wo"] == (2, 12)


def test_encoder_init_shared_across_variants(model_config):
    reference = cra_model.init_params(model_config(Variant.FULL), seed=3)
    for variant in (Variant.ENCODER_ONLY, Variant.AM, Variant.AAM):
        params = cra_model.init_params(model_config(variant), seed=3)
        for name, p in params.items():
            if name.startswith("encoder."):
                np.testing.assert_array_equal(p.value, reference[name].value)


def test_anchor_block_init_shared_between_aam_and_full(model_config):
    full = cra_model.init_params(model_config(Variant.FULL), seed=3)
    aam = cra_model.init_params(model_config(Variant.AAM), seed=3)
    assert [n for n in aam if n.startswith("aam.")] == [n for n in full if n.startswith("aam.")]
    for name, p in aam.items():
        np.testing.assert_array_equal(p.value, full[name].value)
    assert any(n.startswith("cam.") for n in full)


def test_init_biases_zero_and_weights_bounded(model_config):
    params = cra_model.init_params(model_config(), seed=0)
    assert not params["encoder.0.bias"].value.any()
    assert np.abs(params["encoder.0.weight"].value).max() <= 1 / math.sqrt(5)


# ============================================================================
# ATENCIÓN
# ============================================================================

def test_mha_single_key_passes_values_through():
    rng = np.random.default_rng(0)
    mats = [tuple(rng.standard_normal((2, 2)) for _ in range(4)) for _ in range(2)]
    params = _block("blk", mats)
    q = ndiff.Tensor(rng.standard_normal((3, 2)))
    kv = ndiff.Tensor(rng.standard_normal((1, 2)))
    out = cra_model.mha(q, kv, kv, params, "blk").value
    expected = sum(kv.value @ wv @ wo for _, _, wv, wo in mats)
    np.testing.assert_allclose(out, np.repeat(expected, 3, axis=0), rtol=1e-12)


def test_mha_zero_output_projection():
    rng = np.random.default_rng(1)
    eye = np.eye(3)
    params = _block("blk", [(eye, eye, eye, np.zeros((3, 3)))])
    x = ndiff.Tensor(rng.standard_normal((4, 3)))
    assert not cra_model.mha(x, x, x, params, "blk").value.any()


def test_mha_hand_evaluated_two_by_two():
    params = _identity_block("blk", 2)
    q = ndiff.Tensor(np.eye(2))
    v = ndiff.Tensor([[1.0, 2.0], [3.0, 4.0]])
    out = cra_model.mha(q, q, v, params, "blk").value
    w = _sigmoid(1 / math.sqrt(2))
    expected = np.array([
        [w * 1 + (1 - w) * 3, w * 2 + (1 - w) * 4],
        [(1 - w) * 1 + w * 3, (1 - w) * 2 + w * 4],
    ])
    np.testing.assert_allclose(out, expected, rtol=1e-12)


def test_mha_mask_blocks_pairs():
    mask = cra_model.query_block_mask(2, 2)
    assert mask.tolist() == [
        [True, True, True, True],
        [True, True, True, True],
        [True, True, True, False],
        [True, True, False, True],
    ]
    x = ndiff.Tensor(np.random.default_rng(2).standard_normal((4, 3)))
    _, weights = cra_model.mha(x, x, x, _identity_block("blk", 3, heads=2), "blk", mask=mask,
                               return_weights=True)
    for w in weights.heads:
        assert w[2, 3] == 0.0 and w[3, 2] == 0.0
        np.testing.assert_allclose(w.sum(axis=1), np.ones(4), atol=1e-12)


def test_r_mha_residual_identity_and_shape():
    rng = np.random.default_rng(3)
    mats = [tuple(rng.standard_normal((4, 4)) for _ in range(4)) for _ in range(2)]
    params = _block("blk", mats)
    x = ndiff.Tensor(rng.standard_normal((5, 4)))
    assert cra_model.r_mha(x, params, "blk").shape == (5, 4)
    _zero_values(params)
    np.testing.assert_array_equal(cra_model.r_mha(x, params, "blk").value, x.value)


def test_r_mha_row_permutation_equivariance():
    rng = np.random.default_rng(4)
    params = _block("blk", [tuple(rng.standard_normal((3, 3)) * 0.5 for _ in range(4))])
    x = rng.standard_normal((4, 3))
    perm = np.array([2, 0, 3, 1])
    out = cra_model.r_mha(ndiff.Tensor(x), params, "blk").value
    out_perm = cra_model.r_mha(ndiff.Tensor(x[perm]), params, "blk").value
    np.testing.assert_allclose(out_perm, out[perm], rtol=1e-12, atol=1e-12)


# ============================================================================
# ENCODER
# ============================================================================

def test_mlp_identity_encoder():
    config = ModelConfig(d=3, h=3, heads=1, encoder=EncoderConfig(hidden=[]), variant=Variant.ENCODER_ONLY)
    params = cra_model.init_params(config)
    params["encoder.0.weight"].value[...] = np.eye(3)
    x = np.random.default_rng(5).standard_normal((4, 3))
    np.testing.assert_array_equal(cra_model.encode_features(x, params, config).value, x)


def test_identical_rows_share_embedding(model_config):
    config = model_config(Variant.ENCODER_ONLY)
    params = cra_model.init_params(config)
    row = np.random.default_rng(6).standard_normal(5)
    out = cra_model.encode_features(np.vstack([row, row]), params, config).value
    np.testing.assert_array_equal(out[0], out[1])


def test_encode_rejects_wrong_dimension(model_config):
    config = model_config(Variant.ENCODER_ONLY)
    params = cra_model.init_params(config)
    record = MoleculeRecord(id="x", features=None, smiles="C")
    with pytest.raises(EncoderInputMismatch):
        cra_model.encode([record], params, config)


def _gin(eps):
    config = ModelConfig(h=4, heads=1, encoder=EncoderConfig(kind="gin", gin_layers=1, gin_eps=eps),
                         variant=Variant.ENCODER_ONLY)
    return config, cra_model.init_params(config, seed=1)


def test_gin_single_atom_is_mlp_of_atom_features():
    config, params = _gin(0.0)
    record = MoleculeRecord(id="m", smiles="C", graph=parse_smiles("C"))
    out = cra_model.encode([record], params, config).value
    feats = atom_features(record.graph.atoms[0], 0).reshape(1, -1)
    expected = feats @ params["encoder.gin0.weight"].value + params["encoder.gin0.bias"].value
    np.testing.assert_allclose(out, expected, rtol=1e-12)


def test_gin_neighbor_sum_and_pooling():
    config, params = _gin(0.5)
    record = MoleculeRecord(id="m", smiles="CC", graph=parse_smiles("CC"))
    out = cra_model.encode([record], params, config).value
    f = atom_features(record.graph.atoms[0], 1).reshape(1, -1)
    per_atom = 2.5 * f @ params["encoder.gin0.weight"].value + params["encoder.gin0.bias"].value
    np.testing.assert_allclose(out, 2 * per_atom, rtol=1e-12)


def test_gin_batch_matches_molecules_encoded_alone():
    config = ModelConfig(h=4, heads=1, encoder=EncoderConfig(kind="gin", gin_layers=2, gin_eps=0.1),
                         variant=Variant.ENCODER_ONLY)
    params = cra_model.init_params(config, seed=2)
    records = [MoleculeRecord(id=s, smiles=s, graph=parse_smiles(s)) for s in ("CCO", "c1ccccc1", "C", "CC(=O)O")]
    batch = cra_model.encode(records, params, config).value
    alone = np.vstack([cra_model.encode([r], params, config).value for r in records])
    assert batch.shape == (4, 4)
    np.testing.assert_allclose(batch, alone, rtol=1e-12, atol=1e-12)


# ============================================================================
# ANCLAS Y AUMENTOS
# ============================================================================

def test_initial_anchors_means():
    s = ndiff.Tensor([[1.0, 0.0], [0.0, 1.0], [4.0, 4.0]])
    anchors = cra_model.initial_anchors(s, [1, 1, -1]).value
    np.testing.assert_array_equal(anchors, [[4.0, 4.0], [0.5, 0.5]])
    single = cra_model.initial_anchors(ndiff.Tensor([[1.0, 0.0], [3.0, 3.0]]), [1, -1]).value
    np.testing.assert_array_equal(single[1], [1.0, 0.0])


def test_initial_anchors_random_support_matches_column_means():
    rng = np.random.default_rng(7)
    s = rng.standard_normal((16, 5))
    labels = [1] * 8 + [-1] * 8
    anchors = cra_model.initial_anchors(ndiff.Tensor(s), labels).value
    np.testing.assert_allclose(anchors[0], s[8:].mean(axis=0), rtol=1e-12)
    np.testing.assert_allclose(anchors[1], s[:8].mean(axis=0), rtol=1e-12)
    for row, block in ((anchors[0], s[8:]), (anchors[1], s[:8])):
        assert (row >= block.min(axis=0) - 1e-12).all() and (row <= block.max(axis=0) + 1e-12).all()


def test_initial_anchors_missing_class():
    with pytest.raises(MissingClass):
        cra_model.initial_anchors(ndiff.Tensor(np.ones((2, 2))), [1, 1])


def test_context_augment_residual_identity():
    rng = np.random.default_rng(8)
    params = _zero_values(_block("cam", [tuple(rng.standard_normal((3, 3)) for _ in range(4))] * 2))
    anchors = ndiff.Tensor(rng.standard_normal((2, 3)))
    refs = ndiff.Tensor(rng.standard_normal((5, 3)))
    np.testing.assert_array_equal(cra_model.context_augment(anchors, refs, params).value, anchors.value)


def test_context_augment_matches_full_self_attention_rows():
    rng = np.random.default_rng(9)
    params = _block("cam", [tuple(rng.standard_normal((3, 3)) * 0.5 for _ in range(4)) for _ in range(2)])
    anchors = ndiff.Tensor(rng.standard_normal((2, 3)))
    refs = ndiff.Tensor(rng.standard_normal((6, 3)))
    full = cra_model.r_mha(ndiff.concat_rows(anchors, refs), params, "cam").value[:2]
    np.testing.assert_allclose(cra_model.context_augment(anchors, refs, params).value, full, rtol=1e-12)


def test_context_augment_reference_permutation_invariance():
    rng = np.random.default_rng(10)
    params = _block("cam", [tuple(rng.standard_normal((4, 4)) * 0.5 for _ in range(4)) for _ in range(2)])
    anchors = ndiff.Tensor(rng.standard_normal((2, 4)))
    refs = rng.standard_normal((32, 4))
    base = cra_model.context_augment(anchors, ndiff.Tensor(refs), params).value
    for _ in range(50):
        shuffled = refs[rng.permutation(32)]
        out = cra_model.context_augment(anchors, ndiff.Tensor(shuffled), params).value
        np.testing.assert_allclose(out, base, rtol=0, atol=1e-9)


def test_context_augment_hand_evaluated_single_reference():
    params = _identity_block("cam", 2)
    p = np.array([[1.0, 0.0], [0.0, 2.0]])
    x = np.vstack([p, p[:1]])
    expected = p + _softmax(p @ x.T / math.sqrt(2)) @ x
    out = cra_model.context_augment(ndiff.Tensor(p), ndiff.Tensor(p[:1]), params).value
    np.testing.assert_allclose(out, expected, rtol=1e-12)


def test_anchor_augment_residual_identity_and_shapes():
    rng = np.random.default_rng(11)
    params = _block("aam", [tuple(rng.standard_normal((9, 9)) for _ in range(4))] * 2)
    s = ndiff.Tensor(rng.standard_normal((4, 3)))
    q = ndiff.Tensor(rng.standard_normal((5, 3)))
    anchors = ndiff.Tensor(rng.standard_normal((2, 3)))
    s_star, q_star = cra_model.anchor_augment(s, q, anchors, params)
    assert s_star.shape == (4, 3) and q_star.shape == (5, 3)
    _zero_values(params)
    s_star, q_star = cra_model.anchor_augment(s, q, anchors, params)
    np.testing.assert_array_equal(s_star.value, s.value)
    np.testing.assert_array_equal(q_star.value, q.value)


def test_anchor_augment_hand_evaluated():
    params = _identity_block("aam", 3)
    s, q, p = 0.5, -1.0, np.array([[2.0], [-0.5]])
    x = np.array([[s, p[0, 0], p[1, 0]], [q, p[0, 0], p[1, 0]]])
    expected = x + _softmax(x @ x.T / math.sqrt(3)) @ x
    s_star, q_star = cra_model.anchor_augment(ndiff.Tensor([[s]]), ndiff.Tensor([[q]]), ndiff.Tensor(p), params)
    assert s_star.value[0, 0] == pytest.approx(expected[0, 0], rel=1e-12)
    assert q_star.value[0, 0] == pytest.approx(expected[1, 0], rel=1e-12)


def test_anchor_augment_without_anchors_uses_width_h():
    rng = np.random.default_rng(12)
    params = _block("aam", [tuple(rng.standard_normal((3, 3)) for _ in range(4))])
    s_star, q_star = cra_model.anchor_augment(
        ndiff.Tensor(rng.standard_normal((2, 3))), ndiff.Tensor(rng.standard_normal((2, 3))), None, params,
    )
    assert s_star.shape == (2, 3) and q_star.shape == (2, 3)


def test_anchor_augment_blocked_queries_are_independent():
    rng = np.random.default_rng(13)
    params = _block("aam", [tuple(rng.standard_normal((6, 6)) * 0.5 for _ in range(4))])
    s = ndiff.Tensor(rng.standard_normal((3, 2)))
    anchors = ndiff.Tensor(rng.standard_normal((2, 2)))
    q = rng.standard_normal((3, 2))
    _, together = cra_model.anchor_augment(s, ndiff.Tensor(q), anchors, params, block_query_attention=True)
    _, alone = cra_model.anchor_augment(s, ndiff.Tensor(q[:1]), anchors, params, block_query_attention=True)
    np.testing.assert_allclose(together.value[:1], alone.value, rtol=1e-12)


# ============================================================================
# MATCHING Y PÉRDIDA
# ============================================================================

def test_match_predict_orthogonal_gives_half():
    s = ndiff.Tensor([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    q = ndiff.Tensor([[0.0, 0.0, 1.0]])
    assert cra_model.match_predict(q, s, [1, -1]).value[0, 0] == 0.5


def test_match_predict_worked_example():
    s = ndiff.Tensor([[1.0, 0.0], [-1.0, 0.0]])
    q = ndiff.Tensor([[1.0, 0.0]])
    p = cra_model.match_predict(q, s, [1, -1]).value
    assert p.shape == (1, 1)
    assert abs(p[0, 0] - SIGMOID_ONE) < 1e-9
    unscaled = cra_model.match_predict(q, s, [1, -1], matching_scale="none").value[0, 0]
    assert unscaled == pytest.approx(_sigmoid(2.0), rel=1e-12)


def test_match_predict_label_flip_and_scale():
    rng = np.random.default_rng(14)
    s = rng.standard_normal((6, 4))
    q = rng.standard_normal((5, 4))
    labels = [1, -1, 1, 1, -1, -1]
    p = cra_model.match_predict(ndiff.Tensor(q), ndiff.Tensor(s), labels).value
    flipped = cra_model.match_predict(ndiff.Tensor(q), ndiff.Tensor(s), [-y for y in labels]).value
    np.testing.assert_allclose(flipped, 1.0 - p, rtol=0, atol=1e-12)
    scaled = cra_model.match_predict(ndiff.Tensor(3.7 * q), ndiff.Tensor(3.7 * s), labels).value
    np.testing.assert_allclose(scaled, p, rtol=0, atol=1e-9)


def test_match_predict_zero_query_is_neutral():
    s = ndiff.Tensor([[1.0, 0.0], [0.0, 1.0]])
    p = cra_model.match_predict(ndiff.Tensor([[0.0, 0.0]]), s, [1, -1]).value
    assert p[0, 0] == 0.5


def test_match_predict_missing_class():
    with pytest.raises(MissingClass):
        cra_model.match_predict(ndiff.Tensor([[1.0, 0.0]]), ndiff.Tensor(np.eye(2)), [1, 1])


def test_bce_loss_values():
    assert cra_model.bce_loss(ndiff.Tensor([[0.5], [0.5]]), [1, -1]).item() == pytest.approx(math.log(2), rel=1e-12)
    expected = -(math.log(0.8) + math.log(0.7)) / 2
    assert cra_model.bce_loss(ndiff.Tensor([[0.8], [0.3]]), [1, -1]).item() == pytest.approx(expected, rel=1e-12)
    near_perfect = cra_model.bce_loss(ndiff.Tensor([[1 - 1e-12], [1e-12]]), [1, -1]).item()
    assert 0.0 <= near_perfect < 1e-11


def test_bce_loss_clamps_extremes():
    loss = cra_model.bce_loss(ndiff.Tensor([[1.0], [0.0]]), [-1, 1]).item()
    assert math.isfinite(loss)
    assert loss == pytest.approx(-math.log(1e-12), rel=1e-4)


# ============================================================================
# EPISODIO COMPLETO
# ============================================================================

@pytest.mark.parametrize("variant", list(Variant))
def test_forward_every_variant(variant, model_config, episode_factory):
    config = model_config(variant)
    params = cra_model.init_params(config, seed=0)
    episode = episode_factory(seed=1, n_query=5)
    probs = cra_model.predict(episode, params, config)
    assert probs.shape == (5,)
    assert ((probs > 0) & (probs < 1)).all()


def test_full_with_zero_values_collapses_to_encoder_only(model_config, episode_factory):
    config = model_config(Variant.FULL)
    params = _zero_values(cra_model.init_params(config, seed=2))
    for seed in range(100):
        episode = episode_factory(seed=seed)
        full = cra_model.predict(episode, params, config)
        baseline = cra_model.predict(episode, params, config, variant=Variant.ENCODER_ONLY)
        np.testing.assert_array_equal(full, baseline)


def test_trace_exposes_intermediates(model_config, episode_factory):
    config = model_config(Variant.FULL)
    params = cra_model.init_params(config, seed=0)
    episode = episode_factory(seed=3, n_support=4, n_query=2, n_reference=3)
    trace = cra_model.forward_trace(episode, params, config, return_weights=True)
    assert trace.anchors.shape == (2, 4)
    assert trace.reference_emb.shape == (3, 4)
    assert trace.attention["cam"].heads[0].shape == (2, 5)
    assert trace.attention["aam"].heads[0].shape == (6, 6)
    np.testing.assert_array_equal(trace.probabilities(), cra_model.predict(episode, params, config))


def test_end_to_end_gradient_check(episode_factory):
    config = ModelConfig(d=5, h=4, heads=2, encoder=EncoderConfig(hidden=[]), reference_size=2,
                         variant=Variant.FULL)
    params = cra_model.init_params(config, seed=4)
    episode = episode_factory(seed=5, n_support=2, n_query=2, n_reference=2)
    labels = episode.query_labels()

    def loss():
        return cra_model.bce_loss(cra_model.forward_episode(episode, params, config), labels)

    errors = ndiff.gradient_check(loss, params)
    assert max(errors.values()) < 1e-4, errors
