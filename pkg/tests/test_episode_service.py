import json

import numpy as np
import pytest

from app.core.errors import (
    DuplicateRecordId, InvalidConfig, MalformedLine, PoolTooSmall, SingleClassTask, TaskTooSmall,
)
from app.core.rng import make_rng
from app.schemas.episodes import SynthConfig
from app.schemas.model import SamplingMode
from app.services.episode_service import (
    load_pool, load_tasks, round_half_up, sample_episode, sample_reference, split_sizes, strip_labels,
    support_class_sizes, synth_tasks, with_reference, write_pool, write_tasks,
)
from tests.conftest import feature_record, make_task


def _write_lines(path, docs):
    path.write_text("".join(json.dumps(d) + "\n" for d in docs), encoding="utf-8")
    return path


# ============================================================================
# LECTURA
# ============================================================================

def test_load_tasks_groups_records(tmp_path):
    path = _write_lines(tmp_path / "tasks.jsonl", [
        {"task_id": "a", "id": "m1", "smiles": "CCO", "label": 1},
        {"task_id": "a", "id": "m2", "features": [0.5, 1.0], "label": 0},
    ])
    tasks = load_tasks(path)
    assert len(tasks) == 1
    assert tasks[0].task_id == "a"
    assert [r.label for r in tasks[0].records] == [1, -1]
    assert tasks[0].records[1].features.dim == 2


def test_load_tasks_rejects_bad_label_with_line(tmp_path):
    path = _write_lines(tmp_path / "tasks.jsonl", [
        {"task_id": "a", "id": "m1", "smiles": "CCO", "label": 1},
        {"task_id": "a", "id": "m2", "smiles": "CC", "label": 2},
    ])
    with pytest.raises(MalformedLine) as exc:
        load_tasks(path)
    assert exc.value.line_no == 2


@pytest.mark.parametrize(
    "doc",
    [
        {"task_id": "a", "id": "m2", "label": 1},
        {"task_id": "a", "id": "m2", "smiles": "C", "features": [1.0], "label": 1},
        {"task_id": "a", "id": "m2", "features": [], "label": 1},
        {"id": "m2", "smiles": "C", "label": 1},
        {"task_id": "a", "id": "m2", "smiles": "C", "label": True},
    ],
)
def test_load_tasks_malformed_lines(tmp_path, doc):
    path = _write_lines(tmp_path / "tasks.jsonl", [{"task_id": "a", "id": "m1", "smiles": "C", "label": 1}, doc])
    with pytest.raises(MalformedLine):
        load_tasks(path)


def test_load_tasks_invalid_json(tmp_path):
    path = tmp_path / "tasks.jsonl"
    path.write_text('{"task_id": "a"\n', encoding="utf-8")
    with pytest.raises(MalformedLine) as exc:
        load_tasks(path)
    assert exc.value.line_no == 1


def test_load_tasks_invalid_utf8(tmp_path):
    path = tmp_path / "tasks.jsonl"
    path.write_bytes(b'{"task_id": "a", "id": "m1", "smiles": "C", "label": 1}\n{"task_id": "\xff"}\n')
    with pytest.raises(MalformedLine) as exc:
        load_tasks(path)
    assert exc.value.line_no == 2
    assert "UTF-8" in exc.value.message


def test_load_tasks_duplicate_id(tmp_path):
    doc = {"task_id": "a", "id": "m1", "smiles": "C", "label": 1}
    path = _write_lines(tmp_path / "tasks.jsonl", [doc, dict(doc, label=-1)])
    with pytest.raises(DuplicateRecordId):
        load_tasks(path)


def test_load_tasks_single_record_task(tmp_path):
    path = _write_lines(tmp_path / "tasks.jsonl", [{"task_id": "a", "id": "m1", "smiles": "C", "label": 1}])
    with pytest.raises(TaskTooSmall):
        load_tasks(path)


def test_empty_files(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("\n\n", encoding="utf-8")
    assert load_tasks(path) == []
    assert load_pool(path) == []


def test_tasks_and_pool_roundtrip(tmp_path):
    tasks = [make_task("a", 3, 3), make_task("b", 2, 4, seed=1)]
    assert write_tasks(tmp_path / "tasks.jsonl", tasks) == 12
    loaded = load_tasks(tmp_path / "tasks.jsonl")
    assert [t.task_id for t in loaded] == ["a", "b"]
    np.testing.assert_array_equal(loaded[0].records[0].features.combined, tasks[0].records[0].features.combined)

    pool = strip_labels(tasks)
    assert all(r.label is None for r in pool)
    write_pool(tmp_path / "pool.jsonl", pool)
    assert [r.id for r in load_pool(tmp_path / "pool.jsonl")] == [r.id for r in pool]


# ============================================================================
# MUESTREO
# ============================================================================

def test_round_half_up():
    assert [round_half_up(x) for x in (0.5, 1.5, 2.5, 14.4, 14.5)] == [1, 2, 3, 14, 15]


def test_support_class_sizes():
    assert support_class_sizes(16, 0.9, SamplingMode.STRATIFIED) == (2, 14)
    assert support_class_sizes(16, 0.01, SamplingMode.STRATIFIED) == (15, 1)
    assert support_class_sizes(16, 0.99, SamplingMode.STRATIFIED) == (1, 15)
    assert support_class_sizes(10, 0.9, SamplingMode.BALANCED) == (5, 5)


def test_stratified_support_follows_prevalence():
    task = make_task("t", 45, 5)
    episode = sample_episode(task, make_rng(0, "test"), 16, None, SamplingMode.STRATIFIED)
    labels = episode.support_labels()
    assert labels.count(1) == 14
    assert labels.count(-1) == 2
    assert len(episode.query) == 34


def test_balanced_support():
    episode = sample_episode(make_task("t", 10, 10), make_rng(0, "test"), 10, 4, SamplingMode.BALANCED)
    assert sorted(episode.support_labels()) == [-1] * 5 + [1] * 5
    assert len(episode.query) == 4


def test_balanced_support_too_large():
    with pytest.raises(TaskTooSmall):
        sample_episode(make_task("t", 10, 10), make_rng(0, "test"), 20, None, SamplingMode.BALANCED)


def test_query_keeps_both_classes_when_reserved():
    task = make_task("t", 2, 2)
    for seed in range(20):
        episode = sample_episode(task, make_rng(seed, "test"), 2, None, require_query_classes=True)
        assert sorted(episode.query_labels()) == [-1, 1]


def test_single_class_task():
    with pytest.raises(SingleClassTask):
        sample_episode(make_task("t", 4, 0), make_rng(0, "test"), 2, None)


def test_support_and_query_disjoint_over_draws():
    task = make_task("t", 12, 20)
    rng = make_rng(1, "test")
    for _ in range(100):
        episode = sample_episode(task, rng, 8, 6)
        support_ids = {r.id for r in episode.support}
        assert not support_ids & {r.id for r in episode.query}
        assert len(support_ids) == 8
        assert set(episode.support_labels()) == {-1, 1}


def test_sampling_is_deterministic():
    task = make_task("t", 12, 20)
    first = sample_episode(task, make_rng(5, "episode"), 8, 6)
    second = sample_episode(task, make_rng(5, "episode"), 8, 6)
    assert [r.id for r in first.support] == [r.id for r in second.support]
    assert [r.id for r in first.query] == [r.id for r in second.query]


def test_pool_hints_split_support_and_query(small_synth):
    task = synth_tasks(small_synth, seed=0).train[0]
    episode = sample_episode(task, make_rng(0, "test"), 6, None)
    assert all(r.pool == "support" for r in episode.support)
    assert all(r.pool == "query" for r in episode.query)
    assert len(episode.query) == small_synth.query_pool_size


def _pool(n):
    rng = np.random.default_rng(0)
    return [feature_record(f"p{i}", rng.standard_normal(3)) for i in range(n)]


def test_sample_reference_whole_pool_is_permutation():
    pool = _pool(10)
    picked = sample_reference(pool, 10, make_rng(0, "reference"))
    assert sorted(r.id for r in picked) == sorted(r.id for r in pool)


def test_sample_reference_determinism():
    pool = _pool(50)
    first = [r.id for r in sample_reference(pool, 8, make_rng(3, "reference"))]
    again = [r.id for r in sample_reference(pool, 8, make_rng(3, "reference"))]
    other = [r.id for r in sample_reference(pool, 8, make_rng(4, "reference"))]
    assert first == again
    assert first != other
    assert len(set(first)) == 8


def test_sample_reference_pool_too_small():
    with pytest.raises(PoolTooSmall):
        sample_reference(_pool(3), 4, make_rng(0, "reference"))


def test_with_reference_keeps_sets():
    episode = sample_episode(make_task("t", 4, 4), make_rng(0, "test"), 4, None)
    augmented = with_reference(episode, _pool(3))
    assert len(augmented.reference) == 3
    assert [r.id for r in augmented.support] == [r.id for r in episode.support]


# ============================================================================
# GENERADOR SINTÉTICO
# ============================================================================

def test_synth_splits_and_ids(small_synth):
    split = synth_tasks(small_synth, seed=0)
    assert (len(split.train), len(split.valid), len(split.test)) == (4, 1, 1)
    assert len(split.pool) == 64
    assert split.pool[0].id == "ref-00000"
    first = split.train[0]
    assert first.task_id == "synth-000"
    assert first.records[0].id == "synth-000-s0000"
    assert first.records[small_synth.support_pool_size].id == "synth-000-q0000"
    for task in split.train + split.valid + split.test:
        for pool in ("support", "query"):
            labels = [r.label for r in task.records if r.pool == pool]
            assert labels.count(1) >= 2 and labels.count(-1) >= 2


def test_synth_is_deterministic(small_synth):
    first = synth_tasks(small_synth, seed=7)
    second = synth_tasks(small_synth, seed=7)
    for a, b in zip(first.train, second.train):
        for ra, rb in zip(a.records, b.records):
            assert ra.id == rb.id and ra.label == rb.label
            np.testing.assert_array_equal(ra.features.combined, rb.features.combined)
    other = synth_tasks(small_synth, seed=8)
    assert not np.array_equal(other.pool[0].features.combined, first.pool[0].features.combined)


def test_synth_bias_moves_support_only(small_synth):
    unbiased = synth_tasks(small_synth.model_copy(update={"bias": 0.0}), seed=2)
    biased = synth_tasks(small_synth.model_copy(update={"bias": 1.0}), seed=2)
    for a, b in zip(unbiased.train, biased.train):
        support_a = [r for r in a.records if r.pool == "support"]
        support_b = [r for r in b.records if r.pool == "support"]
        assert any(
            not np.array_equal(ra.features.combined, rb.features.combined) for ra, rb in zip(support_a, support_b)
        )


def test_split_sizes_need_every_split():
    with pytest.raises(InvalidConfig):
        split_sizes(SynthConfig(task_count=3))
    with pytest.raises(InvalidConfig):
        split_sizes(SynthConfig(task_count=10, train_fraction=0.7, valid_fraction=0.3))
    assert split_sizes(SynthConfig(task_count=10)) == (6, 2, 2)
