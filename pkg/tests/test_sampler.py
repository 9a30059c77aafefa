import numpy as np
import pytest

from crossadapt.data.schema import FieldSchema, SampleBatch
from crossadapt.errors import DataError, ParameterError
from crossadapt.model import ModelSpec, init_model
from crossadapt.transfer.sampler import (
    OBSERVED,
    PSEUDO,
    SamplingConfig,
    class_balanced_sample,
    full_dataset,
    round_half_up,
    sample_n,
    temporal_diversity_sample,
    unclicked_augment,
)


def _make_train(n: int = 1000, pos_rate: float = 0.2, seed: int = 0) -> SampleBatch:
    rng = np.random.default_rng(seed)
    label = (rng.random(n) < pos_rate).astype(float)
    return SampleBatch(
        categorical=rng.integers(0, 3, size=(n, 1)),
        numerical=np.zeros((n, 0)),
        label=label,
        timestamp=np.arange(n, dtype=float),
    )


def _make_teacher(seed: int = 0):
    schema = FieldSchema.build([("f", 3)], [])
    return init_model(ModelSpec(embedding_dim=2, hidden=[3]), schema, seed)


def test_round_half_up():
    assert round_half_up(2.5) == 3
    assert round_half_up(0.1 * 0.5 * 1000) == 50
    assert round_half_up(409.6) == 410
    assert round_half_up(0.49) == 0


def test_sample_n_edge_cases():
    pool = np.arange(10)
    assert sample_n(pool, 0).size == 0
    assert sorted(sample_n(pool, 10, seed=3)) == list(range(10))
    with pytest.raises(DataError):
        sample_n(np.array([], dtype=int), 1)
    with pytest.raises(ParameterError):
        sample_n(pool, -1)


def test_sample_n_with_replacement_covers_pool():
    pool = np.arange(5)
    drawn = sample_n(pool, 60, seed=1)
    assert drawn.size == 60
    counts = np.bincount(drawn, minlength=5)
    assert counts.sum() == 60
    assert np.all(counts >= 1)


def test_sample_n_is_deterministic():
    pool = np.arange(100)
    assert np.array_equal(sample_n(pool, 20, seed=4), sample_n(pool, 20, seed=4))


def test_class_balanced_counts():
    train = _make_train(1000)
    pos, neg = class_balanced_sample(train, SamplingConfig(r=0.1, r_pos=0.5))
    assert len(pos) == 50 and len(neg) == 50
    assert np.all(pos.label == 1.0) and np.all(neg.label == 0.0)


def test_class_balanced_identity_composition():
    train = _make_train(1000)
    rate = float(train.label.mean())
    pos, neg = class_balanced_sample(train, SamplingConfig(r=1.0, r_pos=rate))
    assert abs(len(pos) - int(train.label.sum())) <= 1
    assert abs(len(neg) - int((1 - train.label).sum())) <= 1


def test_class_balanced_small_pool_uses_replacement():
    label = np.array([1, 1, 0, 0, 0, 0, 0, 0, 0, 0], dtype=float)
    train = SampleBatch(
        categorical=np.zeros((10, 1), dtype=int),
        numerical=np.zeros((10, 0)),
        label=label,
        timestamp=np.arange(10.0),
    )
    pos, neg = class_balanced_sample(train, SamplingConfig(r=0.5, r_pos=0.5))
    assert 2 <= len(pos) <= 3
    assert np.all(pos.label == 1.0)


def test_class_balanced_single_class_names_missing_class():
    train = _make_train(50)
    train.label[:] = 0.0
    with pytest.raises(DataError, match="positives"):
        class_balanced_sample(train, SamplingConfig())


def test_temporal_blocks_quota():
    train = _make_train(1000, pos_rate=0.3)
    sampled = temporal_diversity_sample(train, SamplingConfig(r=0.1, r_pos=0.5, K=5))
    assert len(sampled) == 100
    assert sampled.n_blocks == 5
    for k in range(5):
        block = sampled.block(k)
        assert int(block.label.sum()) == 10
        assert len(block) == 20


def test_temporal_blocks_are_in_time_order():
    train = _make_train(500)
    sampled = temporal_diversity_sample(train, SamplingConfig(r=0.2, K=4, seed=2))
    assert np.all(np.diff(sampled.block_ids) >= 0)
    for k in range(4):
        ts = sampled.block(k).timestamp
        lo, hi = k * 125, (k + 1) * 125
        assert np.all((ts >= lo) & (ts < hi))
    assert np.all(sampled.provenance == OBSERVED)


def test_temporal_sampling_sorts_unsorted_input():
    train = _make_train(200)
    shuffled = train.take(np.random.default_rng(0).permutation(200))
    a = temporal_diversity_sample(train, SamplingConfig(K=2))
    b = temporal_diversity_sample(shuffled, SamplingConfig(K=2))
    assert np.array_equal(a.samples.timestamp, b.samples.timestamp)


@pytest.mark.parametrize("n,K,r", [(1000, 10, 0.1), (777, 7, 0.05), (320, 3, 0.3)])
def test_temporal_size_and_composition_laws(n, K, r):
    train = _make_train(n, pos_rate=0.25, seed=n)
    cfg = SamplingConfig(r=r, r_pos=0.5, K=K, seed=1)
    sampled = temporal_diversity_sample(train, cfg)
    size = len(sampled)
    assert r * n * (1 - K / n) <= size <= r * n + K
    pos_share = float(sampled.samples.label.mean())
    assert abs(pos_share - 0.5) <= 1.0 / K
    assert min(len(sampled.block(k)) for k in range(K)) >= 1


def test_temporal_sampling_is_deterministic():
    train = _make_train(300)
    cfg = SamplingConfig(K=3, seed=9)
    a = temporal_diversity_sample(train, cfg)
    b = temporal_diversity_sample(train, cfg)
    assert np.array_equal(a.source_index, b.source_index)


def test_block_without_positives_borrows_from_neighbour(caplog):
    train = _make_train(400, pos_rate=0.3)
    train.label[:100] = 0.0
    sampled = temporal_diversity_sample(train, SamplingConfig(r=0.2, K=4))
    assert int(sampled.block(0).label.sum()) == 10
    assert "borrowing" in caplog.text


def test_temporal_rejects_too_many_blocks():
    with pytest.raises(ParameterError):
        temporal_diversity_sample(_make_train(5), SamplingConfig(K=6))


def test_one_block_per_sample():
    train = _make_train(20, pos_rate=0.5, seed=3)
    sampled = temporal_diversity_sample(train, SamplingConfig(r=1.0, r_pos=0.5, K=20))
    for k in range(20):
        assert len(sampled.block(k)) <= 2


def test_full_dataset_keeps_every_row():
    train = _make_train(100)
    full = full_dataset(train, K=4)
    assert len(full) == 100
    assert full.n_blocks == 4
    assert sum(c.n_pos + c.n_neg for c in full.block_counts) == 100


def test_unclicked_augment_noop_when_ratio_zero():
    sampled = temporal_diversity_sample(_make_train(200), SamplingConfig(K=2))
    out = unclicked_augment(sampled, _make_train(50, seed=1), _make_teacher(), SamplingConfig())
    assert out is sampled


def test_unclicked_augment_appends_pseudo_rows():
    train = _make_train(1000)
    sampled = temporal_diversity_sample(train, SamplingConfig(r=0.1, K=5))
    unclicked = _make_train(300, seed=7)
    cfg = SamplingConfig(r=0.1, K=5, r_unclick=0.5)
    out = unclicked_augment(sampled, unclicked, _make_teacher(), cfg)
    assert len(out) == len(sampled) + 50
    pseudo = out.samples.soft_label[~out.samples.observed]
    assert pseudo.size == 50
    assert np.all((pseudo > 0.0) & (pseudo < 1.0))
    assert (out.provenance == PSEUDO).sum() == 50
    assert sum(c.n_pseudo for c in out.block_counts) == 50
    assert np.all(np.diff(out.block_ids) >= 0)


def test_unclicked_augment_zero_teacher_gives_half():
    teacher = _make_teacher()
    for w, b in zip(teacher.net.weights, teacher.net.biases):
        w[:] = 0.0
        b[:] = 0.0
    sampled = temporal_diversity_sample(_make_train(200), SamplingConfig(K=2))
    out = unclicked_augment(
        sampled, _make_train(40, seed=2), teacher, SamplingConfig(K=2, r_unclick=0.2)
    )
    pseudo = out.samples.soft_label[~out.samples.observed]
    assert np.all(pseudo == 0.5)


def test_unclicked_augment_empty_pool():
    sampled = temporal_diversity_sample(_make_train(200), SamplingConfig(K=2))
    empty = _make_train(200).take(np.array([], dtype=int))
    with pytest.raises(DataError):
        unclicked_augment(sampled, empty, _make_teacher(), SamplingConfig(r_unclick=0.5))


def test_audit_file(tmp_path):
    sampled = temporal_diversity_sample(_make_train(200), SamplingConfig(K=2))
    path = sampled.write_audit(tmp_path / "audit.csv")
    text = path.read_text().splitlines()
    assert text[0] == "block_id,n_pos,n_neg,n_pseudo"
    assert len(text) == 3
