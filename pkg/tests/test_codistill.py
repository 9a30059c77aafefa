import numpy as np
import pytest

from crossadapt.data.schema import FieldSchema, SampleBatch
from crossadapt.errors import DataError, ProtocolError, StateError
from crossadapt.model import (
    AdamState,
    ArchKind,
    ModelSpec,
    adam_step,
    backward,
    clone_frozen,
    distill_objective,
    forward,
    init_model,
)
from crossadapt.model.core import GradientSet
from crossadapt.online.codistill import (
    ONLINE_LOG_COLUMNS,
    CoEvolutionState,
    OnlineConfig,
    augment_batch,
    co_step,
    recovery_steps,
    run_online,
    train_stream,
)
from crossadapt.online.shift import ShiftSettings, compute_shift


def _make_schema() -> FieldSchema:
    return FieldSchema.build([("user", 5), ("item", 4)], ["x"])


def _make_stream(n: int = 200, seed: int = 0, start: float = 0.0) -> SampleBatch:
    rng = np.random.default_rng(seed)
    cat = np.column_stack([rng.integers(0, 5, n), rng.integers(0, 4, n)])
    num = rng.standard_normal((n, 1))
    logit = np.where(cat[:, 0] < 2, 1.5, -1.0) + num[:, 0]
    label = (rng.random(n) < 1.0 / (1.0 + np.exp(-logit))).astype(float)
    return SampleBatch(
        categorical=cat, numerical=num, label=label, timestamp=start + np.arange(n, dtype=float)
    )


def _make_models(seed: int = 0):
    teacher = init_model(
        ModelSpec(arch=ArchKind.FM_MLP, embedding_dim=4, hidden=[6]), _make_schema(), seed
    )
    student = init_model(ModelSpec(embedding_dim=2, hidden=[5, 3]), _make_schema(), seed + 1)
    return teacher, student


def _cfg(**kw) -> OnlineConfig:
    base = {"batch_size": 10, "eta_S": 0.01, "eta_T": 0.01, "seed": 2}
    base.update(kw)
    return OnlineConfig(**base)


def _teacher_bce_grad(teacher, batch) -> GradientSet:
    _, logits, cache = forward(teacher, batch)
    _, dlogits = distill_objective(logits, batch.label, batch.observed, None, 0.0, 1.0)
    return backward(teacher, cache, dlogits)


def test_augment_counts():
    pool = _make_stream(5000, seed=1)
    batch = _make_stream(4096, seed=2)
    out = augment_batch(batch, pool, 0.1, seed=0)
    assert len(out) == 4096 + 409
    assert np.array_equal(out.label[:4096], batch.label)
    small = _make_stream(5)
    assert len(augment_batch(small, pool, 0.1)) == 5
    assert augment_batch(batch, None, 0.0) is batch


def test_augment_is_deterministic_and_needs_pool():
    pool = _make_stream(300, seed=1)
    batch = _make_stream(100, seed=2)
    a = augment_batch(batch, pool, 0.5, seed=7)
    b = augment_batch(batch, pool, 0.5, seed=7)
    assert np.array_equal(a.categorical, b.categorical)
    with pytest.raises(DataError):
        augment_batch(batch, None, 0.1)


def test_augment_with_nothing_due_skips_the_pool():
    small = _make_stream(5)
    assert augment_batch(small, None, 0.1) is small
    empty_pool = _make_stream(20).slice(0, 0)
    assert augment_batch(small, empty_pool, 0.15) is small


def test_tau_ten_over_thousand_steps():
    teacher, student = _make_models()
    cfg = _cfg(tau=10)
    state = CoEvolutionState.start(teacher, cfg)
    stream = _make_stream(10_000)
    checksums, ticks = [], []
    for batch in stream.batches(10):
        result = co_step(teacher, student, batch, cfg, state)
        checksums.append(teacher.checksum())
        ticks.append(result.teacher_updated)
    assert state.t == 1000
    assert state.teacher_updates == 100
    assert [i + 1 for i, t in enumerate(ticks) if t] == list(range(10, 1001, 10))
    for span in range(100):
        block = checksums[span * 10 : span * 10 + 9]
        assert len(set(block)) == 1
        if span:
            assert checksums[span * 10 - 1] != checksums[span * 10 - 2]


def test_tau_one_updates_every_step():
    teacher, student = _make_models()
    cfg = _cfg(tau=1)
    state = CoEvolutionState.start(teacher, cfg)
    for batch in _make_stream(50).batches(10):
        assert co_step(teacher, student, batch, cfg, state).teacher_updated
    assert state.teacher_updates == 5


def test_accumulator_is_sum_of_task_gradients():
    teacher, student = _make_models()
    cfg = _cfg(tau=10, lam=0.7)
    state = CoEvolutionState.start(teacher, cfg)
    batches = list(_make_stream(30).batches(10))
    expected = GradientSet.zeros_like(teacher)
    for batch in batches:
        expected.add_(_teacher_bce_grad(teacher, batch))
        co_step(teacher, student, batch, cfg, state)
    assert state.accumulated_steps == 3
    for name, g in expected.items():
        np.testing.assert_allclose(state.g_T[name], g, atol=1e-12, err_msg=name)


def test_teacher_gradient_excludes_kd():
    teacher, student = _make_models()
    batch = _make_stream(10)
    cfg = _cfg(tau=10, lam=1.0, temperature=1.0)
    state = CoEvolutionState.start(teacher, cfg)
    t_logits = forward(teacher, batch)[1]
    s_logits = forward(student, batch)[1]
    # the KD term would pull the teacher logits towards the student
    assert not np.allclose(t_logits, s_logits)
    task = _teacher_bce_grad(teacher, batch)
    co_step(teacher, student, batch, cfg, state)
    for name, g in task.items():
        np.testing.assert_allclose(state.g_T[name], g, atol=1e-12)


def test_teacher_update_applies_accumulated_direction():
    teacher, student = _make_models()
    twin = clone_frozen(teacher)
    cfg = _cfg(tau=3)
    state = CoEvolutionState.start(teacher, cfg)
    batches = list(_make_stream(30).batches(10))
    summed = GradientSet()
    for batch in batches:
        summed.add_(_teacher_bce_grad(twin, batch))
        co_step(teacher, student, batch, cfg, state)
    adam_step(twin, summed, AdamState(lr_embedding=cfg.lr_embedding, lr_net=cfg.eta_T))
    assert twin.checksum() == teacher.checksum()
    assert state.teacher_updates == 1
    assert all(not g.any() for g in state.g_T.values())


def test_student_changes_every_step():
    teacher, student = _make_models()
    cfg = _cfg()
    state = CoEvolutionState.start(teacher, cfg)
    previous = student.checksum()
    for batch in _make_stream(50).batches(10):
        co_step(teacher, student, batch, cfg, state)
        assert student.checksum() != previous
        previous = student.checksum()


def test_frozen_teacher_never_moves():
    teacher, student = _make_models()
    before = teacher.checksum()
    result = run_online(teacher, student, _make_stream(), None, None, _cfg(coevolve=False))
    assert teacher.checksum() == before
    assert result.state.teacher_updates == 0


def test_layout_mismatch_is_state_error():
    teacher, student = _make_models()
    cfg = _cfg()
    state = CoEvolutionState.start(student, cfg)
    with pytest.raises(StateError):
        co_step(teacher, student, _make_stream(10), cfg, state)


def test_unsorted_stream_is_rejected():
    teacher, student = _make_models()
    stream = _make_stream(30)
    shuffled = stream.take(np.random.default_rng(0).permutation(30))
    with pytest.raises(ProtocolError):
        run_online(teacher, student, shuffled, None, None, _cfg())
    with pytest.raises(ProtocolError):
        train_stream(student, shuffled, _cfg())


def test_stream_consumed_in_timestamp_order():
    teacher, student = _make_models()
    stream = _make_stream(95)
    seen = []
    run_online(
        teacher,
        student,
        stream,
        _make_stream(100, seed=5),
        None,
        _cfg(r_enh=0.2),
        on_batch=lambda step, batch: seen.append(batch.timestamp),
    )
    assert np.array_equal(np.concatenate(seen), stream.timestamp)
    assert len(seen) == 10


def test_full_reduction_matches_plain_training():
    teacher, student = _make_models()
    twin = clone_frozen(student)
    stream = _make_stream(120)
    cfg = _cfg(lam=0.0, r_enh=0.0)
    co = run_online(teacher, student, stream, None, None, cfg)
    plain = train_stream(twin, stream, cfg)
    assert twin.checksum() == student.checksum()
    np.testing.assert_array_equal(co.log.frame()["bce"], plain.log.frame()["bce"])


def test_r_enh_source_precedence():
    history = _make_stream(400, seed=3)
    report = compute_shift(history, ShiftSettings(n_windows=4))
    teacher, student = _make_models()
    result = run_online(teacher, student, _make_stream(40), history, report, _cfg())
    assert result.r_enh == report.r_enh
    teacher, student = _make_models()
    override = run_online(teacher, student, _make_stream(40), history, report, _cfg(r_enh=0.3))
    assert override.r_enh == 0.3
    assert all(r["n_history"] == 3 for r in override.log.records)


def test_online_log_and_checkpoints(tmp_path):
    teacher, student = _make_models()
    result = run_online(
        teacher, student, _make_stream(100), None, None, _cfg(), checkpoint_dir=tmp_path
    )
    frame = result.log.frame()
    assert list(frame.columns) == ONLINE_LOG_COLUMNS
    assert len(frame) == result.steps == 10
    assert frame["teacher_updated"].sum() == 1
    assert (tmp_path / "teacher_final.ckpt.json").exists()
    assert (tmp_path / "student_final.ckpt.json").exists()


def test_recovery_steps():
    losses = [0.5, 0.5, 1.0, 0.8, 0.54, 0.5]
    assert recovery_steps(losses, 2) == 2
    assert recovery_steps([0.5, 0.5, 1.0, 0.9, 0.8], 2) is None
    with pytest.raises(DataError):
        recovery_steps(losses, 0)


def test_same_seed_same_final_parameters():
    finals = []
    for _ in range(2):
        teacher, student = _make_models()
        result = run_online(
            teacher, student, _make_stream(300), _make_stream(200, seed=5), None, _cfg(r_enh=0.2)
        )
        finals.append((result.teacher.checksum(), result.student.checksum()))
    assert finals[0] == finals[1]
    plain = []
    for _ in range(2):
        _, student = _make_models()
        plain.append(train_stream(student, _make_stream(300), _cfg()).student.checksum())
    assert plain[0] == plain[1]
