import numpy as np
import pytest

from crossadapt.errors import ContractError, ParameterError, ShapeError
from crossadapt.transfer.projection import (
    ProjectionKind,
    ProjectionPlan,
    apply_plan,
    build_plan,
    choose_reduced_dim,
    gram_distortion,
    gram_error,
    random_projection_baseline,
    spectrum,
)

HAND_TABLE = np.array([[1.0, 0.0], [-1.0, 1.0], [0.0, -1.0]])


def _make_table(v: int, d: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    # anisotropic columns so the spectrum is well separated
    return rng.standard_normal((v, d)) * np.linspace(2.0, 0.2, d)[np.newaxis, :] + 0.3


def test_copy_plan_returns_identical_table():
    table = _make_table(20, 8, seed=0)
    plan = build_plan(table, 8)
    assert plan.kind == ProjectionKind.COPY
    assert plan.W is None
    assert np.array_equal(apply_plan(table, plan), table)


def test_expand_plan_is_row_orthonormal():
    plan = build_plan(_make_table(20, 8, seed=1), 16, seed=4)
    assert plan.kind == ProjectionKind.EXPAND
    assert plan.W.shape == (8, 16)
    np.testing.assert_allclose(plan.W @ plan.W.T, np.eye(8), atol=1e-10)


def test_expand_preserves_inner_products_on_hand_table():
    plan = build_plan(HAND_TABLE, 3, seed=9)
    projected = apply_plan(HAND_TABLE, plan)
    np.testing.assert_allclose(projected @ projected.T, HAND_TABLE @ HAND_TABLE.T, atol=1e-10)


@pytest.mark.parametrize("seed", range(100))
def test_copy_and_expand_preserve_gram(seed):
    rng = np.random.default_rng(seed)
    d_T = int(rng.integers(2, 17))
    d_S = d_T + int(rng.integers(0, 17))
    table = _make_table(int(rng.integers(10, 80)), d_T, seed=seed)
    plan = build_plan(table, d_S, seed=seed)
    assert plan.kind == (ProjectionKind.COPY if d_S == d_T else ProjectionKind.EXPAND)
    projected = apply_plan(table, plan)
    np.testing.assert_allclose(projected @ projected.T, table @ table.T, atol=1e-9)


def test_expand_is_replayable_from_seed():
    table = _make_table(10, 4, seed=2)
    a = build_plan(table, 6, seed=3)
    b = build_plan(table, 6, seed=3)
    assert np.array_equal(a.W, b.W)
    restored = ProjectionPlan.from_dict(a.to_dict())
    assert np.array_equal(restored.W, a.W)
    assert restored.seed == 3


def test_reduce_hand_table_to_one_dimension():
    plan = build_plan(HAND_TABLE, 1)
    assert plan.kind == ProjectionKind.REDUCE
    np.testing.assert_allclose(plan.eigenvalues, [1.0, 1.0 / 3.0], atol=1e-12)
    projected = apply_plan(HAND_TABLE, plan)[:, 0]
    expected = np.array([1.0 / np.sqrt(2.0), -np.sqrt(2.0), 1.0 / np.sqrt(2.0)])
    np.testing.assert_allclose(np.abs(projected), np.abs(expected), atol=1e-12)
    assert plan.retained_variance == pytest.approx(0.75)


def test_reduce_hand_table_gram_error_is_one():
    measured, predicted = gram_error(HAND_TABLE, build_plan(HAND_TABLE, 1))
    assert measured == pytest.approx(1.0, abs=1e-12)
    assert predicted == pytest.approx(1.0, abs=1e-12)


def test_reduce_columns_orthonormal_and_retained_variance():
    table = _make_table(100, 16, seed=5)
    plan = build_plan(table, 8)
    np.testing.assert_allclose(plan.W.T @ plan.W, np.eye(8), atol=1e-10)
    lam = plan.eigenvalues
    assert plan.retained_variance == pytest.approx(lam[:8].sum() / lam.sum())


def test_reduce_projects_the_mean_too():
    table = _make_table(30, 6, seed=6)
    plan = build_plan(table, 3)
    centred = table - plan.mean
    via_centre = centred @ plan.W + (plan.mean @ plan.W)[np.newaxis, :]
    np.testing.assert_allclose(apply_plan(table, plan), via_centre, atol=1e-12)


@pytest.mark.parametrize("seed", range(100))
def test_gram_error_matches_tail_eigenvalues(seed):
    table = _make_table(200, 16, seed=100 + seed)
    for d_S in range(1, 16):
        measured, predicted = gram_error(table, build_plan(table, d_S))
        assert measured == pytest.approx(predicted, rel=1e-8)


def test_gram_error_zero_at_rank():
    rng = np.random.default_rng(8)
    table = rng.standard_normal((50, 2)) @ rng.standard_normal((2, 6)) + 1.5
    measured, predicted = gram_error(table, build_plan(table, 2))
    assert measured < 1e-12
    assert predicted < 1e-12


def test_gram_error_rejects_non_reduce_plan():
    with pytest.raises(ContractError):
        gram_error(HAND_TABLE, build_plan(HAND_TABLE, 2))


@pytest.mark.parametrize("seed", range(20))
def test_pca_beats_random_projections(seed):
    table = _make_table(100, 12, seed=200 + seed)
    plan = build_plan(table, 4)
    measured, predicted = gram_error(table, plan)
    baseline = random_projection_baseline(table, 4, trials=100, seed=seed)
    assert len(baseline) == 100
    assert measured <= min(baseline) * (1.0 + 1e-9)
    assert all(err >= predicted * (1.0 - 1e-9) for err in baseline)


def test_injected_top_eigenvectors_reproduce_pca_error():
    table = _make_table(60, 10, seed=13)
    plan = build_plan(table, 3)
    measured, _ = gram_error(table, plan)
    assert gram_distortion(table, plan.W) == pytest.approx(measured, rel=1e-12)


def test_jacobi_plan_matches_lapack_error():
    table = _make_table(80, 8, seed=14)
    a = gram_error(table, build_plan(table, 3, method="lapack"))
    b = gram_error(table, build_plan(table, 3, method="jacobi"))
    assert a[0] == pytest.approx(b[0], rel=1e-8)


def test_invalid_dimensions():
    with pytest.raises(ParameterError):
        build_plan(HAND_TABLE, 0)
    with pytest.raises(ShapeError):
        apply_plan(np.ones((3, 5)), build_plan(HAND_TABLE, 1))
    with pytest.raises(ParameterError):
        random_projection_baseline(HAND_TABLE, 2, trials=5)


def test_choose_reduced_dim_and_spectrum():
    table = _make_table(100, 8, seed=15)
    lam = spectrum(table).eigenvalues
    k = choose_reduced_dim(table, 0.9)
    assert lam[:k].sum() / lam.sum() >= 0.9 - 1e-12
    if k > 1:
        assert lam[: k - 1].sum() / lam.sum() < 0.9
    assert choose_reduced_dim(table, 1.0) <= 8
