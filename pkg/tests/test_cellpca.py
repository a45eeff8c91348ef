import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cellwise.breakdown import maxangle
from cellwise.cellpca import (CellPcaConfig, cellpca_objective, fast_mcd, fit_cellpca,
                              mcd_exhaustive_det, mcd_on_scores)
from cellwise.data import DataMatrix
from cellwise.errors import ConfigError, DegenerateScaleError
from cellwise.kernels import DEFAULT_RHO, RhoTanhParams, rho_tanh
from cellwise.simulation import low_rank_cells

# b, c far beyond any residual used here: rho(z) = z^2 / 2 exactly
QUADRATIC = RhoTanhParams(b=1e6, c=2e6)


def exact_subspace(n=60, d=5, k=2, seed=0):
    rng = np.random.default_rng(seed)
    V, _ = np.linalg.qr(rng.standard_normal((d, k)))
    mu = rng.standard_normal(d)
    U = rng.standard_normal((n, k)) * [3.0, 1.5][:k]
    return mu, V, U, mu + U @ V.T


def test_objective_zero_on_exact_fit():
    mu, V, U, X = exact_subspace()
    assert cellpca_objective(X, mu, V, U, np.ones(5), 1.0) <= 1e-25


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_objective_quadratic_reduction(seed):
    rng = np.random.default_rng(seed)
    mu, V, U, X = exact_subspace(seed=seed)
    X = X + rng.standard_normal(X.shape)
    X[rng.random(X.shape) < 0.1] = np.nan
    s1, s2 = rng.uniform(0.5, 2, 5), rng.uniform(0.5, 2)
    R = np.nan_to_num(X - mu - U @ V.T)
    m = np.isfinite(X).sum()
    # sum over cells of r^2 / 2, halved again by the outer quadratic, over m
    expected = np.sum(R ** 2) / (4 * m)
    got = cellpca_objective(X, mu, V, U, s1, s2, QUADRATIC, QUADRATIC)
    assert got == pytest.approx(expected, rel=1e-10)


def test_wild_cell_contribution_is_bounded():
    mu, V, U, X = exact_subspace()
    s1, s2 = np.full(5, 0.7), 0.9
    values = []
    for mag in (1e2, 1e5, 1e9):
        Y = X.copy()
        Y[4, 2] += mag
        values.append(cellpca_objective(Y, mu, V, U, s1, s2))
    m, mi = X.size, 5
    bound = s2 ** 2 / m * mi * rho_tanh(math.sqrt(0.7 ** 2 * DEFAULT_RHO.a / mi) / s2)
    assert values == pytest.approx([bound] * 3, rel=1e-12)


def test_exact_subspace_recovered():
    mu, V, U, X = exact_subspace(n=80, d=6, k=2, seed=3)
    model = fit_cellpca(DataMatrix.from_array(X), 2)
    assert maxangle(model.V, V) <= 1e-8
    assert model.objective_trace[-1] <= 1e-12


def test_single_far_cell_is_imputed():
    rng = np.random.default_rng(4)
    direction = np.array([1.0, 2.0, 2.0]) / 3
    t = rng.standard_normal(60) * 3
    X = np.outer(t, direction) + 0.05 * rng.standard_normal((60, 3))
    X[0, 0] += 25.0
    model = fit_cellpca(DataMatrix.from_array(X), 1)
    assert model.w_cell[0, 0] == 0.0
    x_imp = model.imputed[0]
    off = x_imp - model.mu - (x_imp - model.mu) @ model.V @ model.V.T
    assert np.linalg.norm(off) < 0.3


@pytest.fixture(scope="module")
def contaminated_model():
    draw = low_rank_cells(150, 8, 2, eps_cell=0.05, seed=9)
    Z = draw.X.values.copy()
    Z[np.random.default_rng(9).random(Z.shape) < 0.05] = np.nan
    return DataMatrix.from_array(Z), fit_cellpca(DataMatrix.from_array(Z), 2)


def test_model_invariants(contaminated_model):
    X, model = contaminated_model
    np.testing.assert_allclose(model.V.T @ model.V, np.eye(2), atol=1e-10)
    assert np.linalg.matrix_rank(model.fitted - model.mu, tol=1e-8) <= 2
    assert np.all((model.w_cell >= 0) & (model.w_cell <= 1))
    assert np.all((model.w_case >= 0) & (model.w_case <= 1))
    far = X.observed & (np.abs(model.std_residuals) >= DEFAULT_RHO.c)
    assert np.all(model.w_cell[far] == 0)
    np.testing.assert_allclose(model.project(model.imputed), model.fitted, atol=1e-8)
    trace = np.array(model.objective_trace)
    assert np.all(np.diff(trace) <= 0)
    assert np.all(np.isfinite(model.imputed))


def test_config_errors():
    X = DataMatrix.from_array(np.random.default_rng(0).standard_normal((30, 3)))
    with pytest.raises(ConfigError):
        fit_cellpca(X, 3)
    Z = X.values.copy()
    Z[:, 1] = 2.0
    with pytest.raises(DegenerateScaleError):
        fit_cellpca(DataMatrix.from_array(Z), 1)


# --- MCD on scores --------------------------------------------------------------------

@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_fast_mcd_matches_exhaustive(seed):
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((12, 2)) * [2.0, 1.0]
    U[:3] += rng.uniform(3, 8, 2)
    _, _, det = fast_mcd(U, 0.75)
    assert det == pytest.approx(mcd_exhaustive_det(U, 9), rel=1e-9)


def test_axis_aligned_scores_give_identity_rotation():
    rng = np.random.default_rng(1)
    U = rng.standard_normal((200, 2))
    U -= U.mean(axis=0)
    # decorrelate exactly, then stretch the first axis
    _, _, Wt = np.linalg.svd(U, full_matrices=False)
    U = U @ Wt.T * [3.0, 1.0]
    rot, _ = mcd_on_scores(U)
    np.testing.assert_allclose(np.abs(rot), np.eye(2), atol=0.05)


def test_one_dimensional_rotation_is_one():
    rot, center = mcd_on_scores(np.random.default_rng(2).standard_normal((30, 1)))
    assert rot.shape == (1, 1) and rot[0, 0] == 1.0


def diagonal_scores_with_outliers(n, seed):
    """80% clean scores with sample covariance exactly diag(4, 1), 20% far along (1, 1)."""
    rng = np.random.default_rng(seed)
    nc = int(0.8 * n)
    clean = rng.standard_normal((nc, 2))
    clean -= clean.mean(axis=0)
    _, _, Wt = np.linalg.svd(clean, full_matrices=False)
    clean = clean @ Wt.T
    clean = clean / clean.std(axis=0) * [2.0, 1.0]
    bad = np.outer(rng.uniform(6, 9, n - nc), [1.0, 1.0]) / math.sqrt(2)
    return clean, np.vstack([clean, bad])


def axis_angle(R1, R2):
    return math.acos(min(1.0, abs(float(R1[:, 0] @ R2[:, 0]))))


@pytest.mark.parametrize("seed", range(5))
def test_outliers_along_diagonal_do_not_tilt_axes(seed):
    clean, U = diagonal_scores_with_outliers(40, seed)
    rot_all, _ = mcd_on_scores(U, 0.75, n_starts=200)
    rot_clean, _ = mcd_on_scores(clean, 30 / 32, n_starts=200)
    assert axis_angle(rot_all, rot_clean) <= 0.05


def test_diagonal_outliers_against_exhaustive_search():
    clean, U = diagonal_scores_with_outliers(20, 0)
    _, C, det = fast_mcd(U, 0.75, n_starts=200)
    assert det == pytest.approx(mcd_exhaustive_det(U, 15), rel=1e-9)
    rot_clean, _ = mcd_on_scores(clean, 15 / 16, n_starts=200)
    vecs = np.linalg.eigh(C)[1][:, ::-1]
    assert axis_angle(vecs, rot_clean) <= 0.05


def test_mcd_needs_enough_rows():
    with pytest.raises(ConfigError):
        mcd_on_scores(np.zeros((4, 2)))
