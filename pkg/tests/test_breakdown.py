import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import subspace_angles

from cellwise.breakdown import (ESTIMATORS, ContaminationSpec, OutlierGenerator, contaminate,
                                empirical_breakdown, hyperplane_attack, maxangle)
from cellwise.data import DataMatrix
from cellwise.errors import ConfigError, DataError


def test_no_contamination_is_identity():
    X = np.random.default_rng(0).standard_normal((20, 4))
    Xe, truth = contaminate(X, ContaminationSpec())
    np.testing.assert_array_equal(Xe.values, X)
    assert np.all(truth == "clean")


def test_label_precedence_and_values():
    X = np.random.default_rng(1).standard_normal((300, 6))
    spec = ContaminationSpec(0.1, 0.1, 0.1, OutlierGenerator("point", 7.0), seed=4)
    Xe, truth = contaminate(X, spec)
    assert set(np.unique(truth)) == {"clean", "case", "cell", "missing"}
    assert np.all(np.isnan(Xe.values[truth == "missing"]))
    assert np.all(Xe.values[(truth == "case") | (truth == "cell")] == 7.0)
    np.testing.assert_array_equal(Xe.values[truth == "clean"], X[truth == "clean"])
    # a case row is all case except for missing cells
    rows = (truth == "case").any(axis=1)
    assert np.all(np.isin(truth[rows], ["case", "missing"]))


def test_contamination_is_seeded():
    X = np.random.default_rng(2).standard_normal((50, 5))
    spec = ContaminationSpec(0.05, 0.1, 0.05, OutlierGenerator("shifted_normal", 5.0, 0.5), seed=9)
    a, ta = contaminate(X, spec)
    b, tb = contaminate(X, spec)
    np.testing.assert_array_equal(ta, tb)
    np.testing.assert_array_equal(a.values, b.values)


def test_case_probability_by_simulation():
    n, d = 100_000, 14
    X = np.zeros((n, d))
    _, truth = contaminate(X, ContaminationSpec(eps_cell=0.05, seed=0))
    frac = (truth == "cell").any(axis=1).mean()
    assert frac == pytest.approx(1 - 0.95 ** 14, abs=0.005)


def test_fifteen_by_ten_layout_expectations():
    # 15% outlying cells leaves about (0.85)^10 of rows fully clean
    fracs = []
    for seed in range(400):
        _, truth = contaminate(np.zeros((15, 10)), ContaminationSpec(eps_cell=0.15, seed=seed))
        fracs.append(((truth == "cell").mean(), (truth == "clean").all(axis=1).mean()))
    cell, clean_rows = np.mean(fracs, axis=0)
    assert cell == pytest.approx(0.15, abs=0.01)
    assert clean_rows == pytest.approx(0.85 ** 10, abs=0.02)


def test_rates_validated():
    with pytest.raises(ConfigError):
        contaminate(np.zeros((3, 2)), ContaminationSpec(eps_cell=1.5))
    with pytest.raises(ConfigError):
        contaminate(np.zeros((3, 2)), ContaminationSpec(eps_cell=0.1, outlier_gen=OutlierGenerator("weird")))


def test_per_column_rates():
    _, truth = contaminate(np.zeros((2000, 3)), ContaminationSpec(eps_cell=[0.0, 0.5, 1.0], seed=1))
    rates = (truth == "cell").mean(axis=0)
    assert rates[0] == 0 and rates[2] == 1 and rates[1] == pytest.approx(0.5, abs=0.05)


# --- hyperplane attack ---------------------------------------------------------------

def test_hyperplane_small_example():
    X = np.random.default_rng(0).standard_normal((15, 3))
    normal = np.array([1.0, -2.0, 0.5])
    Xa, changed = hyperplane_attack(X, normal=normal, offset=3.0)
    assert np.all(changed <= 5)
    np.testing.assert_allclose(Xa.values @ normal, 3.0, atol=1e-10)
    # exactly one cell per moved row
    assert np.all((Xa.values != X).sum(axis=1) <= 1)


def test_hyperplane_noop_on_plane():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((12, 3))
    X[:, 2] = 1.0 - X[:, 0] - X[:, 1]
    Xa, changed = hyperplane_attack(X, normal=np.ones(3), offset=1.0)
    assert changed.sum() == 0
    np.testing.assert_array_equal(Xa.values, X)


@settings(max_examples=25, deadline=None)
@given(st.integers(4, 60), st.integers(2, 6), st.integers(0, 1000))
def test_hyperplane_implosion_and_cap(n, d, seed):
    X = np.random.default_rng(seed).standard_normal((n, d))
    Xa, changed = hyperplane_attack(X, anchor_row=0)
    assert np.all(changed <= math.ceil((n - 1) / d))
    lam = np.linalg.eigvalsh(np.cov(Xa.values.T, bias=True))
    assert lam[0] <= 1e-8 * lam[-1]


def test_hyperplane_errors():
    with pytest.raises(ConfigError):
        hyperplane_attack(np.zeros((4, 2)), normal=[1.0, 0.0])
    X = DataMatrix.from_array([[1.0, np.nan], [2.0, 3.0]])
    with pytest.raises(DataError):
        hyperplane_attack(X)


# --- maxangle --------------------------------------------------------------------------

def test_maxangle_examples():
    e1, e2 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    assert maxangle(e1, e1) == 0.0
    assert maxangle(e1, e2) == pytest.approx(math.pi / 2)
    assert maxangle(e1, (e1 + e2) / math.sqrt(2)) == pytest.approx(math.pi / 4, abs=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3))
def test_maxangle_matches_scipy_and_is_basis_free(seed, k):
    rng = np.random.default_rng(seed)
    A, B = rng.standard_normal((6, k)), rng.standard_normal((6, k))
    assert maxangle(A, B) == pytest.approx(float(np.max(subspace_angles(A, B))), abs=1e-10)
    G = rng.standard_normal((k, k)) + 3 * np.eye(k)
    assert maxangle(A @ G, B) == pytest.approx(maxangle(A, B), abs=1e-10)
    Q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    assert maxangle(Q @ A, Q @ B) == pytest.approx(maxangle(A, B), abs=1e-10)


def test_maxangle_small_angles_accurate():
    eps = 1e-9
    assert maxangle([1.0, 0.0, 0.0], [1.0, eps, 0.0]) == pytest.approx(eps, rel=1e-6)


def test_maxangle_rank_deficient():
    with pytest.raises(ConfigError):
        maxangle(np.array([[1.0, 2.0], [2.0, 4.0], [0.0, 0.0]]), np.eye(3)[:, :2])


# --- empirical breakdown ------------------------------------------------------------------

X101 = np.random.default_rng(0).standard_normal((101, 5))


def test_mean_breaks_with_one_cell():
    (rep,) = empirical_breakdown("sample_mean", X101, [1])
    assert rep.broke and len(rep.displacement) == 3
    assert 0 < rep.bound <= 1


def test_median_holds_below_half():
    (rep,) = empirical_breakdown("coordwise_median", X101, [40])
    assert not rep.broke
    assert rep.displacement[-1] / rep.displacement[0] < 1.01


def test_median_breaks_at_half():
    (rep,) = empirical_breakdown("coordwise_median", X101, [51])
    assert rep.broke


def test_covariance_implodes_under_hyperplane():
    n, d = 30, 3
    X = np.random.default_rng(3).standard_normal((n, d))
    m = math.ceil((n - 1) / d)
    (rep,) = empirical_breakdown("sample_cov", X, [m], placement="hyperplane")
    assert rep.broke
    assert rep.bound == pytest.approx(m / n)
    (small,) = empirical_breakdown("sample_cov", X, [1], placement="hyperplane")
    assert not small.broke


def test_cellmcd_survives_few_cells():
    X = np.random.default_rng(4).standard_normal((60, 3))
    (rep,) = empirical_breakdown("cellmcd", X, [3])
    assert not rep.broke


def test_all_estimators_run_and_serialize():
    X = np.random.default_rng(5).standard_normal((40, 3))
    for est in ESTIMATORS:
        (rep,) = empirical_breakdown(est, X, [1], magnitudes=(1e2, 1e4))
        d = rep.to_dict()
        assert d["estimator_name"] == est and len(d["displacement"]) == 2


def test_unknown_estimator():
    with pytest.raises(ConfigError):
        empirical_breakdown("nope", X101)


def test_covariance_explodes_with_one_far_cell():
    (rep,) = empirical_breakdown("sample_cov", X101, [1])
    assert rep.broke
    assert rep.displacement[-1] / rep.displacement[-2] >= 1e5
