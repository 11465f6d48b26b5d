import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_stable
from linsysid import estimator as est
from linsysid import lds
from linsysid import numerics as nx
from linsysid.errors import NotPositiveDefinite, OverflowedTrajectory, SingularDesign
from linsysid.lds import LinearSystem, Trajectory


def test_noiseless_exact_recovery():
    A = np.array([[0.9, 0.2, 0.0], [-0.1, 0.5, 0.3], [0.0, 0.4, -0.7]])
    tr = lds.simulate(LinearSystem(A, sigma2=0.0), 10, nx.RngStream(0), x0=[1.0, -2.0, 0.5])
    rep = est.ols_fit_trajectory(tr, truth=LinearSystem(A))
    assert rep.op_error <= 1e-10
    assert not rep.rank_deficient


def test_noiseless_diagonal_recovery():
    A = np.diag([0.3, -0.8])
    tr = lds.simulate(LinearSystem(A, sigma2=0.0), 5, nx.RngStream(0), x0=[1.0, 1.0])
    assert np.allclose(est.ols_fit_trajectory(tr).A_hat, A, atol=1e-12)


def test_one_point_regression():
    rep = est.ols_fit(est.Regression([[1.0]], [[0.5]]))
    assert rep.A_hat[0, 0] == 0.5
    assert rep.op_error is None


def test_fixed_design_sample_means():
    rng = np.random.default_rng(0)
    d, m = 3, 50
    A = rng.standard_normal((d, d))
    X = np.tile(np.eye(d), (m, 1))
    E = rng.standard_normal((m * d, d))
    Y = X @ A.T + E
    rep = est.ols_fit(est.Regression(X, Y))
    means = Y.reshape(m, d, d).mean(axis=0)  # row j: mean response when X = e_j
    assert np.allclose(rep.A_hat, means.T, atol=1e-12)
    oracle = np.linalg.lstsq(X, Y, rcond=None)[0].T
    assert np.allclose(rep.A_hat, oracle, atol=1e-12)


def test_trajectory_scalar_states():
    tr = Trajectory(states=np.array([[0.0], [1.0], [0.5]]))
    assert est.ols_fit_trajectory(tr).A_hat[0, 0] == 0.5


def test_overflowed_trajectory_raises():
    tr = lds.simulate(LinearSystem.scalar(10.0), 300, nx.RngStream(0))
    with pytest.raises(OverflowedTrajectory):
        est.ols_fit_trajectory(tr)


def test_rank_deficient_reports_min_norm():
    X = np.array([[1.0, 2.0], [2.0, 4.0], [-1.0, -2.0]])
    Y = np.array([[1.0], [3.0], [0.0]])
    rep = est.ols_fit(est.Regression(X, Y))
    assert rep.rank_deficient
    assert np.allclose(rep.A_hat, (np.linalg.pinv(X) @ Y).T, atol=1e-12)


def test_inputs_estimate_concatenation():
    A, B = np.array([[0.5, 0.1], [0.0, 0.2]]), np.array([[1.0], [-1.0]])
    sys_ = LinearSystem(A, sigma2=0.0, B=B, input_sigma2=1.0)
    tr = lds.simulate(sys_, 20, nx.RngStream(4), x0=[1.0, 0.0])
    rep = est.ols_fit_trajectory(tr, truth=sys_)
    assert rep.A_hat.shape == (2, 3)
    assert rep.op_error <= 1e-10


def test_report_json_fields():
    rep = est.ols_fit(est.Regression([[1.0]], [[0.5]]), truth=[[0.4]])
    d = rep.to_dict()
    assert set(d) == {"a_hat", "op_error", "sigma_min_x", "rank_deficient"}
    assert d["op_error"] == pytest.approx(0.1)


def test_median_error_decreases_with_horizon():
    sys_ = LinearSystem.scalar(0.9)
    meds = []
    for T in (250, 1000, 4000):
        X, _ = lds.simulate_batch(sys_, T, 1, range(T << 12, (T << 12) + 500))
        meds.append(np.median(est.batch_ols_errors(X, sys_.A)[0]))
    assert meds[0] > meds[1] > meds[2]


def test_batch_errors_match_single_fits():
    for d in (1, 3):
        A = random_stable(np.random.default_rng(d), d, 0.9)
        sys_ = LinearSystem(A)
        X, _ = lds.simulate_batch(sys_, 40, 2, range(5))
        err, smin, bad = est.batch_ols_errors(X, A)
        for i in range(5):
            rep = est.ols_fit(est.Regression(X[i, :-1], X[i, 1:]), truth=A)
            assert err[i] == pytest.approx(rep.op_error, rel=1e-10, abs=1e-14)
            assert smin[i] == pytest.approx(rep.sigma_min_X, rel=1e-10)
            assert bad[i] == rep.rank_deficient


# --- whitened ----------------------------------------------------------------

def test_whitened_matches_ols_for_scaled_identity():
    rng = np.random.default_rng(3)
    X, Y = rng.standard_normal((30, 3)), rng.standard_normal((30, 3))
    base = est.ols_fit(est.Regression(X, Y)).A_hat
    for c in (1.0, 4.0, 0.01):
        w = est.whitened_ols_fit(est.Regression(X, Y), c * np.eye(3)).A_hat
        assert np.allclose(w, base, atol=1e-12, rtol=0)


def test_whitened_anisotropic_noiseless_recovery():
    rng = np.random.default_rng(4)
    A = rng.standard_normal((3, 3))
    X = rng.standard_normal((10, 3))
    M = rng.standard_normal((3, 3))
    Sigma = M @ M.T + 0.5 * np.eye(3)
    rep = est.whitened_ols_fit(est.Regression(X, X @ A.T), Sigma, truth=A)
    assert rep.op_error <= 1e-10


def test_whitened_rejects_indefinite():
    with pytest.raises(NotPositiveDefinite):
        est.whitened_ols_fit(est.Regression(np.eye(2), np.eye(2)), np.diag([1.0, -1.0]))


# --- fixed-design floor ------------------------------------------------------

def test_floor_examples():
    assert est.fixed_design_error_floor(np.eye(4), 4) == pytest.approx((4.0, 4.0))
    tr, mn = est.fixed_design_error_floor(np.diag([1.0, 10.0]), 1)
    assert tr == pytest.approx(1.01, abs=1e-14)
    assert mn == pytest.approx(1.0, abs=1e-14)
    with pytest.raises(SingularDesign):
        est.fixed_design_error_floor(np.array([[1.0, 1.0], [1.0, 1.0]]), 1)


def test_floor_below_monte_carlo_error():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((8, 2))
    n, trials = 2, 10 ** 4
    E = nx.trial_normals(6, range(trials), 8 * n, 1.0).reshape(trials, 8, n)
    pinv = np.linalg.pinv(X)
    sq = np.array([np.linalg.norm(pinv @ e, 2) ** 2 for e in E])
    mean, se = sq.mean(), sq.std(ddof=1) / math.sqrt(trials)
    assert mean >= max(est.fixed_design_error_floor(X, n)) - 3 * se


# --- properties --------------------------------------------------------------

instances = st.tuples(st.integers(1, 5), st.integers(0, 6), st.integers(0, 2 ** 31))


def make_instance(d, extra, seed):
    rng = np.random.default_rng(seed)
    T = d + extra
    X = rng.standard_normal((T, d)) * rng.uniform(0.1, 10)
    A = rng.standard_normal((d, d))
    E = rng.standard_normal((T, d))
    return X, A, E


@settings(max_examples=100, deadline=None)
@given(instances)
def test_residual_orthogonality(arg):
    X, A, E = make_instance(*arg)
    Y = X @ A.T + E
    A_hat = est.ols_fit(est.Regression(X, Y)).A_hat
    assert np.linalg.norm(X.T @ (Y - X @ A_hat.T)) <= 1e-8 * max(np.linalg.norm(X.T @ Y), 1.0)


@settings(max_examples=100, deadline=None)
@given(instances)
def test_error_identity_and_bound_chain(arg):
    X, A, E = make_instance(*arg)
    rep = est.ols_fit(est.Regression(X, X @ A.T + E), truth=A)
    pinv_E = (np.linalg.pinv(X) @ E).T
    assert np.linalg.norm(rep.A_hat - A - pinv_E) <= 1e-10 * max(1.0, np.linalg.norm(pinv_E))
    U = np.linalg.svd(X, full_matrices=False)[0]
    chain = np.linalg.norm(U.T @ E, 2) / rep.sigma_min_X
    assert rep.op_error <= chain * (1 + 1e-9)
