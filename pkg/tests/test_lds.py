import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_stable
from linsysid import lds
from linsysid import numerics as nx
from linsysid.errors import NoFeasibleK
from linsysid.lds import LinearSystem


def rel_fro(A, B):
    return np.linalg.norm(A - B) / np.linalg.norm(B)


# --- systems and simulation --------------------------------------------------

def test_system_validation():
    with pytest.raises(ValueError):
        LinearSystem(np.ones((2, 3)))
    with pytest.raises(ValueError):
        LinearSystem(np.eye(2), B=np.ones((3, 1)))
    with pytest.raises(ValueError):
        LinearSystem(np.eye(2), sigma2=-1)
    s = LinearSystem(np.eye(2), B=np.ones((2, 1)), input_sigma2=0.5)
    assert s.d == 2 and s.m == 1 and s.has_inputs


def test_simulate_zero_dynamics_is_white_noise():
    sys_ = LinearSystem(np.zeros((2, 2)))
    X, bad = lds.simulate_batch(sys_, 3, 0, range(10 ** 4))
    assert not bad.any()
    assert np.array_equal(X[:, 0], np.zeros((10 ** 4, 2)))
    cov = X[:, 2].T @ X[:, 2] / 10 ** 4
    assert rel_fro(cov, np.eye(2)) < 0.05


def test_simulate_matches_noise_when_a_is_zero():
    sys_ = LinearSystem.scalar(0.0)
    tr = lds.simulate(sys_, 5, nx.RngStream(3))
    eta = nx.gaussian_vector(nx.RngStream(3), 5)
    assert np.array_equal(tr.states[1:, 0], eta)


def test_simulate_noiseless_fixed_point():
    sys_ = LinearSystem(np.eye(3), sigma2=0.0)
    tr = lds.simulate(sys_, 10, nx.RngStream(0), x0=[1.0, 0.0, 0.0])
    assert np.array_equal(tr.states, np.tile([1.0, 0.0, 0.0], (11, 1)))


def test_simulate_covariance_matches_gramian():
    rng = np.random.default_rng(0)
    A = random_stable(rng, 3, 0.9)
    sys_ = LinearSystem(A, sigma2=2.0)
    X, _ = lds.simulate_batch(sys_, 20, 5, range(10 ** 4))
    emp = X[:, 20].T @ X[:, 20] / 10 ** 4 / 2.0
    assert rel_fro(emp, lds.gramian_series(sys_, 20).gramian(20)) < 0.05


def test_simulate_deterministic_and_batch_identical():
    A = random_stable(np.random.default_rng(1), 3)
    sys_ = LinearSystem(A, sigma2=0.7)
    one = lds.simulate(sys_, 50, nx.RngStream(9, 4))
    again = lds.simulate(sys_, 50, nx.RngStream(9, 4))
    assert np.array_equal(one.states, again.states)
    X, _ = lds.simulate_batch(sys_, 50, 9, [2, 4, 6])
    assert np.array_equal(X[1], one.states)


def test_simulate_overflow_flag():
    tr = lds.simulate(LinearSystem.scalar(10.0), 200, nx.RngStream(0))
    assert tr.overflowed
    tr = lds.simulate(LinearSystem.scalar(0.5), 200, nx.RngStream(0))
    assert not tr.overflowed


def test_simulate_with_inputs():
    sys_ = LinearSystem(np.zeros((2, 2)), sigma2=0.0, B=np.eye(2), input_sigma2=4.0)
    tr = lds.simulate(sys_, 6, nx.RngStream(2))
    assert tr.inputs.shape == (6, 2)
    assert np.allclose(tr.states[1:], tr.inputs)


def test_simulate_rejects_bad_horizon():
    with pytest.raises(ValueError):
        lds.simulate(LinearSystem.scalar(0.5), 0, nx.RngStream(0))


def test_trajectory_csv_roundtrip():
    tr = lds.simulate(LinearSystem(np.diag([0.5, -0.2])), 7, nx.RngStream(1))
    text = tr.to_csv()
    lines = text.splitlines()
    assert lines[0] == "t,x_0,x_1"
    assert len(lines) == 9
    back = lds.Trajectory.from_csv(text)
    assert np.array_equal(back.states, tr.states)
    with pytest.raises(ValueError):
        lds.Trajectory.from_csv("time,x\n0,1\n")


# --- Gramians ----------------------------------------------------------------

def test_gramian_scalar_value():
    gs = lds.gramian_series(LinearSystem.scalar(0.5), 3)
    assert gs.gramian(3)[0, 0] == pytest.approx(1.3125, abs=1e-15)


def test_gramian_identity_dynamics():
    gs = lds.gramian_series(LinearSystem(np.eye(3)), 9)
    for t in range(1, 10):
        assert np.allclose(gs.gramian(t), t * np.eye(3))


def test_gramian_scaled_orthogonal():
    O = nx.matrix_exp(nx.random_skew(nx.RngStream(4), 4))
    gs = lds.gramian_series(LinearSystem(0.8 * O), 12)
    for t in (1, 5, 12):
        assert np.allclose(gs.gramian(t), lds.scalar_gramian(0.8, t) * np.eye(4), atol=1e-12)
    closed = lds.ScaledIdentityGramians(0.8, 4, 12)
    assert closed.logdet(12) == pytest.approx(gs.logdet(12), abs=1e-12)
    assert closed.lambda_min(5) == pytest.approx(gs.lambda_min(5), abs=1e-12)


def test_gramian_series_invariants():
    rng = np.random.default_rng(7)
    for i in range(200):
        d = 1 + i % 8
        A = random_stable(rng, d)
        T = 1 + int(rng.integers(1, 200))
        gs = lds.gramian_series(LinearSystem(A), T)
        G = gs.gramians
        assert np.array_equal(G[0], np.eye(d))
        nxt = np.eye(d) + A @ G[:-1] @ A.T
        assert np.all(np.linalg.norm(G[1:] - nxt, axis=(1, 2))
                      <= 1e-10 * np.linalg.norm(G[1:], axis=(1, 2)))
        assert np.all(gs.lambda_min_series >= 1 - 1e-9)
        if T > 1:
            assert np.all(np.linalg.eigvalsh(G[1:] - G[:-1])[:, 0] >= -1e-9)


def test_gramian_summaries_match_numpy():
    A = random_stable(np.random.default_rng(8), 4)
    gs = lds.gramian_series(LinearSystem(A), 30)
    ev = np.linalg.eigvalsh(gs.gramians)
    assert np.allclose(gs.lambda_min_series, ev[:, 0])
    assert np.allclose(gs.lambda_max_series, ev[:, -1])
    assert np.allclose(gs.logdet_series, np.linalg.slogdet(gs.gramians)[1])
    assert np.allclose(gs.trace_series, ev.sum(axis=1))


def test_control_gramian_recursion():
    A = np.array([[0.5, 0.1], [0.0, 0.3]])
    B = np.array([[1.0], [2.0]])
    gs = lds.gramian_series(LinearSystem(A, B=B, input_sigma2=1.0), 5)
    assert np.allclose(gs.control_gramian(1), B @ B.T)
    assert np.allclose(gs.control_gramian(3), B @ B.T + A @ gs.control_gramian(2) @ A.T)


def test_scalar_gramian_examples():
    assert all(lds.scalar_gramian(0.0, t) == 1.0 for t in (1, 2, 50))
    assert lds.scalar_gramian(1.0, 7) == 7.0
    assert lds.scalar_gramian(-1.0, 7) == 7.0
    assert lds.scalar_gramian(0.5, 3) == pytest.approx(1.3125, rel=1e-15)
    assert lds.scalar_gramian(1.1, 4) == pytest.approx(sum(1.21 ** s for s in range(4)), rel=1e-14)
    assert lds.scalar_gramian(3.0, 10 ** 6) == math.inf
    with pytest.raises(ValueError):
        lds.scalar_gramian(0.5, 0)


# --- block length ------------------------------------------------------------

def brute_force_k(gs, d, delta, c=1.0):
    T = gs.horizon
    best = None
    for k in range(1, T + 1):
        rhs = c * (d * math.log(d / delta) + gs.logdet(T) - gs.logdet(k))
        if T / k >= rhs:
            best = k
    return best


def test_block_length_zero_dynamics():
    gs = lds.gramian_series(LinearSystem.scalar(0.0), 100)
    assert lds.select_block_length(gs, 1, 0.1) == 43 == math.floor(100 / math.log(10))


def test_block_length_infeasible():
    gs = lds.gramian_series(LinearSystem(np.zeros((10, 10))), 1)
    with pytest.raises(NoFeasibleK):
        lds.select_block_length(gs, 10, 0.1)


def test_block_length_identity_matches_brute_force():
    gs = lds.gramian_series(LinearSystem(np.eye(2)), 10 ** 4)
    assert lds.select_block_length(gs, 2, 0.1) == brute_force_k(gs, 2, 0.1)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(20, 300), st.floats(0.01, 0.49),
       st.floats(0.2, 3.0), st.integers(0, 2 ** 31))
def test_block_length_maximal(d, T, delta, c, seed):
    A = random_stable(np.random.default_rng(seed), d)
    gs = lds.gramian_series(LinearSystem(A), T)
    try:
        k = lds.select_block_length(gs, d, delta, c)
    except NoFeasibleK:
        assert brute_force_k(gs, d, delta, c) is None
        return
    rhs = lds.block_condition_rhs(gs, k, d, delta, c)
    assert T / k >= rhs
    if k < T:
        assert T / (k + 1) < lds.block_condition_rhs(gs, k + 1, d, delta, c)
    assert k == brute_force_k(gs, d, delta, c)


def test_block_length_validates():
    gs = lds.gramian_series(LinearSystem.scalar(0.0), 10)
    with pytest.raises(ValueError):
        lds.select_block_length(gs, 1, 0.6)
    with pytest.raises(ValueError):
        lds.select_block_length(gs, 1, 0.1, c=0)


def test_diag_block_length():
    assert lds.diag_block_length(1.0, 1, math.exp(-2), 100) == 50
    with pytest.raises(NoFeasibleK):
        lds.diag_block_length(10.0, 3, 0.1, 5)
    with pytest.raises(ValueError):
        lds.diag_block_length(0.5, 1, 0.1, 100)


def test_diag_block_length_agrees_with_selector_for_orthogonal():
    O = nx.matrix_exp(nx.random_skew(nx.RngStream(2), 3))
    for T in (500, 2000, 8000):
        gs = lds.gramian_series(LinearSystem(O), T)
        k_sel = lds.select_block_length(gs, 3, 0.1)
        k_diag = lds.diag_block_length(1.0, 3, 0.1, T)
        assert 0.5 <= k_diag / k_sel <= 2.0


def test_growth_diagnostic():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        slope = lds.growth_diagnostic(LinearSystem.scalar(1.0), 400, nx.RngStream(1))
    assert 0.3 < slope < 0.7
    jordan = LinearSystem(np.array([[1.0, 1.0], [0.0, 1.0]]))
    with pytest.warns(UserWarning):
        assert lds.growth_diagnostic(jordan, 400, nx.RngStream(1)) > 1.0
