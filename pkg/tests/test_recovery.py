import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cosapd.recovery import (
    RecoveryConfig, _mfista, bpdn_objective, bpdn_solve, bpdn_solve_batch, extract_support, l1_eq_solve,
    op_norm_sq,
)


def _sparse(rng, N, K):
    c = np.zeros(N, dtype=complex)
    idx = rng.choice(N, K, replace=False)
    c[idx] = rng.uniform(0.5, 2.0, K) * np.exp(2j * np.pi * rng.uniform(size=K))
    return c, np.sort(idx)


def _unit(A):
    return A / np.linalg.norm(A, axis=0)


class TestConfig:
    @pytest.mark.parametrize("kw", [{"lam": -1}, {"max_iters": 0}, {"rel_tol": 0},
                                    {"support_threshold_frac": 0}, {"support_threshold_frac": 1}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            RecoveryConfig(**kw)


class TestExtractSupport:
    def test_all_zero(self):
        assert extract_support(np.zeros(5), 0.1).size == 0

    def test_dominant(self):
        c = np.full(6, 0.01)
        c[2] = 1.0
        assert extract_support(c, 0.1).tolist() == [2]

    def test_ties_kept(self):
        c = np.array([0.0, 2.0, 0.1, 2.0])
        assert extract_support(c, 0.1).tolist() == [1, 3]

    def test_non_finite(self):
        with pytest.raises(ValueError):
            extract_support(np.array([1.0, np.nan]), 0.1)


class TestBpdn:
    def test_soft_threshold_identity(self):
        est = bpdn_solve(np.eye(3), np.array([3 + 0j, 0.1, 0]), RecoveryConfig(lam=1.0))
        np.testing.assert_allclose(est.coefficients, [2, 0, 0], atol=1e-6)
        assert est.support.tolist() == [0]
        assert est.converged

    def test_phase_preserved(self):
        s = np.array([3 * np.exp(0.7j), 0.5j])
        est = bpdn_solve(np.eye(2), s, RecoveryConfig(lam=1.0))
        np.testing.assert_allclose(est.coefficients, [2 * np.exp(0.7j), 0], atol=1e-6)

    def test_least_squares_at_zero_lambda(self, rng):
        A = rng.standard_normal((6, 6)) + 6 * np.eye(6)
        s = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        est = bpdn_solve(A, s, RecoveryConfig(lam=0.0, max_iters=5000, rel_tol=1e-10))
        np.testing.assert_allclose(est.coefficients, np.linalg.solve(A, s), rtol=1e-6, atol=1e-8)

    def test_errors(self):
        with pytest.raises(ValueError):
            bpdn_solve(np.eye(3), np.ones(2), RecoveryConfig())
        with pytest.raises(ValueError):
            bpdn_solve(np.eye(2), np.array([1.0, np.inf]), RecoveryConfig())
        with pytest.raises(ValueError):
            bpdn_solve(np.eye(2), np.ones(2), RecoveryConfig(), lam=-1.0)

    def test_nonconvergence_flagged(self, rng):
        A = rng.standard_normal((20, 60))
        est = bpdn_solve(A, rng.standard_normal(20), RecoveryConfig(lam=0.01, max_iters=3))
        assert not est.converged and est.iterations == 3

    def test_objective_monotone(self, matrix_b4, rng):
        A = _unit(matrix_b4.entries)
        c, _ = _sparse(rng, A.shape[1], 3)
        s = A @ c + 0.05 * (rng.standard_normal(A.shape[0]) + 1j * rng.standard_normal(A.shape[0]))
        trace = []
        _mfista(A, s[:, None].astype(complex), np.array([0.05]), RecoveryConfig(max_iters=400, rel_tol=1e-12),
                trace=trace)
        F = np.array(trace)[:, 0]
        assert np.all(np.diff(F) <= 1e-12 * F[0])

    @given(st.floats(0.01, 100.0), st.integers(0, 2**31))
    @settings(max_examples=15, deadline=None)
    def test_scaling_covariance(self, matrix_b8, c, seed):
        rng = np.random.default_rng(seed)
        A = _unit(matrix_b8.entries)
        s = rng.standard_normal(A.shape[0]) + 1j * rng.standard_normal(A.shape[0])
        cfg = RecoveryConfig(rel_tol=1e-10, max_iters=5000)
        base = bpdn_solve(A, s, cfg, lam=0.5)
        scaled = bpdn_solve(A, c * s, cfg, lam=0.5 * c)
        tol = 1e-5 * max(1.0, np.abs(base.coefficients).max())
        np.testing.assert_allclose(scaled.coefficients / c, base.coefficients, atol=tol)

    def test_batch_matches_single(self, matrix_b4, rng):
        A = _unit(matrix_b4.entries)
        S = rng.standard_normal((A.shape[0], 4)) + 1j * rng.standard_normal((A.shape[0], 4))
        lams = np.array([0.1, 0.5, 1.0, 2.0])
        cfg = RecoveryConfig()
        batch = bpdn_solve_batch(A, S, cfg, lams)
        for j in range(4):
            one = bpdn_solve(A, S[:, j], cfg, lam=lams[j])
            # equal up to BLAS rounding between matrix and vector products
            np.testing.assert_allclose(batch[j].coefficients, one.coefficients, atol=1e-8)
            assert abs(batch[j].iterations - one.iterations) <= 2

    def test_three_targets_quarter_rate(self, matrix_b4):
        # noise-free, small lambda; debiasing refits amplitudes on the support
        A = matrix_b4.entries
        cfg = RecoveryConfig(debias=True)
        ok = 0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            c, idx = _sparse(rng, A.shape[1], 3)
            s = A @ c
            est = bpdn_solve(A, s, cfg, lam=1e-4 * np.abs(A.conj().T @ s).max())
            hit = np.array_equal(est.support, idx) and np.allclose(est.coefficients[idx], c[idx], rtol=1e-2)
            ok += hit
        assert ok >= 19

    def test_objective_helper(self):
        assert bpdn_objective(np.eye(2), np.array([1.0, 0.0]), np.zeros(2), 1.0) == pytest.approx(0.5)


class TestL1Eq:
    def test_zero(self, matrix_b8):
        est = l1_eq_solve(matrix_b8.entries, np.zeros(matrix_b8.M))
        assert not np.any(est.coefficients) and est.support.size == 0

    def test_single_column(self, matrix_b8):
        est = l1_eq_solve(matrix_b8.entries, matrix_b8.entries[:, 100] * (1 - 2j))
        assert est.support.tolist() == [100]
        assert est.coefficients[100] == pytest.approx(1 - 2j, rel=1e-6)

    def test_two_targets_quarter_rate(self, matrix_b4):
        A = matrix_b4.entries
        ok = 0
        for seed in range(20):
            c, idx = _sparse(np.random.default_rng(seed), A.shape[1], 2)
            ok += np.array_equal(l1_eq_solve(A, A @ c).support, idx)
        assert ok == 20


class TestOpNorm:
    def test_matches_svd(self, matrix_b4):
        A = matrix_b4.entries
        # power iteration approaches from below; the solver adds a 10% margin
        est, true = op_norm_sq(A), np.linalg.norm(A, 2) ** 2
        assert est <= true * (1 + 1e-9)
        assert est == pytest.approx(true, rel=1e-2)

    def test_zero(self):
        assert op_norm_sq(np.zeros((3, 4))) == 0.0
