"""
Stage I Tests - bounds, proximal maps, and the ADMM solver against oracles.
"""

import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from sps_grf.errors import DimensionMismatchError, InvalidParameterError
from sps_grf.kernels import LocationSet
from sps_grf.sampler import distance_weights, sample_covariance, sample_grf, sample_locations, true_precision
from sps_grf.stage1_admm import (
    Stage1Config,
    clip_spectrum,
    effective_bounds,
    prior_lower_bound,
    prox_phi,
    prox_psi,
    solve_stage1,
    stage1_objective,
    theory_alpha,
)

from .conftest import prox_logdet_oracle, proximal_gradient_oracle, random_spd, se_params

TIGHT = dict(rho0=1.0, rho_growth=1.0, eps_primal=1e-10, eps_dual=1e-10, max_iters=50000)


def _instance(rng, n=5, alpha=0.05):
    S = random_spd(rng, n, 0.5, 1.5)
    W = distance_weights(LocationSet(rng.uniform(0.0, 2.0, size=(n, 2))))
    return S, W, alpha


class TestConfig:
    """Defaults and validation."""

    def test_resolve_defaults(self):
        cfg = Stage1Config().resolve(25)
        assert cfg.alpha == pytest.approx(0.2)
        assert cfg.rho0 == 25.0
        assert cfg.rho_max == 25.0 * 1e6

    def test_explicit_values_survive_resolve(self):
        cfg = Stage1Config(alpha=0.7, rho0=3.0).resolve(100)
        assert cfg.alpha == 0.7 and cfg.rho0 == 3.0

    def test_invalid(self):
        with pytest.raises(InvalidParameterError):
            Stage1Config(alpha=0.0)
        with pytest.raises(InvalidParameterError):
            Stage1Config(a_star=2.0, b_star=1.0)
        with pytest.raises(InvalidParameterError):
            Stage1Config(rho_growth=0.9)
        with pytest.raises(InvalidParameterError):
            Stage1Config(max_iters=0)

    def test_prior_lower_bound(self):
        assert prior_lower_bound(10, 8.0, 2.0) == pytest.approx(0.01)

    def test_theory_alpha(self):
        assert theory_alpha(8.0, 4.0, 100) == pytest.approx(40.0 * 12.0 / 10.0)


class TestEffectiveBounds:
    """The four branches of the spectral box."""

    def test_pass_through(self):
        assert effective_bounds(np.eye(2), np.ones((2, 2)), 1.0, 0.5, 2.0) == (0.5, 2.0)

    def test_scalar_default_branch(self):
        a, b = effective_bounds([[2.0]], [[1.0]], 1.0, 0.0, math.inf)
        assert a == pytest.approx(1.0 / 3.0)
        assert b == pytest.approx(1.0)

    def test_finite_upper_only(self):
        a, b = effective_bounds([[2.0]], [[1.0]], 1.0, 0.0, 0.25)
        assert (a, b) == (0.25, 0.25)
        a, b = effective_bounds([[2.0]], [[1.0]], 1.0, 0.0, 5.0)
        assert a == pytest.approx(1.0 / 3.0) and b == 5.0

    def test_finite_lower_only(self):
        a, b = effective_bounds([[2.0]], [[1.0]], 1.0, 0.1, math.inf)
        assert a == 0.1
        assert b == pytest.approx(0.1 * max(3.0, 10.0))

    def test_zero_weight_rejected(self):
        with pytest.raises(InvalidParameterError):
            effective_bounds(np.eye(2), np.zeros((2, 2)), 1.0, 0.0, math.inf)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            effective_bounds(np.eye(3), np.ones((2, 2)), 1.0, 0.0, math.inf)


class TestProxPsi:
    """Eigen-prox of <S,P> - logdet P over a I <= P <= b I."""

    def test_golden_ratio(self):
        P = prox_psi(np.eye(3), np.zeros((3, 3)), 1.0, 0.1, 10.0)
        np.testing.assert_allclose(P, (1.0 + math.sqrt(5.0)) / 2.0 * np.eye(3), atol=1e-12)

    def test_upper_clamp(self):
        P = prox_psi(np.eye(3), np.zeros((3, 3)), 1.0, 0.1, 1.2)
        np.testing.assert_allclose(P, 1.2 * np.eye(3), atol=1e-12)

    def test_large_negative_shift_stays_accurate(self):
        P = prox_psi(-1e8 * np.eye(2), np.zeros((2, 2)), 1.0, 1e-12, 1.0)
        np.testing.assert_allclose(np.diag(P), 1e-8, rtol=1e-6)

    def test_matches_gradient_oracle(self, rng):
        worst = 0.0
        for _ in range(100):
            n = int(rng.integers(2, 7))
            P_bar = random_spd(rng, n, 0.2, 2.0)
            S = random_spd(rng, n, 0.2, 2.0)
            rho = float(rng.uniform(0.5, 5.0))
            ours = prox_psi(P_bar, S, rho, 1e-6, 1e6)
            oracle = prox_logdet_oracle(P_bar, S, rho)
            worst = max(worst, float(np.max(np.abs(ours - oracle))))
        assert worst <= 1e-6, worst

    def test_invalid_bounds(self):
        with pytest.raises(InvalidParameterError):
            prox_psi(np.eye(2), np.eye(2), 1.0, 0.0, 1.0)


class TestProxPhi:
    """Weighted soft threshold with a nonnegative diagonal."""

    def test_shrink(self):
        P = np.array([[1.0, 5.0], [5.0, 1.0]])
        out = prox_phi(P, np.full((2, 2), 2.0), 1.0, 1.0)
        assert out[0, 1] == 3.0

    def test_to_zero(self):
        P = np.array([[1.0, -1.0], [-1.0, 1.0]])
        assert prox_phi(P, np.full((2, 2), 2.0), 1.0, 1.0)[0, 1] == 0.0

    def test_negative_diagonal_clamped(self):
        P = np.array([[-0.5, 0.0], [0.0, 4.0]])
        out = prox_phi(P, np.full((2, 2), 0.1), 1.0, 1.0)
        assert out[0, 0] == 0.0
        assert out[1, 1] == pytest.approx(3.9)

    def test_matches_scalar_oracle(self, rng):
        worst = 0.0
        for _ in range(100):
            n = int(rng.integers(2, 7))
            A = rng.normal(scale=2.0, size=(n, n))
            P_bar = 0.5 * (A + A.T)
            X = rng.uniform(0.0, 3.0, size=(n, 2))
            G = distance_weights(LocationSet(X)).G
            alpha, rho = float(rng.uniform(0.1, 2.0)), float(rng.uniform(0.5, 5.0))
            ours = prox_phi(P_bar, G, alpha, rho)
            for i in range(n):
                for j in range(n):
                    lo = 0.0 if i == j else -abs(P_bar[i, j]) - 1.0
                    hi = abs(P_bar[i, j]) + 1.0
                    res = minimize_scalar(
                        lambda p: alpha * G[i, j] * abs(p) + 0.5 * rho * (p - P_bar[i, j]) ** 2,
                        bounds=(lo, hi), method="bounded", options={"xatol": 1e-10},
                    )
                    worst = max(worst, abs(ours[i, j] - res.x))
        assert worst <= 1e-6, worst


class TestSolveStage1:
    """ADMM solutions."""

    def test_scalar(self):
        est = solve_stage1([[2.0]], [[1.0]], Stage1Config(alpha=1.0, **TIGHT))
        assert est.converged
        assert est.P_hat[0, 0] == pytest.approx(1.0 / 3.0, abs=1e-6)

    def test_tiny_alpha_recovers_inverse(self, rng):
        S, W, _ = _instance(rng, n=3)
        est = solve_stage1(S, W, Stage1Config(alpha=1e-8, **TIGHT))
        assert est.converged
        np.testing.assert_allclose(est.P_hat, np.linalg.inv(S), atol=1e-4)

    def test_matches_proximal_gradient_oracle(self, rng):
        """20 instances, four bound branches, inactive bounds."""
        for k in range(20):
            alpha = (0.02, 0.05, 0.1)[k % 3]
            S, W, _ = _instance(rng, alpha=alpha)
            oracle = proximal_gradient_oracle(S, W.G, alpha)
            lam = np.linalg.eigvalsh(oracle)
            a_star, b_star = [(0.5 * lam[0], 2.0 * lam[-1]), (0.0, 2.0 * lam[-1]),
                              (0.5 * lam[0], math.inf), (0.0, math.inf)][k % 4]
            est = solve_stage1(S, W, Stage1Config(alpha=alpha, a_star=a_star, b_star=b_star, **TIGHT))
            assert est.converged, k
            np.testing.assert_allclose(est.P_hat, oracle, atol=1e-4, err_msg=f"instance {k}")

    def test_kkt_certificate(self, rng):
        n = 5
        for k in range(10):
            alpha = (0.02, 0.05, 0.1)[k % 3]
            S, W, _ = _instance(rng, n=n, alpha=alpha)
            cfg = Stage1Config(alpha=alpha, **TIGHT)
            est = solve_stage1(S, W, cfg)
            assert est.converged
            tol = 10.0 * cfg.eps_primal * n
            grad = S - np.linalg.inv(est.P_hat)
            for i in range(n):
                for j in range(n):
                    if i == j:
                        continue
                    p = est.P_hat[i, j]
                    if p != 0.0:
                        assert abs(grad[i, j] + alpha * W.G[i, j] * np.sign(p)) <= tol
                    else:
                        assert abs(grad[i, j]) <= alpha * W.G[i, j] + tol

    def test_spectral_feasibility(self, rng):
        for seed in range(5):
            locs = sample_locations(30, 2, seed, domain=(0.0, 10.0))
            ds = sample_grf(locs, se_params(2.0, 1.0, 0.1), 3, seed)
            est = solve_stage1(sample_covariance(ds), distance_weights(locs), Stage1Config())
            lam = np.linalg.eigvalsh(est.P_hat)
            assert est.a_eff - 1e-8 <= lam[0]
            assert lam[-1] <= est.b_eff + 1e-8
            np.testing.assert_array_equal(est.P_hat, est.P_hat.T)

    def test_residuals_shrink_with_constant_penalty(self, rng):
        for _ in range(5):
            S, W, alpha = _instance(rng, alpha=0.1)
            cfg = Stage1Config(alpha=alpha, rho0=1.0, rho_growth=1.0, eps_primal=1e-300,
                               eps_dual=1e-300, max_iters=80, keep_history=True)
            trace = solve_stage1(S, W, cfg).trace_frame()
            combined = np.maximum(trace["primal_residual"], trace["dual_residual"]).to_numpy()
            for ell in (10, 20, 40):
                if combined[ell - 1] > 1e-9:
                    assert combined[2 * ell - 1] < combined[ell - 1], ell

    def test_weight_monotonicity(self):
        S = np.array([[1.0, 0.6], [0.6, 1.0]])
        magnitudes = []
        for g in np.linspace(0.05, 3.0, 12):
            G = np.array([[1.0, g], [g, 1.0]])
            est = solve_stage1(S, G, Stage1Config(alpha=0.3, **TIGHT))
            magnitudes.append(abs(est.P_hat[0, 1]))
        assert np.all(np.diff(magnitudes) <= 1e-6), magnitudes

    def test_non_convergence_is_flagged(self, rng):
        S, W, alpha = _instance(rng)
        est = solve_stage1(S, W, Stage1Config(alpha=alpha, max_iters=1))
        assert not est.converged
        assert est.iterations == 1
        assert est.warnings and "max_iters" in est.warnings[0]

    def test_trace_frame_columns(self, rng):
        S, W, alpha = _instance(rng)
        est = solve_stage1(S, W, Stage1Config(alpha=alpha, keep_history=True, max_iters=5))
        assert list(est.trace_frame().columns) == [
            "iteration", "rho", "primal_residual", "dual_residual", "objective"]
        assert len(est.trace_frame()) == est.iterations

    def test_objective_reported(self, rng):
        S, W, alpha = _instance(rng)
        est = solve_stage1(S, W, Stage1Config(alpha=alpha))
        assert est.objective == pytest.approx(stage1_objective(S, W, alpha, est.P_hat))
        assert stage1_objective(S, W, alpha, -np.eye(5)) == math.inf


class TestErrorBound:
    """|P_hat - P*|_F <= 2 b*^2 (1 + G_max) alpha n with the error-bound alpha."""

    def test_bound_holds_in_most_replicates(self):
        params = se_params(2.0, 1.0, 0.5)
        n, N, hits = 20, 10, 0
        for rep in range(50):
            locs = sample_locations(n, 2, rep, domain=(0.0, 10.0))
            P_star = true_precision(locs, params)
            b_star = float(np.linalg.eigvalsh(P_star)[-1])
            W = distance_weights(locs)
            alpha = theory_alpha(params.theta_v, params.theta_0, N)
            ds = sample_grf(locs, params, N, rep)
            est = solve_stage1(sample_covariance(ds), W, Stage1Config(alpha=alpha, b_star=b_star))
            bound = 2.0 * b_star ** 2 * (1.0 + W.G_max) * alpha * n
            hits += np.linalg.norm(est.P_hat - P_star) <= bound
        assert hits >= 45


class TestClipSpectrum:
    def test_inside_is_unchanged(self):
        M = np.diag([1.0, 2.0])
        np.testing.assert_array_equal(clip_spectrum(M, 0.5, 3.0), M)

    def test_outside_is_clipped(self):
        out = clip_spectrum(np.diag([0.1, 5.0]), 0.5, 3.0)
        np.testing.assert_allclose(np.linalg.eigvalsh(out), [0.5, 3.0], atol=1e-12)
