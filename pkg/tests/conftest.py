"""
Shared instances and independent oracles for the sps_grf test suite.

The oracles here never call into the code under test except for the plain
kernel/covariance constructors.
"""

import numpy as np
import pytest

from sps_grf.kernels import CovarianceParams, KernelFamily, KernelTag, LocationSet

# ============================================
# Instances
# ============================================


def random_spd(rng, n, low=0.5, high=2.0):
    """Random SPD matrix with eigenvalues in [low, high]."""
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = rng.uniform(low, high, size=n)
    M = (Q * lam) @ Q.T
    return 0.5 * (M + M.T)


def random_locations(rng, n, d=2, scale=10.0):
    return LocationSet(rng.uniform(0.0, scale, size=(n, d)))


def se_params(theta_rho=4.0, theta_v=8.0, theta_0=4.0):
    return CovarianceParams(KernelFamily(KernelTag.SQUARED_EXPONENTIAL), (theta_rho,), theta_v, theta_0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240531)


# ============================================
# Oracles
# ============================================


def soft_threshold(X, T):
    return np.sign(X) * np.maximum(np.abs(X) - T, 0.0)


def prox_logdet_oracle(P_bar, S, rho, iters=20000, tol=1e-11):
    """Gradient descent with Armijo backtracking on <S,P> - logdet P + rho/2 |P - P_bar|^2."""

    def value(P):
        sign, logdet = np.linalg.slogdet(P)
        if sign <= 0:
            return np.inf
        D = P - P_bar
        return np.sum(S * P) - logdet + 0.5 * rho * np.sum(D * D)

    P = np.eye(P_bar.shape[0])
    f = value(P)
    step = 1.0
    for _ in range(iters):
        grad = S - np.linalg.inv(P) + rho * (P - P_bar)
        grad = 0.5 * (grad + grad.T)
        g2 = np.sum(grad * grad)
        if g2 < tol ** 2:
            break
        step = min(step * 2.0, 10.0)
        while True:
            cand = P - step * grad
            fc = value(cand)
            if fc <= f - 0.5 * step * g2:
                break
            step *= 0.5
        P, f = cand, fc
    return P


def proximal_gradient_oracle(S, G, alpha, iters=200000, tol=1e-13):
    """Proximal gradient on <S,P> - logdet P + alpha <G,|P|> (bounds assumed inactive)."""

    def smooth(P):
        sign, logdet = np.linalg.slogdet(P)
        return np.inf if sign <= 0 else np.sum(S * P) - logdet

    n = S.shape[0]
    P = np.diag(1.0 / (np.diag(S) + alpha * np.diag(G)))
    f = smooth(P)
    step = 1.0
    for _ in range(iters):
        grad = S - np.linalg.inv(P)
        grad = 0.5 * (grad + grad.T)
        step = min(step * 1.5, 10.0)
        while True:
            cand = soft_threshold(P - step * grad, step * alpha * G)
            cand = 0.5 * (cand + cand.T)
            fc = smooth(cand)
            D = cand - P
            if fc <= f + np.sum(grad * D) + np.sum(D * D) / (2 * step):
                break
            step *= 0.5
        moved = np.max(np.abs(cand - P))
        P, f = cand, fc
        if moved < tol:
            break
    assert np.all(np.linalg.eigvalsh(P) > 0), "oracle left the PD cone"
    assert P.shape == (n, n)
    return P


def inner_objective_grid(r, c, d, grid_v, grid_0):
    """1/2 |v r + z d - c|^2 on a grid, expanded through the Gram entries of (r, d, c)."""
    V, Z = np.meshgrid(grid_v, grid_0, indexing="ij")
    rr, dd, cc = r @ r, d @ d, c @ c
    rd, rc, dc = r @ d, r @ c, d @ c
    return 0.5 * (V * V * rr + Z * Z * dd + cc + 2 * V * Z * rd - 2 * V * rc - 2 * Z * dc)


def grid_argmin_2d(r, c, d, low=0.0, high=10.0, coarse=1e-2, fine=1e-4, window=5):
    """Two-level grid search for the inner least squares problem."""
    gv = np.arange(low, high + coarse / 2, coarse)
    h = inner_objective_grid(r, c, d, gv, gv)
    i, j = np.unravel_index(np.argmin(h), h.shape)
    span = window * coarse
    fv = np.arange(max(low, gv[i] - span), min(high, gv[i] + span) + fine / 2, fine)
    f0 = np.arange(max(low, gv[j] - span), min(high, gv[j] + span) + fine / 2, fine)
    h2 = inner_objective_grid(r, c, d, fv, f0)
    k, m = np.unravel_index(np.argmin(h2), h2.shape)
    return fv[k], f0[m]
