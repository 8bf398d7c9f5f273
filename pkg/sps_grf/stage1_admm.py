"""
stage1_admm.py - Sparse precision estimate by ADMM.

Solves

    min  <S, P> - logdet P + alpha <G, |P|>   s.t.  a I <= P <= b I

by splitting P (log-det part, eigen prox) from Z (weighted l1 part, soft
threshold) with an unscaled multiplier W and a geometrically increasing
penalty rho.

Usage:
    est = solve_stage1(S, distance_weights(locs), Stage1Config())
    if not est.converged:
        ...
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.linalg import LinAlgError, eigh

from .console import log
from .errors import DimensionMismatchError, FactorizationError, InvalidParameterError
from .sampler import WeightMatrix

_SPECTRAL_SLACK = 1e-9


@dataclass(frozen=True)
class Stage1Config:
    """ADMM settings. None means "derive from n" (see `resolve`)."""

    alpha: Optional[float] = None
    a_star: float = 0.0
    b_star: float = math.inf
    rho0: Optional[float] = None
    rho_growth: float = 1.05
    rho_max: Optional[float] = None
    eps_primal: float = 1e-5
    eps_dual: float = 1e-5
    max_iters: int = 500
    keep_history: bool = False

    def __post_init__(self):
        if self.alpha is not None and not self.alpha > 0:
            raise InvalidParameterError(f"alpha must be > 0, got {self.alpha}")
        if not (0 <= self.a_star <= self.b_star) or not self.b_star > 0:
            raise InvalidParameterError(f"need 0 <= a* <= b*, b* > 0; got a*={self.a_star}, b*={self.b_star}")
        if self.rho0 is not None and not self.rho0 > 0:
            raise InvalidParameterError(f"rho0 must be > 0, got {self.rho0}")
        if self.rho_growth < 1:
            raise InvalidParameterError(f"rho_growth must be >= 1, got {self.rho_growth}")
        if not (self.eps_primal > 0 and self.eps_dual > 0):
            raise InvalidParameterError("tolerances must be > 0")
        if self.max_iters < 1:
            raise InvalidParameterError(f"max_iters must be >= 1, got {self.max_iters}")

    def resolve(self, n: int) -> "Stage1Config":
        """Concrete settings for an n-point problem: alpha 1/sqrt(n), rho0 n, rho_max 1e6 rho0."""
        alpha = self.alpha if self.alpha is not None else 1.0 / math.sqrt(n)
        rho0 = self.rho0 if self.rho0 is not None else float(n)
        rho_max = self.rho_max if self.rho_max is not None else 1e6 * rho0
        return replace(self, alpha=alpha, rho0=rho0, rho_max=max(rho_max, rho0))


@dataclass
class PrecisionEstimate:
    P_hat: np.ndarray
    a_eff: float
    b_eff: float
    iterations: int
    primal_residual: float
    dual_residual: float
    objective: float
    converged: bool
    alpha: float
    history: List[Tuple[int, float, float, float, float]] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.P_hat.shape[0]

    def trace_frame(self) -> pd.DataFrame:
        """Per-iteration trace (empty unless keep_history was set)."""
        return pd.DataFrame(
            self.history,
            columns=["iteration", "rho", "primal_residual", "dual_residual", "objective"],
        )


def _sym(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.T)


def _weights(G: Union[WeightMatrix, np.ndarray]) -> WeightMatrix:
    return G if isinstance(G, WeightMatrix) else WeightMatrix.from_array(G)


def prior_lower_bound(n: int, theta_v_max: float, theta_0_max: float) -> float:
    """Valid a* when theta_v + theta_0 is known to stay below the given maxima."""
    total = theta_v_max + theta_0_max
    if n < 1 or not total > 0:
        raise InvalidParameterError("need n >= 1 and a positive variance bound")
    return 1.0 / (n * total)


def theory_alpha(theta_v: float, theta_0: float, N: int, N0: int = 1) -> float:
    """Regularisation weight 40 (theta_v + theta_0) sqrt(N0 / N) from the error bound."""
    return 40.0 * (theta_v + theta_0) * math.sqrt(N0 / N)


def effective_bounds(
    S: np.ndarray,
    G: Union[WeightMatrix, np.ndarray],
    alpha: float,
    a_star: float,
    b_star: float,
) -> Tuple[float, float]:
    """Spectral box [a, b] guaranteed to contain the solution."""
    W = _weights(G)
    S = np.atleast_2d(np.asarray(S, dtype=float))
    n = S.shape[0]
    if W.n != n:
        raise DimensionMismatchError(f"S is {n} x {n} but G is {W.n} x {W.n}")
    if not W.G_min > 0:
        raise InvalidParameterError("G_min must be > 0 (duplicate locations?)")
    if not alpha > 0 or not (0 <= a_star <= b_star) or not b_star > 0:
        raise InvalidParameterError(f"invalid alpha/a*/b*: {alpha}, {a_star}, {b_star}")

    lip = float(np.linalg.norm(S, 2)) + alpha * float(np.linalg.norm(W.G, "fro"))
    b_finite = math.isfinite(b_star)
    if a_star > 0 and b_finite:
        return float(a_star), float(b_star)
    if b_finite:
        return min(float(b_star), 1.0 / lip), float(b_star)
    if a_star > 0:
        return float(a_star), (n * a_star / (alpha * W.G_min)) * max(lip, 1.0 / a_star)
    return 1.0 / lip, n / (alpha * W.G_min)


def prox_psi(P_bar: np.ndarray, S: np.ndarray, rho: float, a: float, b: float) -> np.ndarray:
    """argmin <S,P> - logdet P + (rho/2)|P - P_bar|_F^2 over a I <= P <= b I."""
    if not rho > 0 or not 0 < a <= b:
        raise InvalidParameterError(f"need rho > 0 and 0 < a <= b, got {rho}, {a}, {b}")
    try:
        mu, U = eigh(_sym(rho * np.asarray(P_bar, dtype=float) - S))
    except (LinAlgError, ValueError) as exc:
        raise FactorizationError(f"eigendecomposition failed in prox_psi: {exc}") from exc
    root = np.sqrt(mu * mu + 4.0 * rho)
    # positive root of rho t^2 - mu t - 1, cancellation-free on both signs of mu
    with np.errstate(divide="ignore"):
        lam = np.where(mu >= 0, (mu + root) / (2.0 * rho), 2.0 / (root - mu))
    lam = np.clip(lam, a, b)
    return _sym((U * lam) @ U.T)


def prox_phi(P_bar: np.ndarray, G: Union[WeightMatrix, np.ndarray], alpha: float, rho: float) -> np.ndarray:
    """Entrywise soft threshold by (alpha/rho) G; the diagonal is also kept >= 0."""
    if not rho > 0:
        raise InvalidParameterError(f"rho must be > 0, got {rho}")
    P_bar = np.asarray(P_bar, dtype=float)
    thr = (alpha / rho) * _weights(G).G
    out = np.sign(P_bar) * np.maximum(np.abs(P_bar) - thr, 0.0)
    diag = np.maximum(np.diag(P_bar) - np.diag(thr), 0.0)
    out[np.diag_indices_from(out)] = diag
    return out


def clip_spectrum(M: np.ndarray, a: float, b: float) -> np.ndarray:
    """Project a symmetric matrix onto a I <= M <= b I; unchanged if already inside."""
    M = _sym(M)
    lam, U = eigh(M)
    if lam[0] >= a - _SPECTRAL_SLACK and lam[-1] <= b + _SPECTRAL_SLACK:
        return M
    return _sym((U * np.clip(lam, a, b)) @ U.T)


def stage1_objective(S: np.ndarray, G: Union[WeightMatrix, np.ndarray], alpha: float, P: np.ndarray) -> float:
    """<S,P> - logdet P + alpha <G,|P|>; +inf when P is not PD."""
    sign, logdet = np.linalg.slogdet(P)
    if sign <= 0:
        return math.inf
    return float(np.sum(S * P) - logdet + alpha * np.sum(_weights(G).G * np.abs(P)))


def solve_stage1(S: np.ndarray, G: Union[WeightMatrix, np.ndarray], cfg: Stage1Config) -> PrecisionEstimate:
    """Run ADMM until both scaled residuals fall below tolerance or max_iters.

    Returns the sparse Z-iterate, spectrally clipped into [a, b] only when it
    leaves the box. Non-convergence comes back with converged=False.
    """
    S = _sym(np.atleast_2d(np.asarray(S, dtype=float)))
    W_mat = _weights(G)
    n = S.shape[0]
    cfg = cfg.resolve(n)
    alpha = float(cfg.alpha)
    a, b = effective_bounds(S, W_mat, alpha, cfg.a_star, cfg.b_star)

    Z = np.diag(np.clip(1.0 / (np.diag(S) + alpha * np.diag(W_mat.G)), a, b))
    W = np.zeros_like(S)
    rho = float(cfg.rho0)
    tol_pri = cfg.eps_primal * n
    tol_dual = cfg.eps_dual * n

    history: List[Tuple[int, float, float, float, float]] = []
    r_norm = s_norm = math.inf
    converged = False
    iteration = 0
    for iteration in range(1, cfg.max_iters + 1):
        P = prox_psi(Z - W / rho, S, rho, a, b)
        Z_old = Z
        Z = _sym(prox_phi(P + W / rho, W_mat, alpha, rho))
        W = W + rho * (P - Z)
        r_norm = float(np.linalg.norm(P - Z, "fro"))
        s_norm = float(rho * np.linalg.norm(Z - Z_old, "fro"))
        if cfg.keep_history:
            history.append((iteration, rho, r_norm, s_norm, stage1_objective(S, W_mat, alpha, P)))
        if r_norm <= tol_pri and s_norm <= tol_dual:
            converged = True
            break
        rho = min(cfg.rho_growth * rho, cfg.rho_max)

    P_hat = clip_spectrum(Z, a, b)
    warnings: List[str] = []
    if not converged:
        msg = (f"ADMM stopped at max_iters={cfg.max_iters} (n={n}): "
               f"primal {r_norm:.3g} > {tol_pri:.3g} or dual {s_norm:.3g} > {tol_dual:.3g}")
        warnings.append(msg)
        log(f"⚠️  {msg}", "warn")
    else:
        log(f"   Stage I converged in {iteration} iterations (n={n})", "dim")

    return PrecisionEstimate(
        P_hat=P_hat,
        a_eff=a,
        b_eff=b,
        iterations=iteration,
        primal_residual=r_norm,
        dual_residual=s_norm,
        objective=stage1_objective(S, W_mat, alpha, P_hat),
        converged=converged,
        alpha=alpha,
        history=history,
        warnings=warnings,
    )
