"""
stage2_lsq.py - Least-squares covariance fit on the inverted precision estimate.

For a fixed range vector theta_rho the problem

    min_{theta_v, theta_0 >= 0}  1/2 | theta_v r(theta_rho) + theta_0 d - c_hat |^2

(r, d, c_hat the vectorised correlation, identity and C_hat) has a closed
form in three cases, keyed on r.c_hat against d.c_hat and d.c_hat |r|^2 / n.
What is left is a search over theta_rho: a log grid plus bounded Brent for
q = 1, multi-start Nelder-Mead plus a compass polish for q > 1.

Several blocks (segmented fits) are handled by summing their inner products;
n becomes the total point count.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.linalg import cho_solve
from scipy.optimize import minimize_scalar

from .console import log
from .errors import DimensionMismatchError, InvalidParameterError
from .kernels import CovarianceParams, KernelFamily, LocationSet, correlation_matrix
from .sampler import factorize, rng_stream
from .search import finite_difference_hessian, multistart_minimize, polish
from .stage1_admm import PrecisionEstimate

# Entries of a correlation block held in memory at once.
_STREAM_ENTRIES = 4_000_000
_LOWER_FRACTION = 1e-6
_IMPROVEMENT_SLACK = 1e-9


class ActiveCase(str, Enum):
    NUGGET_ONLY = "NuggetOnly"
    INTERIOR = "Interior"
    VARIANCE_ONLY = "VarianceOnly"


@dataclass(frozen=True)
class InnerProducts:
    """rc = r.c, dc = d.c, rr = |r|^2, n = d.d (= d.r), cc = |c|^2.

    rc_off and rr_off are the off-diagonal parts of rc and rr (r has a unit
    diagonal, so rc - dc and rr - n), summed on their own. None means "take
    the differences".
    """

    rc: float
    dc: float
    rr: float
    n: float
    cc: float = 0.0
    rc_off: Optional[float] = None
    rr_off: Optional[float] = None

    @property
    def excess_rc(self) -> float:
        return self.rc_off if self.rc_off is not None else self.rc - self.dc

    @property
    def excess_rr(self) -> float:
        return self.rr_off if self.rr_off is not None else self.rr - self.n

    def __add__(self, other: "InnerProducts") -> "InnerProducts":
        return InnerProducts(
            self.rc + other.rc, self.dc + other.dc, self.rr + other.rr,
            self.n + other.n, self.cc + other.cc,
            self.excess_rc + other.excess_rc, self.excess_rr + other.excess_rr,
        )


ZERO_PRODUCTS = InnerProducts(0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class LongVectors:
    """Dense n^2 vectors; only used for small n and in tests."""

    c_hat: np.ndarray
    r_vec: np.ndarray
    d_vec: np.ndarray

    @classmethod
    def from_matrices(cls, C_hat: np.ndarray, R: np.ndarray) -> "LongVectors":
        C_hat = np.asarray(C_hat, dtype=float)
        R = np.asarray(R, dtype=float)
        if C_hat.shape != R.shape or C_hat.ndim != 2 or C_hat.shape[0] != C_hat.shape[1]:
            raise DimensionMismatchError(f"C_hat {C_hat.shape} and R {R.shape} must be equal squares")
        return cls(C_hat.ravel(), R.ravel(), np.eye(C_hat.shape[0]).ravel())

    def inner_products(self) -> InnerProducts:
        off = self.d_vec == 0
        r_off = self.r_vec[off]
        return InnerProducts(
            rc=float(self.r_vec @ self.c_hat),
            dc=float(self.d_vec @ self.c_hat),
            rr=float(self.r_vec @ self.r_vec),
            n=float(self.d_vec @ self.d_vec),
            cc=float(self.c_hat @ self.c_hat),
            rc_off=float(r_off @ self.c_hat[off]),
            rr_off=float(r_off @ r_off),
        )


Products = Union[LongVectors, InnerProducts]


def _products(lv: Products) -> InnerProducts:
    return lv.inner_products() if isinstance(lv, LongVectors) else lv


def classify(lv: Products) -> ActiveCase:
    """Which closed form applies; equalities go to the boundary cases."""
    p = _products(lv)
    if p.excess_rc <= 0:
        return ActiveCase.NUGGET_ONLY
    if p.excess_rc * p.n >= p.dc * p.excess_rr:
        return ActiveCase.VARIANCE_ONLY
    return ActiveCase.INTERIOR


def inner_solution(lv: Products) -> Tuple[float, float]:
    """(theta_v, theta_0) minimising the inner least squares for fixed theta_rho."""
    p = _products(lv)
    case = classify(p)
    if case is ActiveCase.NUGGET_ONLY:
        return 0.0, max(0.0, p.dc / p.n)
    if case is ActiveCase.VARIANCE_ONLY:
        return max(0.0, p.rc / p.rr), 0.0
    theta_v = p.excess_rc / p.excess_rr
    return theta_v, max(0.0, p.dc / p.n - theta_v)


def inner_solution_no_nugget(lv: Products) -> float:
    p = _products(lv)
    return max(0.0, p.rc / p.rr)


def invert_precision(est: Union[PrecisionEstimate, np.ndarray]) -> np.ndarray:
    """C_hat = P_hat^-1 through a Cholesky factorization, symmetrised."""
    P = est.P_hat if isinstance(est, PrecisionEstimate) else np.asarray(est, dtype=float)
    factor = factorize(P, what="precision estimate")
    C = cho_solve(factor, np.eye(P.shape[0]))
    return 0.5 * (C + C.T)


# ============================================
# Profiled objective over theta_rho
# ============================================

class _Block:
    """One C_hat block with the location rows it belongs to."""

    def __init__(self, C_hat: np.ndarray, locs: LocationSet):
        C_hat = np.asarray(C_hat, dtype=float)
        if C_hat.shape != (locs.n, locs.n):
            raise DimensionMismatchError(f"C_hat is {C_hat.shape}, expected {(locs.n, locs.n)}")
        self.C = C_hat
        self.X = locs.X
        self.n = locs.n
        self.rows = max(1, _STREAM_ENTRIES // self.n)
        self.dc = float(np.trace(C_hat))
        self.cc = float(np.sum(C_hat * C_hat))

    def chunks(self, family: KernelFamily, theta: np.ndarray) -> Iterator[Tuple[int, np.ndarray]]:
        for start in range(0, self.n, self.rows):
            yield start, correlation_matrix(self.X[start:start + self.rows], family, theta, self.X)


def _profile(
    blocks: Sequence[_Block], family: KernelFamily, theta: np.ndarray, nugget_enabled: bool
) -> Tuple[float, float, float, InnerProducts]:
    """f(theta_rho) plus the inner solution and summed products.

    The residual is accumulated in a second pass so that f stays accurate
    near an exact fit.
    """
    total = ZERO_PRODUCTS
    cached: List[Optional[List[Tuple[int, np.ndarray]]]] = []
    for block in blocks:
        keep = block.n * block.n <= _STREAM_ENTRIES
        chunks = list(block.chunks(family, theta)) if keep else None
        rc_off = rr_off = 0.0
        for start, R in (chunks if keep else block.chunks(family, theta)):
            k = R.shape[0]
            diag = (np.arange(k), start + np.arange(k))
            RC = R * block.C[start:start + k]
            RR = R * R
            RC[diag] = 0.0
            RR[diag] = 0.0
            rc_off += float(np.sum(RC))
            rr_off += float(np.sum(RR))
        total = total + InnerProducts(
            block.dc + rc_off, block.dc, block.n + rr_off, float(block.n), block.cc, rc_off, rr_off
        )
        cached.append(chunks)

    if nugget_enabled:
        theta_v, theta_0 = inner_solution(total)
    else:
        theta_v, theta_0 = inner_solution_no_nugget(total), 0.0

    sq = 0.0
    for block, chunks in zip(blocks, cached):
        for start, R in (chunks if chunks is not None else block.chunks(family, theta)):
            k = R.shape[0]
            res = theta_v * R - block.C[start:start + k]
            res[np.arange(k), start + np.arange(k)] += theta_0
            sq += float(np.sum(res * res))
    return 0.5 * sq, theta_v, theta_0, total


def _c_hat_matrix(c_hat: np.ndarray, n: int) -> np.ndarray:
    c = np.asarray(c_hat, dtype=float)
    if c.ndim == 1:
        if c.size != n * n:
            raise DimensionMismatchError(f"c_hat has {c.size} entries, expected {n * n}")
        c = c.reshape(n, n)
    return c


def outer_objective(
    theta_rho: Sequence[float],
    c_hat: np.ndarray,
    locs: LocationSet,
    family: KernelFamily,
    nugget_enabled: bool,
) -> float:
    """f(theta_rho; c_hat) with the inner parameters profiled out."""
    block = _Block(_c_hat_matrix(c_hat, locs.n), locs)
    theta = np.atleast_1d(np.asarray(theta_rho, dtype=float))
    if np.any(theta <= 0):
        raise InvalidParameterError(f"theta_rho must be > 0, got {theta.tolist()}")
    return _profile([block], family, theta, nugget_enabled)[0]


# ============================================
# Fitting
# ============================================

@dataclass(frozen=True)
class Stage2Options:
    eps: Optional[float] = None
    n_grid: int = 96
    n_starts: int = 8
    seed: int = 0
    max_workers: Optional[int] = None
    curvature_step: float = 1e-4
    diagonal_grid: int = 32


@dataclass
class Stage2Result:
    theta_hat: CovarianceParams
    objective: float
    active_case: ActiveCase
    curvature_ok: bool
    search_ok: bool = True
    evaluations: int = 0
    hessian_eigenvalues: Tuple[float, ...] = ()
    warnings: List[str] = field(default_factory=list)

    @property
    def flagged(self) -> bool:
        return not self.search_ok

    def diagnostics(self) -> dict:
        return {
            "objective": self.objective,
            "active_case": self.active_case.value,
            "curvature_ok": self.curvature_ok,
            "search_ok": self.search_ok,
            "evaluations": self.evaluations,
        }


def _map(fun, items, max_workers: Optional[int]) -> List[float]:
    items = list(items)
    if max_workers == 1 or len(items) < 2:
        return [fun(x) for x in items]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(fun, items))


def fit_stage2_blocks(
    blocks: Sequence[Tuple[np.ndarray, LocationSet]],
    family: KernelFamily,
    nugget_enabled: bool,
    opts: Optional[Stage2Options] = None,
) -> Stage2Result:
    """Joint fit of one parameter vector to every (C_hat_k, locs_k) block."""
    opts = opts or Stage2Options()
    if not blocks:
        raise InvalidParameterError("fit_stage2 needs at least one block")
    prepared = [_Block(C, locs) for C, locs in blocks]
    X_all = np.vstack([b.X for b in prepared])
    d_max = LocationSet(X_all).diameter() if len(prepared) > 1 else LocationSet(prepared[0].X).diameter()
    if not d_max > 0:
        raise InvalidParameterError("stage II needs at least two distinct locations")
    lo = _LOWER_FRACTION * d_max
    eps = opts.eps if opts.eps is not None else _LOWER_FRACTION * d_max
    counter = itertools.count()
    warnings: List[str] = []

    def f(theta: np.ndarray) -> float:
        next(counter)
        return _profile(prepared, family, np.atleast_1d(theta), nugget_enabled)[0]

    search_ok = True
    if family.q == 1:
        grid = np.geomspace(lo, d_max, opts.n_grid)
        values = _map(lambda t: f(np.array([t])), grid, opts.max_workers)
        k = int(np.argmin(values))
        left, right = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
        res = minimize_scalar(
            lambda t: f(np.array([t])), bounds=(left, right), method="bounded",
            options={"xatol": eps},
        )
        theta_hat = np.array([float(res.x)])
        if float(res.fun) > values[k] + _IMPROVEMENT_SLACK * max(abs(values[k]), 1e-12):
            theta_hat = np.array([grid[k]])
            search_ok = False
            warnings.append(f"line search did not improve on grid point theta_rho={grid[k]:.6g}")
    else:
        diag = np.geomspace(lo, d_max, opts.diagonal_grid)
        diag_values = _map(lambda t: f(np.full(family.q, t)), diag, opts.max_workers)
        warm = np.full(family.q, diag[int(np.argmin(diag_values))])
        rng = rng_stream(opts.seed, "stage2-starts")
        random_starts = np.exp(rng.uniform(math.log(lo), math.log(d_max), size=(opts.n_starts, family.q)))
        starts = np.log(np.vstack([warm[None, :], random_starts]))
        best, results = multistart_minimize(
            lambda u: f(np.exp(u)), starts, xatol=1e-10, fatol=1e-16, max_iter=400 * family.q,
            max_workers=opts.max_workers,
        )
        trial_best = min(min(diag_values), *(r.fun for r in results))
        theta_hat, value, _ = polish(f, np.exp(best.x), resolution=eps)
        if not math.isfinite(value) or value > trial_best + _IMPROVEMENT_SLACK * max(abs(trial_best), 1e-12):
            search_ok = False
            warnings.append("no start improved on the best diagonal trial point")

    objective, theta_v, theta_0, products = _profile(prepared, family, theta_hat, nugget_enabled)
    case = classify(products) if nugget_enabled else ActiveCase.VARIANCE_ONLY
    params = CovarianceParams(family, tuple(theta_hat), theta_v, theta_0)

    steps = opts.curvature_step * theta_hat
    try:
        H = finite_difference_hessian(
            lambda t: _profile(prepared, family, t, nugget_enabled)[0], theta_hat, steps
        )
        eig = np.linalg.eigvalsh(0.5 * (H + H.T))
        curvature_ok = bool(np.all(eig > 0))
    except (ValueError, ArithmeticError, np.linalg.LinAlgError):
        eig = np.array([math.nan] * family.q)
        curvature_ok = False
    if not curvature_ok:
        warnings.append("finite-difference Hessian at theta_rho_hat is not positive definite")
    for msg in warnings:
        log(f"⚠️  {msg}", "warn")

    return Stage2Result(
        theta_hat=params,
        objective=objective,
        active_case=case,
        curvature_ok=curvature_ok,
        search_ok=search_ok,
        evaluations=next(counter),
        hessian_eigenvalues=tuple(float(e) for e in eig),
        warnings=warnings,
    )


def fit_stage2(
    C_hat: np.ndarray,
    locs: LocationSet,
    family: KernelFamily,
    nugget_enabled: bool = True,
    opts: Optional[Stage2Options] = None,
) -> Stage2Result:
    return fit_stage2_blocks([(C_hat, locs)], family, nugget_enabled, opts)


def objective_curve(
    grid: Sequence[float],
    C_hat: np.ndarray,
    locs: LocationSet,
    family: KernelFamily,
    nugget_enabled: bool = True,
) -> pd.DataFrame:
    """Rows (theta_rho, f); for q > 1 every component is set to the grid value."""
    block = _Block(np.asarray(C_hat, dtype=float), locs)
    rows = []
    for t in grid:
        theta = np.full(family.q, float(t))
        rows.append((float(t), _profile([block], family, theta, nugget_enabled)[0]))
    return pd.DataFrame(rows, columns=["theta_rho", "f"])
