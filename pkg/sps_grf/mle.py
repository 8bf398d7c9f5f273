"""
mle.py - Maximum-likelihood baseline.

Minimises <S, C(theta)^-1> + logdet C(theta) with the same multi-start
Nelder-Mead engine Stage II uses, in log coordinates so every parameter
stays positive. Each evaluation costs one Cholesky factorization.

Start points are drawn log-uniform over [1e-2, max(10, diameter)] from a
single stream, so the starts for k are a prefix of the starts for k' > k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.linalg import cho_solve

from .console import log
from .errors import InvalidParameterError
from .kernels import CovarianceParams, KernelFamily, LocationSet, covariance_matrix
from .sampler import SpatialDataset, factorize, rng_stream, sample_covariance
from .search import multistart_minimize

_START_LOW = 1e-2
_START_HIGH_MIN = 10.0


def mle_objective(params: CovarianceParams, S: np.ndarray, locs: LocationSet) -> float:
    """<S, C^-1> + logdet C, constants dropped."""
    C = covariance_matrix(locs, params)
    factor = factorize(C, what="C(theta)")
    trace_term = float(np.trace(cho_solve(factor, np.asarray(S, dtype=float))))
    logdet = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    return trace_term + logdet


@dataclass
class MleFit:
    params: Optional[CovarianceParams]
    objective: float
    start_objectives: List[float]
    flagged: bool
    warnings: List[str] = field(default_factory=list)

    def diagnostics(self) -> dict:
        return {
            "objective": self.objective,
            "starts": len(self.start_objectives),
            "feasible_starts": sum(1 for v in self.start_objectives if math.isfinite(v)),
        }


def mle_starts(n_starts: int, p: int, high: float, seed: int) -> np.ndarray:
    """n_starts x p log-coordinates; a prefix of any longer draw with the same seed."""
    rng = rng_stream(seed, "mle-starts")
    return rng.uniform(math.log(_START_LOW), math.log(high), size=(n_starts, p))


def _unpack(u: np.ndarray, family: KernelFamily, nugget_enabled: bool) -> CovarianceParams:
    theta = np.exp(u)
    q = family.q
    theta_0 = float(theta[q + 1]) if nugget_enabled else 0.0
    return CovarianceParams(family, tuple(theta[:q]), float(theta[q]), theta_0)


def mle_fit(
    ds: SpatialDataset,
    family: KernelFamily,
    n_starts: int = 10,
    seed: int = 0,
    nugget_enabled: bool = True,
    max_workers: Optional[int] = None,
) -> MleFit:
    """Best local minimum over n_starts random starts."""
    if n_starts < 1:
        raise InvalidParameterError(f"n_starts must be >= 1, got {n_starts}")
    S = sample_covariance(ds)
    p = family.q + (2 if nugget_enabled else 1)
    high = max(_START_HIGH_MIN, ds.locs.diameter())
    starts = mle_starts(n_starts, p, high, seed)

    def objective(u: np.ndarray) -> float:
        return mle_objective(_unpack(u, family, nugget_enabled), S, ds.locs)

    best, results = multistart_minimize(objective, starts, xatol=1e-6, fatol=1e-9, max_iter=500 * p,
                                        max_workers=max_workers)
    values = [r.fun for r in results]
    if not math.isfinite(best.fun):
        msg = f"all {n_starts} MLE start(s) failed the positive-definiteness check"
        log(f"⚠️  {msg}", "warn")
        return MleFit(None, math.inf, values, True, [msg])
    return MleFit(_unpack(best.x, family, nugget_enabled), best.fun, values, False)

