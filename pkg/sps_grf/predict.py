"""
predict.py - Kriging predictive mean and variance, and MSPE.

    mean     = c0^T (C_f + theta_0 I)^-1 y_bar
    variance = theta_v - c0^T (C_f + theta_0 I)^-1 c0,   clipped to [0, theta_v]

One Cholesky factorization per (training set, params) is shared by every
query; query chunks are evaluated on a thread pool.

Prediction CSV:
    x1,...,xd,mean,variance
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.linalg import cho_solve

from .errors import DimensionMismatchError, InvalidParameterError
from .kernels import CovarianceParams, covariance_matrix, cross_covariance
from .sampler import SpatialDataset, factorize
from .segmentation import Scheme, SegmentationPlan, block_of, neighbor_indices, parse_block_spec

FULL_SYSTEM_LIMIT = 4000
_QUERY_CHUNK = 512
_JITTER_SCALE = 1e-10


@dataclass
class PredictiveDistribution:
    queries: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return self.mean.size

    def to_frame(self) -> pd.DataFrame:
        cols = {f"x{k + 1}": self.queries[:, k] for k in range(self.queries.shape[1])}
        cols.update(mean=self.mean, variance=self.variance)
        return pd.DataFrame(cols)


class KrigingSystem:
    """Factorised training covariance for one (dataset, params) pair."""

    def __init__(self, ds: SpatialDataset, params: CovarianceParams):
        self.ds = ds
        self.params = params
        C = covariance_matrix(ds.locs, params)
        self._factor = factorize(C, _JITTER_SCALE * (params.theta_v + params.theta_0), what="kriging system")
        self._weights = cho_solve(self._factor, ds.y_bar())

    def _predict_chunk(self, Q: np.ndarray):
        K = cross_covariance(Q, self.ds.locs, self.params)
        mean = K @ self._weights
        V = cho_solve(self._factor, K.T)
        var = self.params.theta_v - np.einsum("ij,ji->i", K, V)
        return mean, np.clip(var, 0.0, self.params.theta_v)

    def predict(self, queries: Any, max_workers: Optional[int] = None):
        """(mean, variance) arrays, one entry per query row."""
        Q = np.atleast_2d(np.asarray(queries, dtype=float))
        if Q.shape[1] != self.ds.d:
            raise DimensionMismatchError(f"queries are {Q.shape[1]}-d, training data is {self.ds.d}-d")
        chunks = [Q[i:i + _QUERY_CHUNK] for i in range(0, Q.shape[0], _QUERY_CHUNK)]
        if not chunks:
            return np.empty(0), np.empty(0)
        if max_workers == 1 or len(chunks) == 1:
            parts = [self._predict_chunk(c) for c in chunks]
        else:
            with ThreadPoolExecutor(max_workers=max_workers) as pool:
                parts = list(pool.map(self._predict_chunk, chunks))
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def predictive_distribution(
    ds: SpatialDataset,
    params: CovarianceParams,
    queries: Any,
    max_workers: Optional[int] = None,
) -> PredictiveDistribution:
    Q = np.atleast_2d(np.asarray(queries, dtype=float))
    mean, var = KrigingSystem(ds, params).predict(Q, max_workers)
    return PredictiveDistribution(Q, mean, var, {"rule": "full", "n_train": ds.n})


def _local_plan(ds: SpatialDataset, plan: Optional[SegmentationPlan]) -> SegmentationPlan:
    if plan is not None and plan.scheme is Scheme.SPATIAL and plan.n == ds.n:
        return plan
    n_B = plan.n_B if plan is not None else 1000
    return parse_block_spec("ss:auto", ds.locs, n_B=n_B)


def predict_segmented(
    ds: SpatialDataset,
    params: CovarianceParams,
    queries: Any,
    plan: Optional[SegmentationPlan] = None,
    full_limit: int = FULL_SYSTEM_LIMIT,
    max_workers: Optional[int] = None,
) -> PredictiveDistribution:
    """Stationary prediction; above full_limit each query uses its block and the adjacent ones."""
    Q = np.atleast_2d(np.asarray(queries, dtype=float))
    if ds.n <= full_limit:
        out = predictive_distribution(ds, params, Q, max_workers)
        out.metadata["full_limit"] = full_limit
        return out

    grid = _local_plan(ds, plan)
    owner = block_of(grid, ds.locs, Q)
    mean = np.empty(Q.shape[0])
    var = np.empty(Q.shape[0])
    sizes: List[int] = []
    for k in np.unique(owner):
        rows = np.flatnonzero(owner == k)
        local = ds.subset(neighbor_indices(grid, int(k)))
        sizes.append(local.n)
        mean[rows], var[rows] = KrigingSystem(local, params).predict(Q[rows], max_workers)
    return PredictiveDistribution(Q, mean, var, {
        "rule": "local-neighbourhood",
        "full_limit": full_limit,
        "grid_dims": list(grid.grid_dims),
        "max_local_n": max(sizes) if sizes else 0,
    })


def predict_nonstationary(
    ds: SpatialDataset,
    plan: SegmentationPlan,
    params_per_block: Sequence[CovarianceParams],
    queries: Any,
    max_workers: Optional[int] = None,
) -> PredictiveDistribution:
    """Each query uses its own block's parameters and training points."""
    if len(params_per_block) != plan.K:
        raise InvalidParameterError(f"{len(params_per_block)} parameter sets for {plan.K} blocks")
    Q = np.atleast_2d(np.asarray(queries, dtype=float))
    owner = block_of(plan, ds.locs, Q)
    mean = np.empty(Q.shape[0])
    var = np.empty(Q.shape[0])
    for k in np.unique(owner):
        rows = np.flatnonzero(owner == k)
        system = KrigingSystem(ds.subset(plan.blocks[k]), params_per_block[k])
        mean[rows], var[rows] = system.predict(Q[rows], max_workers)
    return PredictiveDistribution(Q, mean, var, {"rule": "per-block", "scheme": plan.scheme.value, "K": plan.K})


def mspe(y_true: Any, y_pred: Any) -> float:
    """(1/m) |y_true - y_pred|^2."""
    a = np.ravel(np.asarray(y_true, dtype=float))
    b = np.ravel(np.asarray(y_pred, dtype=float))
    if a.size != b.size:
        raise DimensionMismatchError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 1:
        raise InvalidParameterError("mspe needs at least one value")
    diff = a - b
    return float(diff @ diff / a.size)


def write_predictions(pred: PredictiveDistribution, path: Union[str, Path]) -> None:
    pred.to_frame().to_csv(path, index=False, float_format="%.17g")
