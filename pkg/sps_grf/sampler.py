"""
sampler.py - GRF simulation, sample covariance, distance weights, sparsity
diagnostics, convex hull distances and the dataset CSV format.

All randomness is drawn from `rng_stream(seed, *keys)`: a Philox
counter-based generator seeded by SeedSequence([seed, *keys]). String keys
are folded to integers with CRC-32, so a stream is identified by
(seed, replicate, purpose) and adding a new purpose never shifts an old one.

Dataset CSV:
    x1,...,xd,y1,...,yN   one row per location, no index column
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import linprog, nnls
from scipy.spatial.distance import pdist, squareform

from .console import log
from .errors import DimensionMismatchError, FactorizationError, InvalidParameterError
from .kernels import CovarianceParams, LocationSet, covariance_matrix

_FLOAT_FORMAT = "%.17g"
_JITTER_SCALE = 1e-10
_HULL_WEIGHT = 1e4
_UINT64_MASK = (1 << 64) - 1

PathLike = Union[str, Path]


# ============================================
# Random streams and factorization
# ============================================

def _stream_key(key: Union[int, str]) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    return int(key) & _UINT64_MASK


def rng_stream(seed: int, *keys: Union[int, str]) -> np.random.Generator:
    """Independent, platform-stable generator for (seed, *keys)."""
    entropy = [_stream_key(seed), *(_stream_key(k) for k in keys)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, *keys: Union[int, str]) -> int:
    """64-bit child seed for (seed, *keys), e.g. one per replicate."""
    entropy = [_stream_key(seed), *(_stream_key(k) for k in keys)]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])


def factorize(C: np.ndarray, jitter: float = 0.0, what: str = "matrix") -> Tuple[np.ndarray, bool]:
    """Cholesky factor of a symmetric PD matrix, retried once with diagonal jitter.

    Returns the scipy `cho_factor` pair. Raises FactorizationError when the
    plain attempt fails and either no jitter is allowed or the jittered one
    fails too.
    """
    try:
        return cho_factor(C, lower=True, check_finite=True)
    except (LinAlgError, ValueError) as exc:
        if jitter <= 0:
            raise FactorizationError(f"{what} is not positive definite: {exc}") from exc
    log(f"⚠️  {what} not PD, retrying with jitter {jitter:.3g}", "warn")
    shifted = C.copy()
    shifted[np.diag_indices_from(shifted)] += jitter
    try:
        return cho_factor(shifted, lower=True, check_finite=True)
    except (LinAlgError, ValueError) as exc:
        raise FactorizationError(f"{what} is not positive definite after jitter {jitter:.3g}") from exc


# ============================================
# Datasets
# ============================================

@dataclass(frozen=True)
class SpatialDataset:
    """n locations plus an n x N matrix of realizations (column r is y^(r))."""

    locs: LocationSet
    Y: np.ndarray

    def __post_init__(self):
        Y = np.array(self.Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        if Y.ndim != 2 or Y.shape[0] != self.locs.n or Y.shape[1] < 1:
            raise DimensionMismatchError(
                f"Y must be {self.locs.n} x N with N >= 1, got shape {Y.shape}"
            )
        Y.setflags(write=False)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.locs.n

    @property
    def N(self) -> int:
        return self.Y.shape[1]

    @property
    def d(self) -> int:
        return self.locs.d

    def y_bar(self) -> np.ndarray:
        """Average of the realizations at each location."""
        return self.Y.mean(axis=1)

    def subset(self, idx: Sequence[int]) -> "SpatialDataset":
        idx = np.asarray(idx, dtype=int)
        return SpatialDataset(self.locs.subset(idx), self.Y[idx])


@dataclass(frozen=True)
class WeightMatrix:
    G: np.ndarray
    G_max: float
    G_min: float

    @property
    def n(self) -> int:
        return self.G.shape[0]

    @classmethod
    def from_array(cls, G: Any) -> "WeightMatrix":
        arr = np.atleast_2d(np.asarray(G, dtype=float))
        if arr.shape[0] != arr.shape[1]:
            raise DimensionMismatchError(f"G must be square, got {arr.shape}")
        return cls(arr, float(arr.max()), float(arr.min()))


# ============================================
# Simulation
# ============================================

def sample_locations(
    n: int,
    d: int,
    seed: int,
    design: str = "box",
    domain: Tuple[float, float] = (0.0, 100.0),
    radius: float = 10.0,
    inner_radius: float = 0.0,
) -> LocationSet:
    """Uniform locations in a box [lo, hi]^d, a d-ball or a spherical shell.

    `ball` draws inside `radius`; `shell` draws with inner_radius <= |x| <= radius.
    """
    if n < 1 or d < 1:
        raise InvalidParameterError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    rng = rng_stream(seed, "locations", design)
    if design == "box":
        lo, hi = float(domain[0]), float(domain[1])
        if not hi > lo:
            raise InvalidParameterError(f"empty domain {lo}:{hi}")
        return LocationSet(rng.uniform(lo, hi, size=(n, d)))
    if design in ("ball", "shell"):
        r_in = inner_radius if design == "shell" else 0.0
        if not radius > r_in >= 0:
            raise InvalidParameterError(f"need radius > inner_radius >= 0, got {radius}, {r_in}")
        direction = rng.standard_normal((n, d))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        u = rng.uniform(size=n)
        r = (r_in ** d + u * (radius ** d - r_in ** d)) ** (1.0 / d)
        return LocationSet(direction * r[:, None])
    raise InvalidParameterError(f"unknown design '{design}' (box, ball, shell)")


def sample_grf(locs: LocationSet, params: CovarianceParams, N: int, seed: int) -> SpatialDataset:
    """N independent zero-mean draws from N(0, C(theta)) at `locs`."""
    if N < 1:
        raise InvalidParameterError(f"N must be >= 1, got {N}")
    C = covariance_matrix(locs, params)
    jitter = _JITTER_SCALE * (params.theta_v + params.theta_0)
    c, _ = factorize(C, jitter, what="C(theta)")
    L = np.tril(c)
    Z = rng_stream(seed, "field").standard_normal((locs.n, N))
    return SpatialDataset(locs, L @ Z)


def sample_covariance(ds: SpatialDataset) -> np.ndarray:
    """S = (1/N) Y Y^T."""
    S = (ds.Y @ ds.Y.T) / ds.N
    return 0.5 * (S + S.T)


def distance_weights(locs: Any) -> WeightMatrix:
    """G_ij = |x_i - x_j| off the diagonal, G_ii = nearest-neighbour distance."""
    if not isinstance(locs, LocationSet):
        locs = LocationSet(locs)
    if locs.n < 2:
        raise InvalidParameterError("distance weights need at least 2 locations")
    G = squareform(pdist(locs.X))
    off = G.copy()
    np.fill_diagonal(off, np.inf)
    G[np.diag_indices_from(G)] = off.min(axis=1)
    return WeightMatrix.from_array(G)


def true_precision(locs: LocationSet, params: CovarianceParams) -> np.ndarray:
    """P* = C(theta)^-1."""
    C = covariance_matrix(locs, params)
    factor = factorize(C, _JITTER_SCALE * (params.theta_v + params.theta_0), what="C(theta)")
    P = cho_solve(factor, np.eye(locs.n))
    return 0.5 * (P + P.T)


# ============================================
# Near-sparsity diagnostics
# ============================================

def _scaled_off_diagonal(M: np.ndarray) -> np.ndarray:
    """|M_ij| / max_{i!=j} |M_ij| over the strict upper triangle (zeros if all vanish)."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatchError(f"expected a square matrix, got {M.shape}")
    iu = np.triu_indices(M.shape[0], k=1)
    mags = np.abs(M[iu])
    top = mags.max() if mags.size else 0.0
    return mags / top if top > 0 else np.zeros_like(mags)


def near_sparsity_fraction(M: np.ndarray, eps: float) -> float:
    """Share of off-diagonal entries whose scaled magnitude exceeds eps."""
    n = np.asarray(M).shape[0]
    if n < 2:
        raise InvalidParameterError("near-sparsity needs n >= 2")
    scaled = _scaled_off_diagonal(M)
    # symmetric: each upper entry stands for two off-diagonal cells
    return float(2 * np.count_nonzero(scaled > eps) / (n * n - n))


def decay_profile(M: np.ndarray, top: int = 1000) -> np.ndarray:
    """Largest `top` scaled off-diagonal magnitudes, sorted descending."""
    scaled = _scaled_off_diagonal(M)
    return np.sort(scaled)[::-1][:top]


def precision_vs_distance(locs: LocationSet, params: CovarianceParams) -> pd.DataFrame:
    """One row per pair i < j: distance, |P*_ij| and its scaled magnitude."""
    P = true_precision(locs, params)
    iu = np.triu_indices(locs.n, k=1)
    mags = np.abs(P[iu])
    top = mags.max() if mags.size else 0.0
    return pd.DataFrame({
        "i": iu[0],
        "j": iu[1],
        "distance": pdist(locs.X),
        "abs_precision": mags,
        "scaled": mags / top if top > 0 else np.zeros_like(mags),
    })


# ============================================
# Convex hull distance
# ============================================

def distance_to_hull(train: Any, queries: Any) -> np.ndarray:
    """Euclidean distance from each query to the convex hull of the training points; 0 inside.

    Membership is a feasibility LP over convex weights. Outside queries are
    projected by non-negative least squares with sum(w) = 1 carried as a
    heavily weighted extra row.
    """
    X = train.X if isinstance(train, LocationSet) else np.atleast_2d(np.asarray(train, dtype=float))
    Q = np.atleast_2d(np.asarray(queries, dtype=float))
    if Q.shape[1] != X.shape[1]:
        raise DimensionMismatchError(f"queries are {Q.shape[1]}-d, training points are {X.shape[1]}-d")
    n = X.shape[0]
    centre = X.mean(axis=0)
    Xc, Qc = X - centre, Q - centre
    weight = _HULL_WEIGHT * max(float(np.abs(Xc).max()), 1.0)
    A_eq = np.vstack([Xc.T, np.ones(n)])
    A_ls = np.vstack([Xc.T, np.full(n, weight)])
    out = np.zeros(Q.shape[0])
    for i, q in enumerate(Qc):
        lp = linprog(np.zeros(n), A_eq=A_eq, b_eq=np.append(q, 1.0), bounds=(0, None), method="highs")
        if lp.status == 0:
            continue
        w, _ = nnls(A_ls, np.append(q, weight))
        out[i] = float(np.linalg.norm(Xc.T @ (w / w.sum()) - q))
    return out


# ============================================
# CSV I/O
# ============================================

def _columns(prefix: str, count: int):
    return [f"{prefix}{k}" for k in range(1, count + 1)]


def write_dataset(ds: SpatialDataset, path: PathLike) -> None:
    frame = pd.DataFrame(
        np.hstack([ds.locs.X, ds.Y]),
        columns=_columns("x", ds.d) + _columns("y", ds.N),
    )
    frame.to_csv(path, index=False, float_format=_FLOAT_FORMAT)


def read_dataset(path: PathLike) -> SpatialDataset:
    frame = pd.read_csv(path, encoding="utf-8")
    xs = [c for c in frame.columns if c.startswith("x")]
    ys = [c for c in frame.columns if c.startswith("y")]
    if not xs or not ys or list(frame.columns) != _columns("x", len(xs)) + _columns("y", len(ys)):
        raise DimensionMismatchError(
            f"{path}: header must be x1..xd,y1..yN, got {list(frame.columns)}"
        )
    return SpatialDataset(LocationSet(frame[xs].to_numpy(float)), frame[ys].to_numpy(float))


def read_queries(path: PathLike, d: Optional[int] = None) -> np.ndarray:
    frame = pd.read_csv(path, encoding="utf-8")
    expected = _columns("x", frame.shape[1])
    if list(frame.columns) != expected:
        raise DimensionMismatchError(f"{path}: header must be x1..xd, got {list(frame.columns)}")
    if d is not None and frame.shape[1] != d:
        raise DimensionMismatchError(f"{path}: queries are {frame.shape[1]}-d, training data is {d}-d")
    return frame.to_numpy(float)


def write_queries(queries: np.ndarray, path: PathLike) -> None:
    queries = np.atleast_2d(queries)
    pd.DataFrame(queries, columns=_columns("x", queries.shape[1])).to_csv(
        path, index=False, float_format=_FLOAT_FORMAT
    )
