"""
kernels.py - Covariance families, parameter vectors and location sets.

Families (CLI tokens in brackets):
    se          exp(-|h|^2 / t^2)             (no 1/2 factor)
    matern32    (1 + sqrt3 |h|/t) exp(-sqrt3 |h|/t)
    exponential exp(-|h| / t)
    aniso-exp   exp(-sum_k t_k h_k^2)         (diagonal metric, q = d)

Pairwise distances come from scipy.spatial.distance so the symmetric matrix
is filled from a single evaluation per pair and its diagonal is exactly 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from .errors import DimensionMismatchError, DuplicateLocationError, InvalidParameterError

_SQRT3 = math.sqrt(3.0)
_DIAMETER_CHUNK = 2048


class KernelTag(str, Enum):
    SQUARED_EXPONENTIAL = "se"
    MATERN32 = "matern32"
    EXPONENTIAL = "exponential"
    ANISOTROPIC_EXPONENTIAL = "aniso-exp"


@dataclass(frozen=True)
class KernelFamily:
    """A kernel tag plus the length q of its range vector."""

    tag: KernelTag
    q: int = 1

    def __post_init__(self):
        if self.q < 1:
            raise InvalidParameterError(f"q must be positive, got {self.q}")
        if self.tag != KernelTag.ANISOTROPIC_EXPONENTIAL and self.q != 1:
            raise InvalidParameterError(f"isotropic family {self.tag.value} has q = 1, got {self.q}")

    @property
    def isotropic(self) -> bool:
        return self.tag != KernelTag.ANISOTROPIC_EXPONENTIAL

    @property
    def token(self) -> str:
        return self.tag.value

    @classmethod
    def from_token(cls, token: str, d: int) -> "KernelFamily":
        """Build a family from its CLI token; q = d for the anisotropic family."""
        try:
            tag = KernelTag(token.strip().lower())
        except ValueError:
            known = ", ".join(t.value for t in KernelTag)
            raise InvalidParameterError(f"unknown kernel '{token}' (known: {known})") from None
        return cls(tag, d if tag == KernelTag.ANISOTROPIC_EXPONENTIAL else 1)


def parse_kernel(token: str, d: int) -> KernelFamily:
    return KernelFamily.from_token(token, d)


def _check_theta_rho(family: KernelFamily, theta_rho: Sequence[float]) -> np.ndarray:
    theta = np.atleast_1d(np.asarray(theta_rho, dtype=float))
    if theta.ndim != 1 or theta.size != family.q:
        raise DimensionMismatchError(
            f"{family.token} expects {family.q} range parameter(s), got {theta.size}"
        )
    if not np.all(np.isfinite(theta)) or np.any(theta <= 0):
        raise InvalidParameterError(f"range parameters must be finite and > 0, got {theta.tolist()}")
    return theta


@dataclass(frozen=True)
class CovarianceParams:
    """theta = (theta_rho, theta_v, theta_0) for one family."""

    family: KernelFamily
    theta_rho: Tuple[float, ...]
    theta_v: float
    theta_0: float

    def __post_init__(self):
        theta = _check_theta_rho(self.family, self.theta_rho)
        object.__setattr__(self, "theta_rho", tuple(float(t) for t in theta))
        for name in ("theta_v", "theta_0"):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value < 0:
                raise InvalidParameterError(f"{name} must be finite and >= 0, got {value}")
            object.__setattr__(self, name, value)

    def as_vector(self) -> np.ndarray:
        return np.array([*self.theta_rho, self.theta_v, self.theta_0], dtype=float)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "family": self.family.token,
            "theta_rho": list(self.theta_rho),
            "theta_v": self.theta_v,
            "theta_0": self.theta_0,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], d: Optional[int] = None) -> "CovarianceParams":
        theta_rho = list(np.atleast_1d(np.asarray(data["theta_rho"], dtype=float)))
        dim = d if d is not None else int(data.get("dim", len(theta_rho)))
        family = KernelFamily.from_token(str(data["family"]), dim)
        return cls(family, tuple(theta_rho), float(data["theta_v"]), float(data["theta_0"]))


class LocationSet:
    """n distinct locations in R^d, stored as a read-only n x d array."""

    def __init__(self, X: Any):
        arr = np.array(X, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionMismatchError(f"locations must be an n x d array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidParameterError("locations must be finite")
        if np.unique(arr, axis=0).shape[0] != arr.shape[0]:
            raise DuplicateLocationError("locations are not pairwise distinct")
        arr.setflags(write=False)
        self.X = arr

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.n

    def subset(self, idx: Sequence[int]) -> "LocationSet":
        return LocationSet(self.X[np.asarray(idx, dtype=int)])

    def diameter(self) -> float:
        """Largest pairwise distance (0 for a single point)."""
        best = 0.0
        for start in range(0, self.n, _DIAMETER_CHUNK):
            block = cdist(self.X[start:start + _DIAMETER_CHUNK], self.X)
            best = max(best, float(block.max()))
        return best

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.X.min(axis=0), self.X.max(axis=0)


def _as_points(X: Any, d: Optional[int] = None) -> np.ndarray:
    arr = np.asarray(X.X if isinstance(X, LocationSet) else X, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :] if d is None or arr.size == d else arr[:, None]
    if arr.ndim != 2:
        raise DimensionMismatchError(f"expected an m x d array, got shape {arr.shape}")
    if d is not None and arr.shape[1] != d:
        raise DimensionMismatchError(f"expected dimension {d}, got {arr.shape[1]}")
    return arr


def _from_distance(family: KernelFamily, dist: np.ndarray, theta: float) -> np.ndarray:
    if family.tag == KernelTag.SQUARED_EXPONENTIAL:
        scaled = dist / theta
        return np.exp(-(scaled * scaled))
    if family.tag == KernelTag.MATERN32:
        t = _SQRT3 * dist / theta
        return (1.0 + t) * np.exp(-t)
    return np.exp(-dist / theta)


def correlation_matrix(
    X1: Any,
    family: KernelFamily,
    theta_rho: Sequence[float],
    X2: Any = None,
) -> np.ndarray:
    """Correlations r(x_i, x'_j) between the rows of X1 and X2.

    Leaving X2 as None returns the symmetric n x n matrix of X1 with itself,
    built from pdist/squareform (exactly symmetric, unit diagonal).
    """
    theta = _check_theta_rho(family, theta_rho)
    A = _as_points(X1)
    d = A.shape[1]
    if family.tag == KernelTag.ANISOTROPIC_EXPONENTIAL and family.q != d:
        raise DimensionMismatchError(f"aniso-exp with q={family.q} used on {d}-dimensional points")
    symmetric = X2 is None
    B = A if symmetric else _as_points(X2, d)

    if family.isotropic:
        if symmetric:
            dist = squareform(pdist(A)) if A.shape[0] > 1 else np.zeros((1, 1))
        else:
            dist = cdist(A, B)
        return _from_distance(family, dist, float(theta[0]))

    scale = np.sqrt(theta)
    if symmetric:
        sq = squareform(pdist(A * scale, "sqeuclidean")) if A.shape[0] > 1 else np.zeros((1, 1))
    else:
        sq = cdist(A * scale, B * scale, "sqeuclidean")
    return np.exp(-sq)


def correlation(family: KernelFamily, x: Any, x2: Any, theta_rho: Sequence[float]) -> float:
    """r(x, x', theta_rho) for a single pair; exactly 1 when x == x2."""
    a = np.atleast_1d(np.asarray(x, dtype=float))
    b = np.atleast_1d(np.asarray(x2, dtype=float))
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionMismatchError(f"point shapes differ: {a.shape} vs {b.shape}")
    return float(correlation_matrix(a[None, :], family, theta_rho, b[None, :])[0, 0])


def covariance_matrix(locs: LocationSet, params: CovarianceParams) -> np.ndarray:
    """C(theta) = theta_v R(theta_rho) + theta_0 I."""
    if not isinstance(locs, LocationSet):
        locs = LocationSet(locs)
    C = params.theta_v * correlation_matrix(locs.X, params.family, params.theta_rho)
    C[np.diag_indices_from(C)] += params.theta_0
    return C


def cross_covariance(queries: Any, locs: LocationSet, params: CovarianceParams) -> np.ndarray:
    """m x n matrix of theta_v r(query_i, x_j); the nugget never enters."""
    X = locs.X if isinstance(locs, LocationSet) else np.asarray(locs, dtype=float)
    return params.theta_v * correlation_matrix(queries, params.family, params.theta_rho, X)
