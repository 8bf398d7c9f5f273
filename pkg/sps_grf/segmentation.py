"""
segmentation.py - Block partitions for large n and the blockwise SPS fit.

Schemes:
    none      one block holding every index
    ss:AxB    axis-aligned cells over the data bounding box (spatial)
    rs:K      uniform random partition into K blocks
    ss:auto / rs:auto   K = ceil(n / n_B)

Each block gets its own Stage I solve (alpha = 1/sqrt(n_k), rho0 = n_k). A
stationary fit then solves one joint least-squares problem over all blocks;
the nonstationary variant fits every block on its own.

Plan CSV:
    index,block   one row per location, 0-based
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

from .console import log
from .errors import ConfigError, SegmentationError
from .kernels import KernelFamily, LocationSet
from .sampler import SpatialDataset, distance_weights, rng_stream, sample_covariance
from .stage1_admm import PrecisionEstimate, Stage1Config, solve_stage1
from .stage2_lsq import Stage2Options, Stage2Result, fit_stage2, fit_stage2_blocks, invert_precision

DEFAULT_BLOCK_CEILING = 1000


class Scheme(str, Enum):
    SPATIAL = "ss"
    RANDOM = "rs"
    NONE = "none"


@dataclass(frozen=True)
class SegmentationPlan:
    scheme: Scheme
    blocks: Tuple[np.ndarray, ...]
    n: int
    grid_dims: Optional[Tuple[int, ...]] = None
    seed: Optional[int] = None
    n_B: int = DEFAULT_BLOCK_CEILING
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    cells: Tuple[Tuple[int, ...], ...] = ()

    @property
    def K(self) -> int:
        return len(self.blocks)

    def sizes(self) -> List[int]:
        return [int(b.size) for b in self.blocks]

    def labels(self) -> np.ndarray:
        """Block index of every location."""
        out = np.empty(self.n, dtype=int)
        for k, block in enumerate(self.blocks):
            out[block] = k
        return out

    def validate(self) -> None:
        """Raise unless the blocks are nonempty, disjoint and cover 0..n-1."""
        if any(b.size == 0 for b in self.blocks):
            raise SegmentationError("plan has an empty block")
        seen = np.concatenate(self.blocks) if self.blocks else np.empty(0, dtype=int)
        if seen.size != self.n or not np.array_equal(np.sort(seen), np.arange(self.n)):
            raise SegmentationError("plan blocks are not a disjoint cover of all locations")

    def centroids(self, locs: LocationSet) -> np.ndarray:
        return np.vstack([locs.X[b].mean(axis=0) for b in self.blocks])


def single_block(n: int) -> SegmentationPlan:
    return SegmentationPlan(Scheme.NONE, (np.arange(n),), n)


# ============================================
# Spatial (SS) plans
# ============================================

def _cell_coords(X: np.ndarray, lower: np.ndarray, upper: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """Per-axis cell index; cells are half-open except the last one on each axis."""
    dims_arr = np.asarray(dims, dtype=int)
    span = upper - lower
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = np.where(span > 0, (X - lower) / span * dims_arr, 0.0)
    return np.clip(np.floor(scaled).astype(int), 0, dims_arr - 1)


def _cell_ids(X: np.ndarray, lower: np.ndarray, upper: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    coords = _cell_coords(X, lower, upper, dims)
    return np.ravel_multi_index(tuple(coords.T), tuple(dims))


def spatial_segments(locs: LocationSet, grid_dims: Sequence[int], min_block_size: int = 2) -> SegmentationPlan:
    """Grid cells over the bounding box; empty cells dropped.

    Cells holding fewer than `min_block_size` points are merged into the
    nearest block by centroid distance.
    """
    dims = tuple(int(m) for m in grid_dims)
    if len(dims) != locs.d or any(m < 1 for m in dims):
        raise SegmentationError(f"grid {dims} does not fit {locs.d}-dimensional locations")
    lower, upper = locs.bounding_box()
    ids = _cell_ids(locs.X, lower, upper, dims)
    present = np.unique(ids)
    blocks = tuple(np.flatnonzero(ids == c) for c in present)
    plan = SegmentationPlan(
        Scheme.SPATIAL, blocks, locs.n, grid_dims=dims, lower=lower, upper=upper,
        cells=tuple((int(c),) for c in present),
    )
    return merge_small_cells(plan, locs, min_block_size) if min_block_size > 1 else plan


def merge_small_cells(plan: SegmentationPlan, locs: LocationSet, min_size: int = 2) -> SegmentationPlan:
    """Fold blocks smaller than min_size into their nearest neighbour block."""
    blocks = [b for b in plan.blocks]
    cells = [list(c) for c in plan.cells] if plan.cells else [[] for _ in blocks]
    while len(blocks) > 1:
        sizes = [b.size for b in blocks]
        small = min(range(len(blocks)), key=lambda k: (sizes[k], k))
        if sizes[small] >= min_size:
            break
        cents = np.vstack([locs.X[b].mean(axis=0) for b in blocks])
        dist = cdist(cents[small:small + 1], cents)[0]
        dist[small] = np.inf
        target = int(np.argmin(dist))
        blocks[target] = np.sort(np.concatenate([blocks[target], blocks[small]]))
        cells[target] = sorted(cells[target] + cells[small])
        del blocks[small], cells[small]
    return replace(plan, blocks=tuple(blocks), cells=tuple(tuple(c) for c in cells))


# ============================================
# Random (RS) plans
# ============================================

def random_segments(n: int, K: int, seed: int) -> SegmentationPlan:
    """Random permutation cut into K-1 blocks of floor(n/K) plus a remainder block."""
    if not 1 <= K <= n:
        raise SegmentationError(f"need 1 <= K <= n, got K={K}, n={n}")
    perm = rng_stream(seed, "random-segments").permutation(n)
    size = n // K
    blocks = [np.sort(perm[k * size:(k + 1) * size]) for k in range(K - 1)]
    blocks.append(np.sort(perm[(K - 1) * size:]))
    return SegmentationPlan(Scheme.RANDOM, tuple(blocks), n, seed=seed)


# ============================================
# Block specs
# ============================================

def _grid_for(K: int, d: int) -> Tuple[int, ...]:
    m = 1
    while m ** d < K:
        m += 1
    return (m,) * d


def parse_block_spec(
    spec: str,
    locs: LocationSet,
    n_B: int = DEFAULT_BLOCK_CEILING,
    seed: int = 0,
    min_block_size: int = 2,
) -> SegmentationPlan:
    """Build a plan from `none`, `ss:3x3`, `ss:auto`, `rs:9` or `rs:auto`."""
    text = (spec or "none").strip().lower()
    if text == "none":
        return replace(single_block(locs.n), n_B=n_B)
    scheme, _, arg = text.partition(":")
    auto_K = max(1, math.ceil(locs.n / n_B))
    try:
        if scheme == "ss":
            if arg == "auto":
                dims = _grid_for(auto_K, locs.d)
            else:
                dims = tuple(int(p) for p in arg.split("x"))
                if len(dims) == 1:
                    dims = dims * locs.d
            plan = spatial_segments(locs, dims, min_block_size=min_block_size)
        elif scheme == "rs":
            K = auto_K if arg == "auto" else int(arg)
            plan = random_segments(locs.n, K, seed)
        else:
            raise ValueError(scheme)
    except ValueError as exc:
        if isinstance(exc, SegmentationError):
            raise
        raise ConfigError(f"bad block spec '{spec}' (none, ss:AxB, ss:auto, rs:K, rs:auto)") from exc
    return replace(plan, n_B=n_B)


def write_plan(plan: SegmentationPlan, path: Union[str, Path]) -> None:
    pd.DataFrame({"index": np.arange(plan.n), "block": plan.labels()}).to_csv(path, index=False)


def read_plan(path: Union[str, Path], scheme: Scheme = Scheme.RANDOM) -> SegmentationPlan:
    frame = pd.read_csv(path)
    if list(frame.columns) != ["index", "block"]:
        raise SegmentationError(f"{path}: header must be index,block")
    order = frame.sort_values("index")
    labels = order["block"].to_numpy(int)
    index = order["index"].to_numpy(int)
    blocks = tuple(np.sort(index[labels == k]) for k in np.unique(labels))
    plan = SegmentationPlan(scheme, blocks, int(frame.shape[0]))
    plan.validate()
    return plan


# ============================================
# Lookup for prediction
# ============================================

def block_of(plan: SegmentationPlan, locs: LocationSet, queries: np.ndarray) -> np.ndarray:
    """Block index for each query: its SS cell if owned, else the nearest centroid."""
    Q = np.atleast_2d(np.asarray(queries, dtype=float))
    nearest = np.argmin(cdist(Q, plan.centroids(locs)), axis=1)
    if plan.scheme is not Scheme.SPATIAL:
        return nearest
    owner: Dict[int, int] = {c: k for k, cells in enumerate(plan.cells) for c in cells}
    ids = _cell_ids(Q, plan.lower, plan.upper, plan.grid_dims)
    return np.array([owner.get(int(c), int(nn)) for c, nn in zip(ids, nearest)], dtype=int)


def neighbor_indices(plan: SegmentationPlan, block: int) -> np.ndarray:
    """Training indices of a spatial block plus every block owning an adjacent cell."""
    if plan.scheme is not Scheme.SPATIAL:
        raise SegmentationError("neighbour lookup needs a spatial plan")
    dims = plan.grid_dims
    owner = {c: k for k, cells in enumerate(plan.cells) for c in cells}
    members = {block}
    for cell in plan.cells[block]:
        centre = np.array(np.unravel_index(cell, dims))
        for offset in np.ndindex(*([3] * len(dims))):
            coord = centre + np.array(offset) - 1
            if np.any(coord < 0) or np.any(coord >= np.array(dims)):
                continue
            k = owner.get(int(np.ravel_multi_index(tuple(coord), dims)))
            if k is not None:
                members.add(k)
    return np.sort(np.concatenate([plan.blocks[k] for k in sorted(members)]))


# ============================================
# Blockwise fit
# ============================================

@dataclass
class SegmentedFit:
    plan: SegmentationPlan
    estimates: List[PrecisionEstimate]
    stage2: Union[Stage2Result, List[Stage2Result]]
    stationary: bool
    warnings: List[str] = field(default_factory=list)

    @property
    def flagged(self) -> bool:
        results = self.stage2 if isinstance(self.stage2, list) else [self.stage2]
        return any(not e.converged for e in self.estimates) or any(r.flagged for r in results)


def _run(fun, items, max_workers: Optional[int]):
    items = list(items)
    if max_workers == 1 or len(items) < 2:
        return [fun(x) for x in items]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(fun, items))


def fit_segmented(
    ds: SpatialDataset,
    plan: SegmentationPlan,
    family: KernelFamily,
    stationary: bool = True,
    cfg: Optional[Stage1Config] = None,
    nugget_enabled: bool = True,
    opts: Optional[Stage2Options] = None,
    max_workers: Optional[int] = None,
) -> SegmentedFit:
    """Stage I per block, then a joint (stationary) or per-block Stage II."""
    cfg = cfg or Stage1Config()
    if plan.n != ds.n:
        raise SegmentationError(f"plan covers {plan.n} locations, dataset has {ds.n}")
    small = [k for k, b in enumerate(plan.blocks) if b.size < 2]
    if small:
        raise SegmentationError(f"blocks {small} have fewer than 2 points")
    parts = [ds.subset(b) for b in plan.blocks]

    def stage1(part: SpatialDataset) -> PrecisionEstimate:
        return solve_stage1(sample_covariance(part), distance_weights(part.locs), cfg.resolve(part.n))

    log(f"   Stage I on {plan.K} block(s), sizes {min(plan.sizes())}..{max(plan.sizes())}", "info")
    estimates = _run(stage1, parts, max_workers)
    C_hats = [invert_precision(e) for e in estimates]
    warnings = [f"block {k}: {w}" for k, e in enumerate(estimates) for w in e.warnings]

    if stationary:
        result: Union[Stage2Result, List[Stage2Result]] = fit_stage2_blocks(
            [(C, p.locs) for C, p in zip(C_hats, parts)], family, nugget_enabled, opts
        )
        warnings += result.warnings
    else:
        result = _run(
            lambda k: fit_stage2(C_hats[k], parts[k].locs, family, nugget_enabled, opts),
            range(plan.K), max_workers,
        )
        warnings += [f"block {k}: {w}" for k, r in enumerate(result) for w in r.warnings]
    return SegmentedFit(plan, estimates, result, stationary, warnings)
