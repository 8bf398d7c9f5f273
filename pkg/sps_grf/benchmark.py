"""
benchmark.py - Replicated simulate / split / fit / predict experiments.

For l = 0..R-1 every random draw comes from a stream keyed on
(seed, l, purpose), so replicates can run concurrently and the report is an
ordered reduction over l. The report directory holds:

    replicates.csv   one row per replicate (theta_hat, error norm, MSPE, flag)
    summary.json     theta_bar, stdev, stderr = stdev / sqrt(R), MSPE stats,
                     squared error binned by distance to the training hull
    points.csv       one row per test point: distance to the training hull
                     and squared prediction error
    timings.csv      wall-clock seconds per phase (kept apart so reruns are
                     byte-identical in the files above)

Usage:
    from sps_grf.benchmark import run_benchmark
    report = run_benchmark(load_run_config("configs/segmented_ss.yaml"), "report/")
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import orjson
import pandas as pd

from .config import RunConfig, stop_criteria
from .console import banner, log
from .errors import BenchmarkAborted, SpsError
from .kernels import LocationSet
from .pipeline import JSON_OPTIONS, fit
from .predict import mspe, predict_segmented
from .sampler import (
    SpatialDataset,
    derive_seed,
    distance_to_hull,
    read_dataset,
    rng_stream,
    sample_grf,
    sample_locations,
)

_FLOAT_FORMAT = "%.17g"
_EXTRAPOLATION_RING = 1.5

POINT_COLUMNS = ["replicate", "method", "distance_to_hull", "squared_error"]


def split_train_test(n: int, test_fraction: float, seed: int, replicate: int) -> Tuple[np.ndarray, np.ndarray]:
    """(train, test) index arrays; a pure function of (seed, replicate, n)."""
    m = min(max(1, int(round(test_fraction * n))), n - 2)
    if m < 1:
        raise SpsError(f"cannot split {n} locations into train (>= 2) and test (>= 1)")
    perm = rng_stream(seed, replicate, "split").permutation(n)
    return np.sort(perm[m:]), np.sort(perm[:m])


def theta_columns(q: int) -> List[str]:
    return [f"theta_rho_{k + 1}" for k in range(q)] + ["theta_v", "theta_0"]


@dataclass
class BenchmarkReport:
    rows: pd.DataFrame
    summary: Dict[str, Any]
    timings: pd.DataFrame
    points: pd.DataFrame = field(default_factory=pd.DataFrame)

    @property
    def flagged(self) -> bool:
        return bool(self.rows["flagged"].any()) if len(self.rows) else False


def summarize(rows: pd.DataFrame, q: int, truth: Optional[np.ndarray] = None) -> Dict[str, Any]:
    """Aggregate statistics; recomputable from the stored rows alone."""
    R = len(rows)
    cols = theta_columns(q)
    theta = rows[cols].to_numpy(float)
    stdev = theta.std(axis=0, ddof=0)
    errors = rows["error_norm"].to_numpy(float)
    mspes = rows["mspe"].to_numpy(float)
    return {
        "R": R,
        "columns": cols,
        "theta_true": truth.tolist() if truth is not None else None,
        "theta_bar": theta.mean(axis=0).tolist(),
        "stdev_theta": stdev.tolist(),
        "stderr_theta": (stdev / math.sqrt(R)).tolist(),
        "mspe_mean": float(mspes.mean()),
        "mspe_stdev": float(mspes.std(ddof=0)),
        "error_mean": float(errors.mean()) if truth is not None else None,
        "error_stdev": float(errors.std(ddof=0)) if truth is not None else None,
        "flagged_replicates": int(rows["flagged"].sum()),
    }


def method_label(cfg: RunConfig) -> str:
    """'sps', 'covariogram' or 'mle-<starts>'."""
    return f"mle-{cfg.mle_starts}" if cfg.method == "mle" else cfg.method


def _error_bin(lo: float, hi: float, errors: np.ndarray) -> Dict[str, Any]:
    return {"lo": float(lo), "hi": float(hi), "count": int(errors.size),
            "mse": float(errors.mean()) if errors.size else None}


def hull_error_bins(points: pd.DataFrame, bins: int) -> List[Dict[str, Any]]:
    """Mean squared error by distance to the training hull.

    The first bin holds the interior points (distance 0); the rest split
    (0, max distance] into `bins` equal-width, right-closed intervals.
    """
    dist = points["distance_to_hull"].to_numpy(float)
    err = points["squared_error"].to_numpy(float)
    inside = dist <= 0.0
    out = [_error_bin(0.0, 0.0, err[inside])]
    if inside.all():
        return out
    far, far_err = dist[~inside], err[~inside]
    edges = np.linspace(0.0, far.max(), bins + 1)
    idx = np.clip(np.searchsorted(edges, far, side="left") - 1, 0, bins - 1)
    out.extend(_error_bin(edges[k], edges[k + 1], far_err[idx == k]) for k in range(bins))
    return out



def _simulate(cfg: RunConfig, replicate: int, seed: int) -> Tuple[SpatialDataset, np.ndarray, np.ndarray]:
    truth = cfg.true_params()
    if cfg.design == "extrapolation":
        m = min(max(1, int(round(cfg.test_fraction * cfg.n))), cfg.n - 2)
        inner = sample_locations(cfg.n - m, cfg.dim, seed, "ball", radius=cfg.radius)
        ring = sample_locations(m, cfg.dim, seed, "shell", radius=_EXTRAPOLATION_RING * cfg.radius,
                                inner_radius=cfg.radius)
        locs = LocationSet(np.vstack([inner.X, ring.X]))
        return sample_grf(locs, truth, cfg.N, seed), np.arange(cfg.n - m), np.arange(cfg.n - m, cfg.n)
    locs = sample_locations(cfg.n, cfg.dim, seed, cfg.design, cfg.domain, cfg.radius)
    train, test = split_train_test(cfg.n, cfg.test_fraction, cfg.seed, replicate)
    return sample_grf(locs, truth, cfg.N, seed), train, test


def _replicate(cfg: RunConfig, replicate: int, loaded: Optional[SpatialDataset], inner_workers: Optional[int]):
    seed = derive_seed(cfg.seed, replicate)
    family = cfg.family()
    t0 = time.perf_counter()
    if loaded is not None:
        ds = loaded
        train_idx, test_idx = split_train_test(ds.n, cfg.test_fraction, cfg.seed, replicate)
    else:
        ds, train_idx, test_idx = _simulate(cfg, replicate, seed)
    train, test = ds.subset(train_idx), ds.subset(test_idx)
    t1 = time.perf_counter()

    outcome = fit(
        train, family, cfg.method, cfg.blocks, cfg.stationary, cfg.nugget, cfg.stage1_config(),
        mle_starts=cfg.mle_starts, seed=seed, n_B=cfg.n_block_max, max_workers=inner_workers,
    )
    if outcome.params is None and not outcome.block_params:
        raise SpsError(f"replicate {replicate}: fit produced no parameters ({'; '.join(outcome.warnings)})")
    t2 = time.perf_counter()

    pred = outcome.predict(train, test.locs.X, inner_workers)
    if cfg.mspe_against == "truth":
        reference = predict_segmented(train, cfg.true_params(), test.locs.X, outcome.plan,
                                      max_workers=inner_workers).mean
    else:
        reference = test.y_bar()
    t3 = time.perf_counter()
    points = pd.DataFrame({
        "replicate": replicate,
        "method": method_label(cfg),
        "distance_to_hull": distance_to_hull(train.locs, test.locs.X),
        "squared_error": (np.asarray(reference) - pred.mean) ** 2,
    }, columns=POINT_COLUMNS)

    theta = outcome.mean_params_vector()
    truth = cfg.true_params().as_vector() if loaded is None else None
    row = {"replicate": replicate}
    row.update(zip(theta_columns(family.q), theta.tolist()))
    row["error_norm"] = float(np.linalg.norm(theta - truth)) if truth is not None else math.nan
    row["mspe"] = mspe(reference, pred.mean)
    row["flagged"] = bool(outcome.flagged)
    timing = {"replicate": replicate, "simulate_seconds": t1 - t0, "fit_seconds": t2 - t1,
              "predict_seconds": t3 - t2}
    log(f"   replicate {replicate}: mspe={row['mspe']:.4g} flagged={row['flagged']}", "info")
    return row, timing, points, outcome.plan.sizes()


def _write(report: BenchmarkReport, out_dir: Union[str, Path]) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.rows.to_csv(out / "replicates.csv", index=False, float_format=_FLOAT_FORMAT)
    (out / "summary.json").write_bytes(orjson.dumps(report.summary, option=JSON_OPTIONS))
    report.points.to_csv(out / "points.csv", index=False, float_format=_FLOAT_FORMAT)
    report.timings.to_csv(out / "timings.csv", index=False, float_format="%.6f")


def run_benchmark(cfg: RunConfig, out_dir: Optional[Union[str, Path]] = None) -> BenchmarkReport:
    """Run R replicates; on a failure the completed rows are saved and BenchmarkAborted raised."""
    banner(f"Benchmark: {cfg.method} {cfg.kernel} n={cfg.n} N={cfg.N} R={cfg.R} blocks={cfg.blocks}")
    out_dir = out_dir if out_dir is not None else cfg.output
    loaded = read_dataset(cfg.input) if cfg.input else None
    q = cfg.family().q
    truth = cfg.true_params().as_vector() if loaded is None else None
    inner_workers = 1 if cfg.R > 1 else cfg.max_workers

    results: List[Optional[Tuple[dict, dict, pd.DataFrame, List[int]]]] = [None] * cfg.R
    failure: Optional[BaseException] = None
    with ThreadPoolExecutor(max_workers=cfg.max_workers) as pool:
        futures = [pool.submit(_replicate, cfg, l, loaded, inner_workers) for l in range(cfg.R)]
        for l, future in enumerate(futures):
            if future.cancelled():
                continue
            try:
                results[l] = future.result()
            except (SpsError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
                failure = failure or exc
                log(f"❌ replicate {l} failed: {exc}", "error")
                for pending in futures[l + 1:]:
                    pending.cancel()

    done = [r for r in results if r is not None]
    columns = ["replicate", *theta_columns(q), "error_norm", "mspe", "flagged"]
    rows = pd.DataFrame([r[0] for r in done], columns=columns)
    timings = pd.DataFrame([r[1] for r in done],
                           columns=["replicate", "simulate_seconds", "fit_seconds", "predict_seconds"])
    points = (pd.concat([r[2] for r in done], ignore_index=True) if done
              else pd.DataFrame(columns=POINT_COLUMNS))
    summary: Dict[str, Any] = summarize(rows, q, truth) if len(rows) else {"R": 0}
    summary.update(method=cfg.method, method_label=method_label(cfg), kernel=cfg.kernel, blocks=cfg.blocks,
                   n=cfg.n, N=cfg.N, mspe_against=cfg.mspe_against,
                   stop_criteria=stop_criteria(cfg, done[0][3]) if done else None,
                   error_by_hull_distance=hull_error_bins(points, cfg.hull_bins) if done else [])
    report = BenchmarkReport(rows, summary, timings, points)

    if failure is not None:
        report.summary["aborted"] = True
        if out_dir is not None:
            _write(report, out_dir)
        raise BenchmarkAborted(f"benchmark aborted after {len(done)}/{cfg.R} replicates: {failure}", report)
    if out_dir is not None:
        _write(report, out_dir)
    log(f"✅ {cfg.R} replicate(s): mspe_mean={summary['mspe_mean']:.4g}", "success")
    return report
