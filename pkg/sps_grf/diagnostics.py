"""
diagnostics.py - CSV diagnostics driven by a run config.

Kinds:
    near-sparsity          fractions over eps_grid x n_grid for P* and C*
    precision-vs-distance  (i, j, distance, |P*_ij|, scaled) for one simulated set
    objective-curve        (theta_rho, f) of the Stage II objective
    decay-profile          sorted scaled off-diagonal magnitudes of P* and C*
    admm-trace             per-iteration ADMM residuals on one simulated dataset
"""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, Optional, Union

import numpy as np
import pandas as pd

from .config import RunConfig
from .console import log
from .errors import ConfigError
from .kernels import LocationSet, covariance_matrix
from .pipeline import fit_sps
from .sampler import (
    decay_profile,
    derive_seed,
    distance_weights,
    near_sparsity_fraction,
    precision_vs_distance,
    sample_covariance,
    sample_grf,
    sample_locations,
    true_precision,
)
from .stage1_admm import solve_stage1
from .stage2_lsq import invert_precision, objective_curve

_DECAY_TOP = 1000


def _locations(cfg: RunConfig, n: int, purpose: str, *keys: int) -> LocationSet:
    design = "ball" if cfg.design == "extrapolation" else cfg.design
    return sample_locations(n, cfg.dim, derive_seed(cfg.seed, purpose, n, *keys), design, cfg.domain, cfg.radius)


def near_sparsity_table(cfg: RunConfig) -> pd.DataFrame:
    """Fractions averaged over `cfg.replications` location draws per n."""
    params = cfg.true_params()
    rows = []
    for n in cfg.n_grid:
        totals = {(float(eps), name): 0.0 for eps in cfg.eps_grid for name in ("precision", "covariance")}
        for r in range(cfg.replications):
            locs = _locations(cfg, int(n), "near-sparsity", r)
            mats = {"precision": true_precision(locs, params), "covariance": covariance_matrix(locs, params)}
            for eps, name in totals:
                totals[eps, name] += near_sparsity_fraction(mats[name], eps)
        for (eps, name), total in totals.items():
            rows.append({"n": int(n), "eps": eps, "matrix": name, "fraction": total / cfg.replications})
        log(f"   near-sparsity n={n}: {cfg.replications} draw(s)", "info")
    return pd.DataFrame(rows, columns=["n", "eps", "matrix", "fraction"])


def precision_distance_table(cfg: RunConfig) -> pd.DataFrame:
    return precision_vs_distance(_locations(cfg, cfg.n, "precision-vs-distance"), cfg.true_params())


def objective_curve_table(cfg: RunConfig) -> pd.DataFrame:
    params = cfg.true_params()
    locs = _locations(cfg, cfg.n, "objective-curve")
    if cfg.curve_source == "truth":
        C_hat = covariance_matrix(locs, params)
    else:
        ds = sample_grf(locs, params, cfg.N, derive_seed(cfg.seed, "objective-curve-field"))
        fit = fit_sps(ds, cfg.family(), cfg.stage1_config(), cfg.nugget)
        C_hat = invert_precision(fit.estimate)
    return objective_curve(cfg.curve_values(), C_hat, locs, cfg.family(), cfg.nugget)


def decay_profile_table(cfg: RunConfig) -> pd.DataFrame:
    params = cfg.true_params()
    locs = _locations(cfg, cfg.n, "decay-profile")
    prec = decay_profile(true_precision(locs, params), _DECAY_TOP)
    cov = decay_profile(covariance_matrix(locs, params), _DECAY_TOP)
    return pd.DataFrame({"rank": np.arange(1, prec.size + 1), "precision": prec, "covariance": cov})


def admm_trace_table(cfg: RunConfig) -> pd.DataFrame:
    params = cfg.true_params()
    locs = _locations(cfg, cfg.n, "admm-trace")
    ds = sample_grf(locs, params, cfg.N, derive_seed(cfg.seed, "admm-trace-field"))
    settings = replace(cfg.stage1_config(), keep_history=True)
    est = solve_stage1(sample_covariance(ds), distance_weights(locs), settings)
    return est.trace_frame()


DIAGNOSTICS: Dict[str, Callable[[RunConfig], pd.DataFrame]] = {
    "near-sparsity": near_sparsity_table,
    "precision-vs-distance": precision_distance_table,
    "objective-curve": objective_curve_table,
    "decay-profile": decay_profile_table,
    "admm-trace": admm_trace_table,
}


def diagnose(kind: str, cfg: RunConfig, out: Optional[Union[str, Path]] = None) -> pd.DataFrame:
    """Build the table for `kind` and optionally write it as CSV."""
    try:
        builder = DIAGNOSTICS[kind]
    except KeyError:
        raise ConfigError(f"unknown diagnostic '{kind}' (known: {', '.join(DIAGNOSTICS)})") from None
    log(f"🔍 diagnostic {kind}", "info")
    table = builder(cfg)
    if out is not None:
        table.to_csv(out, index=False, float_format="%.17g")
    return table
