"""
pipeline.py - End-to-end fits and the params.json document.

    fit_sps   S -> Stage I -> invert -> Stage II on one block
    fit       method/segmentation dispatch shared by the CLI and the benchmark
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import orjson

from .errors import ConfigError, InvalidParameterError
from .kernels import CovarianceParams, KernelFamily
from .mle import mle_fit
from .predict import PredictiveDistribution, predict_nonstationary, predict_segmented
from .sampler import SpatialDataset, distance_weights, sample_covariance
from .segmentation import DEFAULT_BLOCK_CEILING, SegmentationPlan, fit_segmented, parse_block_spec
from .stage1_admm import PrecisionEstimate, Stage1Config, solve_stage1
from .stage2_lsq import Stage2Options, Stage2Result, fit_stage2, invert_precision

JSON_OPTIONS = orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY


@dataclass
class SpsFit:
    estimate: PrecisionEstimate
    stage2: Stage2Result

    @property
    def flagged(self) -> bool:
        return not self.estimate.converged or self.stage2.flagged


def fit_sps(
    ds: SpatialDataset,
    family: KernelFamily,
    cfg: Optional[Stage1Config] = None,
    nugget_enabled: bool = True,
    opts: Optional[Stage2Options] = None,
) -> SpsFit:
    """Unsegmented two-stage fit."""
    cfg = (cfg or Stage1Config()).resolve(ds.n)
    est = solve_stage1(sample_covariance(ds), distance_weights(ds.locs), cfg)
    result = fit_stage2(invert_precision(est), ds.locs, family, nugget_enabled, opts)
    return SpsFit(est, result)


@dataclass
class FitOutcome:
    """What `fit` returns: one params vector, or one per block when nonstationary."""

    method: str
    family: KernelFamily
    params: Optional[CovarianceParams]
    block_params: List[CovarianceParams]
    plan: SegmentationPlan
    block_spec: str
    seed: int
    flagged: bool
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)

    @property
    def stationary(self) -> bool:
        return self.params is not None

    def mean_params_vector(self) -> np.ndarray:
        """Parameter vector, averaged over blocks for nonstationary fits."""
        if self.params is not None:
            return self.params.as_vector()
        return np.mean([p.as_vector() for p in self.block_params], axis=0)

    def predict(self, train: SpatialDataset, queries: Any, max_workers: Optional[int] = None) -> PredictiveDistribution:
        if self.params is not None:
            return predict_segmented(train, self.params, queries, self.plan, max_workers=max_workers)
        return predict_nonstationary(train, self.plan, self.block_params, queries, max_workers)


def fit(
    ds: SpatialDataset,
    family: KernelFamily,
    method: str = "sps",
    blocks: str = "none",
    stationary: bool = True,
    nugget_enabled: bool = True,
    cfg: Optional[Stage1Config] = None,
    opts: Optional[Stage2Options] = None,
    mle_starts: int = 10,
    seed: int = 0,
    n_B: int = DEFAULT_BLOCK_CEILING,
    max_workers: Optional[int] = None,
) -> FitOutcome:
    """Fit by `sps` (optionally segmented), the `mle` baseline or the `covariogram` baseline (Stage II on S)."""
    plan = parse_block_spec(blocks, ds.locs, n_B=n_B, seed=seed)
    if method == "mle":
        if plan.K != 1:
            raise ConfigError("the MLE baseline does not support segmentation")
        res = mle_fit(ds, family, mle_starts, seed, nugget_enabled, max_workers)
        return FitOutcome("mle", family, res.params, [], plan, blocks, seed, res.flagged,
                          res.diagnostics(), res.warnings)
    if method == "covariogram":
        if plan.K != 1:
            raise ConfigError("the covariogram baseline does not support segmentation")
        res = fit_stage2(sample_covariance(ds), ds.locs, family, nugget_enabled,
                         opts or Stage2Options(seed=seed, max_workers=max_workers))
        return FitOutcome("covariogram", family, res.theta_hat, [], plan, blocks, seed, res.flagged,
                          res.diagnostics(), res.warnings)
    if method != "sps":
        raise ConfigError(f"unknown method '{method}' (sps, mle, covariogram)")

    opts = opts or Stage2Options(seed=seed, max_workers=max_workers)
    if plan.K == 1:
        sps = fit_sps(ds, family, cfg, nugget_enabled, opts)
        diagnostics = {
            "stage1_iterations": sps.estimate.iterations,
            "stage1_converged": sps.estimate.converged,
            "stage1_objective": sps.estimate.objective,
            "alpha": sps.estimate.alpha,
            "a_eff": sps.estimate.a_eff,
            "b_eff": sps.estimate.b_eff,
            **sps.stage2.diagnostics(),
        }
        return FitOutcome("sps", family, sps.stage2.theta_hat, [], plan, blocks, seed, sps.flagged,
                          diagnostics, sps.estimate.warnings + sps.stage2.warnings)

    seg = fit_segmented(ds, plan, family, stationary, cfg, nugget_enabled, opts, max_workers)
    diagnostics = {
        "K": plan.K,
        "block_sizes": plan.sizes(),
        "stage1_iterations": [e.iterations for e in seg.estimates],
        "stage1_converged": all(e.converged for e in seg.estimates),
    }
    if stationary:
        diagnostics.update(seg.stage2.diagnostics())
        return FitOutcome("sps", family, seg.stage2.theta_hat, [], plan, blocks, seed, seg.flagged,
                          diagnostics, seg.warnings)
    diagnostics["objective"] = [r.objective for r in seg.stage2]
    return FitOutcome("sps", family, None, [r.theta_hat for r in seg.stage2], plan, blocks, seed,
                      seg.flagged, diagnostics, seg.warnings)


# ============================================
# params.json
# ============================================

def params_document(outcome: FitOutcome, d: int) -> Dict[str, Any]:
    doc: Dict[str, Any] = {
        "family": outcome.family.token,
        "dim": d,
        "method": outcome.method,
        "flagged": outcome.flagged,
        "diagnostics": outcome.diagnostics,
        "warnings": outcome.warnings,
        "blocks": outcome.block_spec,
        "n_block_max": outcome.plan.n_B,
        "seed": outcome.seed,
    }
    if outcome.params is not None:
        doc.update(outcome.params.to_dict())
    else:
        doc["block_params"] = [p.to_dict() for p in outcome.block_params]
    return doc


def write_params(outcome: FitOutcome, d: int, path: Union[str, Path]) -> None:
    Path(path).write_bytes(orjson.dumps(params_document(outcome, d), option=JSON_OPTIONS))


def read_params(path: Union[str, Path]) -> Dict[str, Any]:
    try:
        doc = orjson.loads(Path(path).read_bytes())
    except orjson.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if "family" not in doc or ("theta_rho" not in doc and "block_params" not in doc):
        raise ConfigError(f"{path}: missing family/theta_rho")
    return doc


def outcome_from_document(doc: Dict[str, Any], train: SpatialDataset) -> FitOutcome:
    """Rebuild what prediction needs; per-block plans are re-derived from the training data."""
    d = int(doc.get("dim", train.d))
    if d != train.d:
        raise InvalidParameterError(f"params are for d={d}, training data is {train.d}-d")
    family = KernelFamily.from_token(str(doc["family"]), d)
    spec = str(doc.get("blocks", "none"))
    seed = int(doc.get("seed", 0))
    plan = parse_block_spec(spec, train.locs, n_B=int(doc.get("n_block_max", DEFAULT_BLOCK_CEILING)), seed=seed)
    if "block_params" in doc:
        block_params = [CovarianceParams.from_dict({**p, "family": doc["family"]}, d) for p in doc["block_params"]]
        if len(block_params) != plan.K:
            raise ConfigError(f"{len(block_params)} block parameter sets, plan '{spec}' has {plan.K} blocks")
        return FitOutcome(str(doc.get("method", "sps")), family, None, block_params, plan, spec, seed,
                          bool(doc.get("flagged", False)))
    return FitOutcome(str(doc.get("method", "sps")), family, CovarianceParams.from_dict(doc, d), [],
                      plan, spec, seed, bool(doc.get("flagged", False)))
