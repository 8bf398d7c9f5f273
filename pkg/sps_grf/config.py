"""
config.py - Run configs for `benchmark` and `diagnose`.

A run config is a YAML or JSON mapping (JSON parses as YAML). Unknown keys
are rejected so typos do not silently fall back to defaults.

Example (configs/segmented_ss.yaml):
    kernel: se
    theta_rho: [4]
    theta_v: 8
    theta_0: 4
    n: 1000
    domain: "0:100"
    blocks: "ss:3x3"
    R: 20
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from .errors import ConfigError, SpsError
from .kernels import CovarianceParams, KernelFamily
from .stage1_admm import Stage1Config

_METHODS = ("sps", "mle", "covariogram")
_DESIGNS = ("box", "ball", "extrapolation")
_MSPE_TARGETS = ("truth", "observed")
_CURVE_SOURCES = ("truth", "sps")


def parse_domain(value: Any) -> Tuple[float, float]:
    """'lo:hi' or [lo, hi] -> (lo, hi)."""
    try:
        if isinstance(value, str):
            lo, hi = (float(p) for p in value.split(":"))
        else:
            lo, hi = (float(p) for p in value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"domain must be 'lo:hi' or [lo, hi], got {value!r}") from exc
    if not hi > lo:
        raise ConfigError(f"empty domain {lo}:{hi}")
    return lo, hi


def _on_off(value: Any, key: str) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("on", "true", "yes", "1"):
        return True
    if text in ("off", "false", "no", "0"):
        return False
    raise ConfigError(f"{key} must be on/off, got {value!r}")


@dataclass(frozen=True)
class RunConfig:
    kernel: str = "se"
    theta_rho: Tuple[float, ...] = (4.0,)
    theta_v: float = 8.0
    theta_0: float = 4.0
    n: int = 1000
    n_grid: Tuple[int, ...] = (10, 100)
    dim: int = 2
    domain: Tuple[float, float] = (0.0, 100.0)
    design: str = "box"
    radius: float = 10.0
    N: int = 1
    R: int = 1
    seed: int = 0
    method: str = "sps"
    mle_starts: int = 10
    blocks: str = "none"
    n_block_max: int = 1000
    stationary: bool = True
    nugget: bool = True
    alpha: Optional[float] = None
    eps_primal: float = 1e-5
    eps_dual: float = 1e-5
    max_iters: int = 500
    rho_growth: float = 1.05
    test_fraction: float = 0.1
    mspe_against: str = "truth"
    curve_grid: Optional[Tuple[float, ...]] = None
    curve_source: str = "truth"
    eps_grid: Tuple[float, ...] = (0.1, 0.01, 0.001)
    replications: int = 100
    hull_bins: int = 10
    input: Optional[str] = None
    max_workers: Optional[int] = None
    output: Optional[str] = None

    def __post_init__(self):
        if not 0 < self.test_fraction < 1:
            raise ConfigError(f"test_fraction must be in (0, 1), got {self.test_fraction}")
        if self.R < 1:
            raise ConfigError(f"R must be >= 1, got {self.R}")
        if self.N < 1:
            raise ConfigError(f"N must be >= 1, got {self.N}")
        if self.n < 2:
            raise ConfigError(f"n must be >= 2, got {self.n}")
        if self.method not in _METHODS:
            raise ConfigError(f"method must be one of {_METHODS}, got {self.method!r}")
        if self.design not in _DESIGNS:
            raise ConfigError(f"design must be one of {_DESIGNS}, got {self.design!r}")
        if self.mspe_against not in _MSPE_TARGETS:
            raise ConfigError(f"mspe_against must be one of {_MSPE_TARGETS}, got {self.mspe_against!r}")
        if self.curve_source not in _CURVE_SOURCES:
            raise ConfigError(f"curve_source must be one of {_CURVE_SOURCES}, got {self.curve_source!r}")
        if self.input is not None and self.mspe_against == "truth":
            raise ConfigError("mspe_against=truth needs simulated data; use 'observed' with input")
        if any(not 0 < e < 1 for e in self.eps_grid):
            raise ConfigError(f"eps_grid values must lie in (0, 1), got {list(self.eps_grid)}")
        if self.replications < 1:
            raise ConfigError(f"replications must be >= 1, got {self.replications}")
        if self.hull_bins < 1:
            raise ConfigError(f"hull_bins must be >= 1, got {self.hull_bins}")
        try:
            self.true_params()
        except SpsError as exc:
            raise ConfigError(f"invalid kernel/theta: {exc}") from exc

    def family(self) -> KernelFamily:
        return KernelFamily.from_token(self.kernel, self.dim)

    def true_params(self) -> CovarianceParams:
        return CovarianceParams(self.family(), tuple(self.theta_rho), self.theta_v, self.theta_0)

    def stage1_config(self) -> Stage1Config:
        return Stage1Config(
            alpha=self.alpha,
            rho_growth=self.rho_growth,
            eps_primal=self.eps_primal,
            eps_dual=self.eps_dual,
            max_iters=self.max_iters,
        )

    def curve_values(self) -> np.ndarray:
        if self.curve_grid is not None:
            return np.asarray(self.curve_grid, dtype=float)
        centre = float(np.mean(self.theta_rho))
        return np.geomspace(centre / 10.0, centre * 10.0, 41)


def _coerce(raw: Dict[str, Any]) -> Dict[str, Any]:
    out = dict(raw)
    for key in ("theta_rho", "n_grid", "eps_grid"):
        if key in out:
            out[key] = tuple(np.atleast_1d(out[key]).tolist())
    if "domain" in out:
        out["domain"] = parse_domain(out["domain"])
    if "alpha" in out and (out["alpha"] is None or str(out["alpha"]).lower() == "auto"):
        out["alpha"] = None
    for key in ("stationary", "nugget"):
        if key in out:
            out[key] = _on_off(out[key], key)
    grid = out.get("curve_grid")
    if isinstance(grid, dict):
        try:
            out["curve_grid"] = tuple(np.geomspace(float(grid["start"]), float(grid["stop"]), int(grid["num"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError("curve_grid mapping needs start, stop, num") from exc
    elif grid is not None:
        out["curve_grid"] = tuple(float(v) for v in grid)
    if out.get("blocks") is False:
        out["blocks"] = "none"
    return out


def run_config_from_dict(raw: Dict[str, Any]) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("run config must be a mapping")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    try:
        return RunConfig(**_coerce(raw))
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """Read a YAML/JSON run config."""
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return run_config_from_dict(raw)


def stop_criteria(cfg: RunConfig, sizes: Sequence[int]) -> Dict[str, List[float]]:
    """Scaled ADMM tolerances and penalty for each Stage I problem, one entry per block size.

    `sizes` are the point counts the solver actually sees (the training set,
    or each block of it), not the configured n.
    """
    if not sizes or any(int(s) < 1 for s in sizes):
        raise ConfigError(f"need at least one positive problem size, got {list(sizes)}")
    base = cfg.stage1_config()
    resolved = [base.resolve(int(s)) for s in sizes]
    return {
        "block_sizes": [int(s) for s in sizes],
        "tol_primal": [cfg.eps_primal * int(s) for s in sizes],
        "tol_dual": [cfg.eps_dual * int(s) for s in sizes],
        "alpha": [float(r.alpha) for r in resolved],
    }
