"""
search.py - Derivative-free minimisation shared by Stage II and the MLE baseline.

Nelder-Mead runs from several starts on a thread pool; the reduction is by
(objective, start index) so results do not depend on scheduling. `polish`
finishes with a compass search so the answer beats every axis trial point at the
requested resolution.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize

from .console import log

Objective = Callable[[np.ndarray], float]

_POLISH_MAX_ROUNDS = 10_000


@dataclass(frozen=True)
class SearchResult:
    x: np.ndarray
    fun: float
    start_index: int
    nfev: int
    success: bool
    message: str = ""


def _safe(fun: Objective) -> Objective:
    def wrapped(x: np.ndarray) -> float:
        try:
            value = float(fun(np.asarray(x, dtype=float)))
        except (ArithmeticError, ValueError, np.linalg.LinAlgError):
            return math.inf
        return value if math.isfinite(value) else math.inf
    return wrapped


def _run_start(
    fun: Objective, x0: np.ndarray, index: int, xatol: float, fatol: float, max_iter: int
) -> SearchResult:
    f0 = fun(x0)
    if not math.isfinite(f0):
        return SearchResult(x0, math.inf, index, 1, False, "start is infeasible")
    res = minimize(
        fun,
        x0,
        method="Nelder-Mead",
        options={"xatol": xatol, "fatol": fatol, "maxiter": max_iter, "adaptive": x0.size > 2},
    )
    x, value = np.asarray(res.x, dtype=float), float(res.fun)
    if f0 < value:
        x, value = x0, f0
    return SearchResult(x, value, index, int(res.nfev), bool(res.success), str(res.message))


def multistart_minimize(
    fun: Objective,
    starts: Sequence[Sequence[float]],
    xatol: float = 1e-8,
    fatol: float = 1e-12,
    max_iter: int = 2000,
    max_workers: Optional[int] = None,
) -> Tuple[SearchResult, List[SearchResult]]:
    """Nelder-Mead from every start; returns (best, all results in start order).

    Ties on the objective go to the lowest start index.
    """
    points = [np.atleast_1d(np.asarray(s, dtype=float)) for s in starts]
    if not points:
        raise ValueError("multistart_minimize needs at least one start")
    safe = _safe(fun)

    def job(item: Tuple[int, np.ndarray]) -> SearchResult:
        index, x0 = item
        return _run_start(safe, x0, index, xatol, fatol, max_iter)

    if max_workers == 1 or len(points) == 1:
        results = [job(item) for item in enumerate(points)]
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(job, enumerate(points)))

    best = min(results, key=lambda r: (r.fun, r.start_index))
    failed = sum(1 for r in results if not math.isfinite(r.fun))
    if failed:
        log(f"⚠️  {failed}/{len(results)} start(s) never reached a feasible point", "warn")
    return best, results


def polish(
    fun: Objective,
    x: Sequence[float],
    resolution: float,
    initial_step: Optional[float] = None,
) -> Tuple[np.ndarray, float, int]:
    """Compass search down to `resolution`.

    On return no trial point x +/- h e_k, x +/- 2h e_k (h = resolution) is better
    than x. Returns (x, f(x), evaluations).
    """
    safe = _safe(fun)
    x = np.atleast_1d(np.asarray(x, dtype=float)).copy()
    fx = safe(x)
    evals = 1
    step = initial_step if initial_step is not None else max(resolution, 0.05 * float(np.max(np.abs(x))))
    step = max(step, resolution)
    for _ in range(_POLISH_MAX_ROUNDS):
        best_x, best_f = x, fx
        for k in range(x.size):
            for delta in (step, -step, 2 * step, -2 * step):
                trial = x.copy()
                trial[k] += delta
                value = safe(trial)
                evals += 1
                if value < best_f:
                    best_x, best_f = trial, value
        if best_f < fx:
            x, fx = best_x, best_f
            continue
        if step <= resolution:
            break
        step = max(0.5 * step, resolution)
    return x, fx, evals


def finite_difference_hessian(fun: Objective, x: Sequence[float], steps: Sequence[float]) -> np.ndarray:
    """Central-difference Hessian with per-coordinate steps."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    h = np.atleast_1d(np.asarray(steps, dtype=float))
    q = x.size
    f0 = fun(x)
    H = np.empty((q, q))
    E = np.diag(h)
    for i in range(q):
        H[i, i] = (fun(x + E[i]) - 2.0 * f0 + fun(x - E[i])) / (h[i] * h[i])
        for j in range(i + 1, q):
            H[i, j] = H[j, i] = (
                fun(x + E[i] + E[j]) - fun(x + E[i] - E[j])
                - fun(x - E[i] + E[j]) + fun(x - E[i] - E[j])
            ) / (4.0 * h[i] * h[j])
    return H
