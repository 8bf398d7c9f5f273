#!/usr/bin/env python3
"""
cli.py - Command-line entry point for sps-grf

Usage:
    python -m sps_grf simulate --kernel se --theta-rho 4 --theta-v 8 --theta-0 4 \\
        --n 1000 --dim 2 --domain 0:100 --N 1 --seed 7 --out data.csv
    python -m sps_grf fit --method sps --input data.csv --kernel se --alpha auto \\
        --blocks ss:3x3 --nugget on --seed 7 --out params.json
    python -m sps_grf predict --params params.json --train data.csv --query query.csv --out pred.csv
    python -m sps_grf benchmark --config configs/segmented_ss.yaml --out report/
    python -m sps_grf diagnose near-sparsity --config configs/near_sparsity.yaml --out diag.csv

Exit codes:
    0  success
    1  usage error or failure (FATAL line on stderr)
    2  finished, but a fit was flagged (non-convergence / search flag)
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from typing import List, Optional

import orjson

from .benchmark import run_benchmark
from .config import load_run_config, parse_domain
from .console import banner, configure, log
from .diagnostics import DIAGNOSTICS, diagnose
from .errors import SpsError
from .kernels import CovarianceParams, KernelFamily
from .pipeline import JSON_OPTIONS, fit, outcome_from_document, params_document, read_params, write_params
from .predict import write_predictions
from .sampler import read_dataset, read_queries, sample_grf, sample_locations, write_dataset
from .stage1_admm import Stage1Config

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_FLAGGED = 2


class _Parser(argparse.ArgumentParser):
    """Usage errors exit 1 instead of argparse's 2 (2 means "flagged" here)."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_FAILURE)


def _on_off(text: str) -> bool:
    value = text.strip().lower()
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError(f"expected on/off, got {text!r}")
    return value == "on"


def _alpha(text: str) -> Optional[float]:
    if text.strip().lower() == "auto":
        return None
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"alpha must be 'auto' or a number, got {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError("alpha must be > 0")
    return value


# ============================================
# Subcommands
# ============================================

def cmd_simulate(args: argparse.Namespace) -> int:
    family = KernelFamily.from_token(args.kernel, args.dim)
    params = CovarianceParams(family, tuple(args.theta_rho), args.theta_v, args.theta_0)
    locs = sample_locations(args.n, args.dim, args.seed, args.design, parse_domain(args.domain),
                            args.radius, args.inner_radius)
    ds = sample_grf(locs, params, args.N, args.seed)
    write_dataset(ds, args.out if args.out else sys.stdout)
    log(f"✅ simulated n={ds.n} N={ds.N} ({family.token}) -> {args.out or 'stdout'}", "success")
    return EXIT_OK


def cmd_fit(args: argparse.Namespace) -> int:
    ds = read_dataset(args.input)
    family = KernelFamily.from_token(args.kernel, ds.d)
    cfg = Stage1Config(alpha=args.alpha, max_iters=args.max_iters)
    if args.eps is not None:
        cfg = replace(cfg, eps_primal=args.eps, eps_dual=args.eps)
    banner(f"Fit {args.method} ({family.token}) on n={ds.n}, N={ds.N}, blocks={args.blocks}")
    outcome = fit(
        ds, family, args.method, args.blocks, args.stationary, args.nugget, cfg,
        mle_starts=args.mle_starts, seed=args.seed, n_B=args.n_block_max, max_workers=args.max_workers,
    )
    if args.out:
        write_params(outcome, ds.d, args.out)
    else:
        sys.stdout.write(orjson.dumps(params_document(outcome, ds.d), option=JSON_OPTIONS).decode() + "\n")
    if outcome.flagged:
        for msg in outcome.warnings:
            log(f"⚠️  {msg}", "warn")
        log("⚠️  fit finished with flags", "warn")
        return EXIT_FLAGGED
    log(f"✅ fit done -> {args.out or 'stdout'}", "success")
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    train = read_dataset(args.train)
    outcome = outcome_from_document(read_params(args.params), train)
    queries = read_queries(args.query, train.d)
    pred = outcome.predict(train, queries, args.max_workers)
    write_predictions(pred, args.out if args.out else sys.stdout)
    log(f"✅ {len(pred)} prediction(s), rule={pred.metadata.get('rule')}", "success")
    return EXIT_OK


def cmd_benchmark(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config)
    report = run_benchmark(cfg, args.out)
    s = report.summary
    print(f"{'column':<14} {'mean':>12} {'stdev':>12} {'stderr':>12}")
    for col, mean, sd, se in zip(s["columns"], s["theta_bar"], s["stdev_theta"], s["stderr_theta"]):
        print(f"{col:<14} {mean:>12.5g} {sd:>12.5g} {se:>12.5g}")
    print(f"{'mspe':<14} {s['mspe_mean']:>12.5g} {s['mspe_stdev']:>12.5g}")
    bins = [b for b in s["error_by_hull_distance"] if b["count"]]
    if len(bins) > 1:
        print(f"\n{'hull distance':<20} {'count':>8} {'mse':>12}")
        for b in bins:
            span = "inside" if b["hi"] == 0 else f"({b['lo']:.3g}, {b['hi']:.3g}]"
            print(f"{span:<20} {b['count']:>8d} {b['mse']:>12.5g}")
    return EXIT_FLAGGED if report.flagged else EXIT_OK


def cmd_diagnose(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config)
    table = diagnose(args.kind, cfg, args.out)
    if not args.out:
        table.to_csv(sys.stdout, index=False, float_format="%.17g")
    log(f"✅ {args.kind}: {len(table)} row(s)", "success")
    return EXIT_OK


# ============================================
# Parser
# ============================================

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="progress output on stderr")

    parser = _Parser(prog="sps-grf", description="Sparse precision selection for Gaussian random fields",
                     allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", parents=[common], allow_abbrev=False, help="simulate a GRF dataset")
    sim.add_argument("--kernel", default="se")
    sim.add_argument("--theta-rho", type=float, nargs="+", required=True)
    sim.add_argument("--theta-v", type=float, required=True)
    sim.add_argument("--theta-0", type=float, default=0.0)
    sim.add_argument("--n", type=int, required=True)
    sim.add_argument("--dim", type=int, default=2)
    sim.add_argument("--domain", default="0:100")
    sim.add_argument("--design", choices=["box", "ball", "shell"], default="box")
    sim.add_argument("--radius", type=float, default=10.0)
    sim.add_argument("--inner-radius", type=float, default=0.0)
    sim.add_argument("--N", type=int, default=1)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out")
    sim.set_defaults(handler=cmd_simulate)

    fit_p = sub.add_parser("fit", parents=[common], allow_abbrev=False, help="fit covariance parameters")
    fit_p.add_argument("--method", choices=["sps", "mle", "covariogram"], default="sps")
    fit_p.add_argument("--input", required=True)
    fit_p.add_argument("--kernel", default="se")
    fit_p.add_argument("--alpha", type=_alpha, default=None)
    fit_p.add_argument("--blocks", default="none")
    fit_p.add_argument("--n-block-max", type=int, default=1000)
    fit_p.add_argument("--stationary", type=_on_off, default=True)
    fit_p.add_argument("--nugget", type=_on_off, default=True)
    fit_p.add_argument("--mle-starts", type=int, default=10)
    fit_p.add_argument("--max-iters", type=int, default=500)
    fit_p.add_argument("--eps", type=float, default=None)
    fit_p.add_argument("--max-workers", type=int, default=None)
    fit_p.add_argument("--seed", type=int, default=0)
    fit_p.add_argument("--out")
    fit_p.set_defaults(handler=cmd_fit)

    pred = sub.add_parser("predict", parents=[common], allow_abbrev=False, help="kriging prediction")
    pred.add_argument("--params", required=True)
    pred.add_argument("--train", required=True)
    pred.add_argument("--query", required=True)
    pred.add_argument("--max-workers", type=int, default=None)
    pred.add_argument("--out")
    pred.set_defaults(handler=cmd_predict)

    bench = sub.add_parser("benchmark", parents=[common], allow_abbrev=False, help="replicated benchmark")
    bench.add_argument("--config", required=True)
    bench.add_argument("--out")
    bench.set_defaults(handler=cmd_benchmark)

    diag = sub.add_parser("diagnose", parents=[common], allow_abbrev=False, help="CSV diagnostics")
    diag.add_argument("kind", choices=sorted(DIAGNOSTICS))
    diag.add_argument("--config", required=True)
    diag.add_argument("--out")
    diag.set_defaults(handler=cmd_diagnose)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure(args.verbose)
    try:
        return args.handler(args)
    except SpsError as exc:
        print(f"FATAL: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as exc:
        print(f"FATAL: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    raise SystemExit(main())
