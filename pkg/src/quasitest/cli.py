"""Command-line interface.

Subcommands
-----------
test       run a quasi-independence test on a CSV of pairs, JSON to stdout
marginals  estimate marginal CDFs, CSV to stdout
simulate   run a power-study preset or config, CSV table out
draws      sample permutations for a dataset and export diagnostics

Exit codes: 0 success, 1 usage error, 2 infeasible data, 3 numerical
failure.  All randomness derives from --seed, so identical invocations
produce byte-identical output.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys

import numpy as np

from . import __version__
from .bias import Truncation, bias_from_spec
from .core import Sample, build_weight_matrix
from .errors import (
    EmptyInput,
    InfeasibleSample,
    InputFormatError,
    InvalidParameter,
    NonTruncatedInput,
    QuasitestError,
    TooFewUncensored,
)
from .marginals import estimate_marginals_qi, exchangeable_pooled_cdf, npmle_inverse_weight
from .permsample import McmcConfig, sample_permutations_mcmc, sis_sample
from .simgen import PRESETS, power_results_to_csv, power_table, preset_rows
from .testing import TestConfig, max_workers, run_test

_USAGE_ERROR = 1
_DATA_ERROR = 2
_NUMERIC_ERROR = 3

_DATA_ERRORS = (
    InfeasibleSample,
    NonTruncatedInput,
    TooFewUncensored,
    InputFormatError,
    EmptyInput,
    FileNotFoundError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def read_sample(path, delimiter=",", header=True) -> Sample:
    """Parse a CSV with columns x, y and optional delta (case-insensitive
    header names; '.' decimal separator).  Errors name the offending row."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        rows = list(reader)
    if not rows:
        raise EmptyInput(f"{path}: empty file")
    start = 0
    cols = {"x": 0, "y": 1}
    if header:
        names = [c.strip().lower() for c in rows[0]]
        if "x" not in names or "y" not in names:
            raise InputFormatError(
                f"{path}: header must name columns x and y (got {rows[0]!r})"
            )
        cols = {name: k for k, name in enumerate(names)}
        start = 1
    has_delta = "delta" in cols or (not header and any(len(r) > 2 for r in rows[start:]))
    if not header and has_delta:
        cols["delta"] = 2
    xs, ys, ds = [], [], []
    for rownum, row in enumerate(rows[start:], start=start + 1):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            xs.append(float(row[cols["x"]]))
            ys.append(float(row[cols["y"]]))
            if has_delta:
                d = int(row[cols["delta"]])
                if d not in (0, 1):
                    raise ValueError
                ds.append(d)
        except (ValueError, IndexError):
            raise InputFormatError(
                f"{path}: row {rownum}: expected numeric x,y"
                + (",delta" if has_delta else "")
            ) from None
    if not xs:
        raise EmptyInput(f"{path}: no data rows")
    return Sample(xs, ys, ds if has_delta else None)


def _input_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(path, command, args_dict, input_path=None):
    manifest = {
        "command": command,
        "arguments": args_dict,
        "version": __version__,
    }
    if input_path is not None:
        manifest["input_sha256"] = _input_digest(input_path)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _resolve_bias(spec: str, sample: Sample):
    """Map the --bias flag to a bias function, honoring censored input."""
    kind = spec.partition(":")[0].strip().lower()
    if sample.censored and kind not in ("censoring", "truncation"):
        raise InvalidParameter(
            "data with a delta column requires --bias censoring (or truncation)"
        )
    if kind == "censoring" and not sample.censored:
        raise InputFormatError("--bias censoring needs a delta column in the input")
    return bias_from_spec(spec)


def _parse_method(spec: str):
    kind, _, arg = spec.partition(":")
    kind = kind.strip().lower()
    if kind == "perm-mcmc":
        return {"method": "perm-mcmc"}
    if kind == "perm-is":
        return {"method": "perm-is", "scheme": arg or "uniform"}
    if kind == "bootstrap":
        return {"method": "bootstrap", "estimator": arg or "pooled"}
    raise InvalidParameter(f"unknown method {spec!r}")


def cmd_test(args) -> int:
    sample = read_sample(args.input, delimiter=args.delimiter, header=not args.no_header)
    bias = _resolve_bias(args.bias, sample)
    cfg = TestConfig(
        statistic=args.statistic,
        B=args.B,
        seed=args.seed,
        expected_mode=args.expected_mode,
        mcmc_m=args.M,
        **_parse_method(args.method),
    )
    report = run_test(sample, bias, cfg)
    if args.manifest_out:
        _write_manifest(args.manifest_out, "test", _args_dict(args), args.input)
    json.dump(report.to_dict(), sys.stdout, sort_keys=True)
    sys.stdout.write("\n")
    return 0


def cmd_marginals(args) -> int:
    sample = read_sample(args.input, delimiter=args.delimiter, header=not args.no_header)
    bias = _resolve_bias(args.bias, sample)
    if args.estimator == "pooled":
        F = exchangeable_pooled_cdf(sample)
        pairs = [("x", F), ("y", F)]
    elif args.estimator == "npmle":
        Fx, Fy = npmle_inverse_weight(sample, bias)
        pairs = [("x", Fx), ("y", Fy)]
    else:
        Fx, Fy, _ = estimate_marginals_qi(
            sample, bias, eps=args.eps, max_iter=args.max_iter
        )
        pairs = [("x", Fx), ("y", Fy)]
    writer = csv.writer(sys.stdout)
    writer.writerow(["variable", "value", "mass", "cdf"])
    for name, F in pairs:
        cum = np.cumsum(F.mass)
        for v, m, c in zip(F.support, F.mass, cum):
            writer.writerow([name, repr(float(v)), repr(float(m)), repr(float(c))])
    if args.manifest_out:
        _write_manifest(args.manifest_out, "marginals", _args_dict(args), args.input)
    return 0


def cmd_simulate(args) -> int:
    if args.preset:
        rows = preset_rows(args.preset)
    else:
        rows = _rows_from_config(args.config)
    results = power_table(
        rows,
        alpha=args.alpha,
        reps=args.reps,
        seed=args.seed,
        workers=args.workers if args.workers else max_workers(),
    )
    power_results_to_csv(results, args.out)
    for r in results:
        sys.stdout.write(
            f"{r.row.label:24s} {r.row.config.method:10s} {r.row.config.statistic:15s}"
            f" rate={r.rate:.3f} [{r.ci_lo:.3f}, {r.ci_hi:.3f}]"
            f" reps={r.reps} mean_runtime={r.mean_runtime_s:.3f}s\n"
        )
        for idx, msg in r.failures:
            sys.stdout.write(f"    replicate {idx} failed: {msg}\n")
    if args.manifest_out:
        _write_manifest(args.manifest_out, "simulate", _args_dict(args))
    return 0


def _rows_from_config(path):
    from .simgen import PowerRow, _model_from_spec

    with open(path) as fh:
        spec = json.load(fh)
    rows = []
    for entry in spec["rows"]:
        cfg = TestConfig(
            method=entry.get("method", "perm-mcmc"),
            statistic=entry.get("statistic", "hoeffding"),
            B=int(entry.get("B", 1000)),
            scheme=entry.get("scheme", "uniform"),
            estimator=entry.get("estimator", "pooled"),
        )
        rows.append(
            PowerRow(
                label=entry.get("label", entry["model"]),
                generator=_model_from_spec(entry["model"]),
                bias=bias_from_spec(entry.get("bias", "truncation")),
                config=cfg,
                n=int(entry.get("n", 100)),
            )
        )
    return rows


def cmd_draws(args) -> int:
    sample = read_sample(args.input, delimiter=args.delimiter, header=not args.no_header)
    bias = _resolve_bias(args.bias, sample)
    work = sample
    if sample.censored:
        from .bias import censoring_weight

        bias, work = censoring_weight(sample)
    W = build_weight_matrix(work, bias)
    kind, _, scheme = args.sampler.partition(":")
    if kind == "mcmc":
        draws = sample_permutations_mcmc(
            W, McmcConfig(B=args.B, M=args.M, seed=args.seed)
        )
    elif kind == "is":
        draws = sis_sample(W, scheme or "uniform", args.B, seed=args.seed)
        sys.stdout.write(f"importance weight CV: {draws.weight_cv():.6g}\n")
    else:
        raise InvalidParameter(f"unknown sampler {args.sampler!r}")
    draws.to_csv(args.out)
    if args.scatter:
        with open(args.scatter, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["draw_index", "x", "y"])
            for b in range(draws.B):
                perm = draws.perms[b]
                for xi, yi in zip(work.x, work.y[perm]):
                    writer.writerow([b, repr(float(xi)), repr(float(yi))])
    if args.manifest_out:
        _write_manifest(args.manifest_out, "draws", _args_dict(args), args.input)
    return 0


def _args_dict(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


def _build_parser() -> _Parser:
    parser = _Parser(prog="quasitest", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_io(p):
        p.add_argument("--input", required=True, help="CSV with columns x,y[,delta]")
        p.add_argument("--delimiter", default=",")
        p.add_argument("--no-header", action="store_true",
                       help="columns are positional: x,y[,delta]")
        p.add_argument("--bias", default="truncation",
                       help="truncation | sum | gauss-prod:RHO | strip:DELTA | "
                            "huji[:CAP,HORIZON] | censoring | table:PATH")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--manifest-out", default=None,
                       help="write the resolved run manifest (JSON) here")

    p_test = sub.add_parser("test", help="run a quasi-independence test")
    add_io(p_test)
    p_test.add_argument("--method", default="perm-mcmc",
                        help="perm-mcmc | perm-is[:SCHEME] | bootstrap[:ESTIMATOR]")
    p_test.add_argument("--statistic", default="hoeffding",
                        choices=["hoeffding", "inverse-weight"])
    p_test.add_argument("--B", type=int, default=1000)
    p_test.add_argument("--M", type=int, default=None,
                        help="swap steps between retained permutations (default 2n)")
    p_test.add_argument("--expected-mode", default="auto",
                        choices=["auto", "pair-probs", "marginals", "naive"])
    p_test.set_defaults(func=cmd_test)

    p_marg = sub.add_parser("marginals", help="estimate marginal CDFs")
    add_io(p_marg)
    p_marg.add_argument("--estimator", default="qi",
                        choices=["npmle", "pooled", "qi"])
    p_marg.add_argument("--eps", type=float, default=1e-6)
    p_marg.add_argument("--max-iter", type=int, default=500)
    p_marg.set_defaults(func=cmd_marginals)

    p_sim = sub.add_parser("simulate", help="run a power study")
    group = p_sim.add_mutually_exclusive_group(required=True)
    group.add_argument("--preset", choices=list(PRESETS))
    group.add_argument("--config", help="JSON file with a rows list")
    p_sim.add_argument("--reps", type=int, default=500)
    p_sim.add_argument("--alpha", type=float, default=0.05)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--workers", type=int, default=0,
                       help="parallel replicate workers (0: QUASITEST_THREADS or 1)")
    p_sim.add_argument("--out", required=True, help="power table CSV path")
    p_sim.add_argument("--manifest-out", default=None)
    p_sim.set_defaults(func=cmd_simulate)

    p_draws = sub.add_parser("draws", help="sample permutations and export them")
    add_io(p_draws)
    p_draws.add_argument("--sampler", default="mcmc",
                         help="mcmc | is:SCHEME (uniform, monotone, grid, kou_mccullagh)")
    p_draws.add_argument("--B", type=int, default=100)
    p_draws.add_argument("--M", type=int, default=None)
    p_draws.add_argument("--out", required=True, help="draw diagnostics CSV path")
    p_draws.add_argument("--scatter", default=None,
                         help="also export re-coupled points (draw_index,x,y)")
    p_draws.set_defaults(func=cmd_draws)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        return _USAGE_ERROR
    try:
        return args.func(args)
    except _DATA_ERRORS as exc:
        sys.stderr.write(f"data error: {exc}\n")
        return _DATA_ERROR
    except InvalidParameter as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        return _USAGE_ERROR
    except QuasitestError as exc:
        sys.stderr.write(f"numerical failure: {type(exc).__name__}: {exc}\n")
        return _NUMERIC_ERROR


if __name__ == "__main__":
    sys.exit(main())
