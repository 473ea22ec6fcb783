"""Subcommand CLI: ingest, threshold, fit, predict, care, simulate.

Exit codes are a stable scripting contract: 0 success, 1 input or config
error (the message names the failing stage), 2 numerical non-convergence
(the artifact is still written). Output locations come from flags and the
config file only; no environment variables, for reproducibility.
"""

from __future__ import annotations

import argparse
import os
import sys

from .io import IngestError, dump_json, ingest
from .pipeline import (
    PipelineError,
    load_run_config,
    run_care,
    run_fit,
    run_predict,
    run_simulate,
    run_threshold,
)

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_NOT_CONVERGED = 2


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="potcare",
        description="Robust peaks-over-threshold tail regression and "
                    "Charge-at-Risk estimation for daily hospital series.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True, out=True, seed=True):
        if config:
            p.add_argument("--config", required=True, help="JSON config file")
        if out:
            p.add_argument("--out", default=None, help="output directory")
        if seed:
            p.add_argument("--seed", type=int, default=None,
                           help="override the config seed")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")

    p = sub.add_parser("ingest", help="validate a daily CSV and report rejects")
    common(p, seed=False)

    p = sub.add_parser("threshold", help="stability and mean-residual-life tables")
    common(p, seed=False)

    p = sub.add_parser("fit", help="fit the tail and exceedance-rate models")
    common(p)

    p = sub.add_parser("predict", help="per-row (sigma, xi) for new data")
    p.add_argument("--fit", required=True, help="fit artifact JSON")
    p.add_argument("--data", required=True, help="daily CSV with covariates")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("care", help="Charge-at-Risk table for scenarios")
    p.add_argument("--fit", required=True, action="append",
                   help="fit artifact JSON (repeatable)")
    p.add_argument("--scenarios", required=True, help="scenario CSV")
    p.add_argument("--alphas", default="0.95",
                   help="comma-separated levels in (0, 1)")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("simulate", help="robust-vs-classical simulation study")
    common(p)
    return parser


def _say(quiet, *parts):
    if not quiet:
        print(*parts)


def _out_dir(args, config=None):
    if getattr(args, "out", None):
        return args.out
    if config is not None and config.output:
        return config.output
    return "."


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except (PipelineError, IngestError) as err:
        stage = getattr(err, "stage", "ingest")
        message = getattr(err, "message", str(err))
        print(f"error [stage={stage}]: {message}", file=sys.stderr)
        return EXIT_INPUT_ERROR


def _dispatch(args):
    if args.command == "ingest":
        config = load_run_config(args.config)
        series, report = ingest(config.input)
        out_dir = _out_dir(args, config)
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "ingest_report.json")
        dump_json(path, {"schema_version": "1", "kind": "ingest_report",
                         **report.to_dict()})
        _say(args.quiet, f"read {report.rows_read} rows: {report.rows_accepted} "
                         f"accepted, {report.rows_rejected} rejected -> {path}")
        return EXIT_OK

    if args.command == "threshold":
        config = load_run_config(args.config)
        out_dir = _out_dir(args, config)
        stability_path, mrl_path = run_threshold(config, out_dir)
        _say(args.quiet, f"wrote {stability_path} and {mrl_path}")
        return EXIT_OK

    if args.command == "fit":
        config = load_run_config(args.config, seed_override=args.seed)
        artifact, result = run_fit(config)
        out_dir = _out_dir(args, config)
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "fit.json")
        dump_json(path, artifact)
        if not result.converged:
            _say(args.quiet, f"fit did NOT converge ({result.message}); "
                             f"artifact written to {path}")
            return EXIT_NOT_CONVERGED
        _say(args.quiet, f"converged in {result.iterations} iterations; "
                         f"threshold {artifact['threshold']:g}, "
                         f"{artifact['n_exceedances']} exceedances -> {path}")
        return EXIT_OK

    if args.command == "predict":
        out_path = run_predict(args.fit, args.data, args.out)
        _say(args.quiet, f"wrote {out_path}")
        return EXIT_OK

    if args.command == "care":
        try:
            alphas = [float(a) for a in args.alphas.split(",") if a.strip()]
        except ValueError:
            raise PipelineError("care", f"bad --alphas value: {args.alphas!r}")
        if not alphas:
            raise PipelineError("care", "no alpha levels given")
        out_path, warnings_ = run_care(args.fit, args.scenarios, alphas, args.out)
        for w in warnings_:
            print(f"warning: {w}", file=sys.stderr)
        _say(args.quiet, f"wrote {out_path}")
        return EXIT_OK

    if args.command == "simulate":
        rep_path, summary_path = run_simulate(args.config, _out_dir(args),
                                              seed_override=args.seed)
        _say(args.quiet, f"wrote {rep_path} and {summary_path}")
        return EXIT_OK

    raise PipelineError("config", f"unknown command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
