"""Command line entry point: solflow run | synth | phase-shift."""

from __future__ import annotations

import argparse
import json
import sys

from .experiment import (
    EXIT_CONFIG,
    EXIT_FAIL,
    EXIT_NUMERIC,
    EXIT_PASS,
    ConfigError,
    emit_plot_data,
    fit_phase_shifts,
    load_config,
    load_scenario,
    run,
    spec_from_mapping,
)
from .hirota import DomainError, EvaluationError
from .synthesis import SearchExhausted, synthesize


def _cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    report = run(scenario, keep_going=args.keep_going, out_dir=args.out)
    for c in report.checks:
        line = f"{c.name:14s} {c.status}"
        if c.message:
            line += f"  ({c.message})"
        print(line)
    print(f"report: {(args.out or scenario.output_dir)}/report.json")
    return report.exit_code


def _cmd_synth(args) -> int:
    spec = spec_from_mapping(load_config(args.spec))
    try:
        train = synthesize(spec, max_solitons=args.max_solitons)
    except SearchExhausted as exc:
        print(json.dumps({"error": str(exc), "best": exc.best, "candidates": exc.log}, indent=2, sort_keys=True, default=str))
        return EXIT_FAIL
    print(train.to_json())
    return EXIT_PASS if train.report.certified else EXIT_FAIL


def _cmd_phase_shift(args) -> int:
    if args.alpha1 == args.alpha2:
        raise DomainError("phase-shift needs two distinct amplitude parameters")
    track: list = []
    fit = fit_phase_shifts([args.alpha1, args.alpha2], track=track)
    if args.out:
        emit_plot_data({"phase_shifts": fit, "peak_tracks": track}, args.out)
    print(json.dumps(fit, indent=2, sort_keys=True))
    return EXIT_PASS


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="solflow", description="N-soliton Lagrangian exit experiments for KdV.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario file (JSON or TOML)")
    r.add_argument("scenario")
    r.add_argument("--keep-going", action="store_true", help="run later checks after a failure")
    r.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("synth", help="synthesize a soliton train from a spec file")
    s.add_argument("spec")
    s.add_argument("--max-solitons", type=int, default=4096)
    s.set_defaults(func=_cmd_synth)

    ps = sub.add_parser("phase-shift", help="fit two-soliton phase shifts from peak tracks")
    ps.add_argument("--alpha1", type=float, required=True)
    ps.add_argument("--alpha2", type=float, required=True)
    ps.add_argument("--out", default=None, help="also write peak_tracks.csv and phase_shifts.json here")
    ps.set_defaults(func=_cmd_phase_shift)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DomainError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EvaluationError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
