"""Command-line entry point.

Subcommands:

* accuracy: jog-grid measurement sweep (xy, yaw, or tilt axis).
* robustness: pick-and-place success rate vs injected calibration
  error, open- and/or closed-loop.
* replay: run the estimator over recorded observation containers.
* teleop-serve: start the operator bridge service.

Every report subcommand writes delimited tables, a JSON summary, and
(for the sweeps) PNG figures into --out, then prints the summary JSON
on stdout. Exit codes: 0 on completion, 1 on runtime failure, 2 on
usage errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .configio import load_config, load_noise
from .errors import TipcamError
from .experiments import (
    DEFAULT_DELTAS,
    DEFAULT_TRIALS,
    run_accuracy_sweep,
    run_replay,
    run_robustness_sweep,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tipcam",
        description="tool-tip camera estimation stack: sweeps, replay, teleop bridge",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="YAML config file")
    common.add_argument(
        "--seed", type=int, default=None, help="override the config seed"
    )
    common.add_argument(
        "--out", type=Path, default=Path("results"), help="output directory"
    )

    acc = sub.add_parser(
        "accuracy", parents=[common], help="measurement accuracy sweep over a jog grid"
    )
    acc.add_argument("--axis", required=True, choices=("xy", "yaw", "tilt"))
    acc.add_argument(
        "--noise", type=Path, default=None, help="YAML noise model override"
    )
    acc.set_defaults(func=_cmd_accuracy)

    rob = sub.add_parser(
        "robustness",
        parents=[common],
        help="pick-and-place success rate vs calibration error",
    )
    rob.add_argument("--delta-min", type=float, default=DEFAULT_DELTAS[0])
    rob.add_argument("--delta-max", type=float, default=DEFAULT_DELTAS[-1])
    rob.add_argument(
        "--delta-step",
        type=float,
        default=DEFAULT_DELTAS[1] - DEFAULT_DELTAS[0],
    )
    rob.add_argument("--trials", type=int, default=DEFAULT_TRIALS)
    rob.add_argument("--policy", choices=("open", "closed", "both"), default="both")
    rob.set_defaults(func=_cmd_robustness)

    rep = sub.add_parser(
        "replay", parents=[common], help="estimate from recorded observation files"
    )
    rep.add_argument(
        "--input", type=Path, required=True, help="observation file or directory"
    )
    rep.set_defaults(func=_cmd_replay)

    srv = sub.add_parser("teleop-serve", help="serve the operator bridge")
    srv.add_argument(
        "--scenario", type=Path, default=None, help="YAML scenario (config) file"
    )
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8765)
    srv.add_argument(
        "--static-dir", type=Path, default=None, help="browser console files to serve at /"
    )
    srv.set_defaults(func=_cmd_teleop_serve)

    return parser


def _load(args) -> tuple:
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    return cfg, seed


def _cmd_accuracy(args) -> int:
    cfg, seed = _load(args)
    if args.noise is not None:
        cfg = dataclasses.replace(cfg, noise=load_noise(args.noise))
    summary = run_accuracy_sweep(cfg, args.axis, seed, args.out)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _cmd_robustness(args) -> int:
    cfg, seed = _load(args)
    if args.delta_step <= 0:
        raise ValueError(f"--delta-step must be positive, got {args.delta_step}")
    if args.delta_max < args.delta_min:
        raise ValueError("--delta-max must be >= --delta-min")
    n = int(round((args.delta_max - args.delta_min) / args.delta_step)) + 1
    deltas = [round(args.delta_min + i * args.delta_step, 9) for i in range(n)]
    policies = ("closed", "open") if args.policy == "both" else (args.policy,)
    summary = run_robustness_sweep(cfg, deltas, args.trials, policies, seed, args.out)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _cmd_replay(args) -> int:
    cfg, _seed = _load(args)
    summary = run_replay(cfg, args.input, args.out)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _cmd_teleop_serve(args) -> int:
    import uvicorn

    from .teleop import create_app

    cfg = load_config(args.scenario)
    app = create_app(cfg, static_dir=args.static_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (TipcamError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
