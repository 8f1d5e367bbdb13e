"""Command-line entry points.

Verbs::

    vamig train    --config c.conf [--seed N] [--mode NAME] [--out DIR]
    vamig evaluate --config c.conf [--seed N] [--mode NAME] [--out DIR]
    vamig ablate   --config c.conf [--out DIR]
    vamig sweep    --config c.conf --sweep-axis NAME --sweep-values "a,b,c" [--out DIR]
    vamig replay   --manifest path/to/manifest.txt --out DIR
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .config import MODES, SWEEP_AXES, FullConfig, load_config
from .errors import ConfigError
from .harness import replay_run, run_ablation, run_experiment


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="flat key=value config file")
    parser.add_argument("--seed", type=int, default=None,
                        help="single seed (overrides experiment.seeds)")
    parser.add_argument("--mode", choices=MODES, default=None,
                        help="training/evaluation mode (overrides experiment.mode)")
    parser.add_argument("--out", default=None, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vamig",
        description="Vehicular edge-agent migration testbed and diffusion-policy learner")
    sub = parser.add_subparsers(dest="verb", required=True)

    _add_common(sub.add_parser("train", help="train one mode over the configured seeds"))
    _add_common(sub.add_parser("evaluate", help="evaluate without training (random baseline)"))
    _add_common(sub.add_parser("ablate", help="train the full ablation suite"))

    sweep = sub.add_parser("sweep", help="sweep one axis over the given values")
    _add_common(sweep)
    sweep.add_argument("--sweep-axis", choices=SWEEP_AXES, required=True)
    sweep.add_argument("--sweep-values", required=True,
                       help="comma-separated values, e.g. '100,200,300'")

    rep = sub.add_parser("replay", help="re-run a recorded manifest and diff metrics")
    rep.add_argument("--manifest", required=True)
    rep.add_argument("--out", required=True)
    return parser


def _resolved_config(args) -> FullConfig:
    cfg = load_config(args.config)
    experiment = cfg.experiment
    if getattr(args, "mode", None):
        experiment = replace(experiment, mode=args.mode)
    if getattr(args, "seed", None) is not None:
        experiment = replace(experiment, seeds=[args.seed])
    if getattr(args, "out", None):
        experiment = replace(experiment, out_dir=args.out)
    cfg = replace(cfg, experiment=experiment)
    cfg.validate()
    return cfg


def _report(statuses) -> int:
    failures = 0
    for status in statuses:
        label = "ok" if status["ok"] else f"DIVERGED ({status['error']})"
        print(f"{status['run_id']}: {label}")
        failures += 0 if status["ok"] else 1
    return 1 if failures else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "replay":
            status = replay_run(args.manifest, args.out)
            verdict = {True: "byte-identical", False: "MISMATCH",
                       None: "no original metrics to compare"}[status["identical"]]
            print(f"{status['run_id']}: replay {verdict}")
            return 0 if status["identical"] in (True, None) else 1

        cfg = _resolved_config(args)
        if args.verb == "train":
            return _report(run_experiment(cfg, cfg.experiment.out_dir))
        if args.verb == "evaluate":
            experiment = replace(cfg.experiment, mode=args.mode or "random")
            cfg = replace(cfg, experiment=experiment)
            return _report(run_experiment(cfg, cfg.experiment.out_dir))
        if args.verb == "ablate":
            return _report(run_ablation(cfg, cfg.experiment.out_dir))
        if args.verb == "sweep":
            values = [v.strip() for v in args.sweep_values.split(",") if v.strip()]
            typed = [int(v) if args.sweep_axis == "denoising-steps" else float(v)
                     for v in values]
            experiment = replace(cfg.experiment, sweep_axis=args.sweep_axis,
                                 sweep_values=typed)
            cfg = replace(cfg, experiment=experiment)
            cfg.validate()
            return _report(run_experiment(cfg, cfg.experiment.out_dir))
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    raise AssertionError(f"unhandled verb {args.verb}")


if __name__ == "__main__":
    sys.exit(main())
