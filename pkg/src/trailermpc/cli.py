"""Command-line front end.

Subcommands:

* ``run``             one closed-loop experiment, artifacts to --out
* ``compare``         matched-seed sweep over controller variants
* ``export``          re-render report figures for an existing run
* ``validate-config`` parse and check a configuration file
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import default_config, load_config
from .errors import TrailerMpcError
from .harness import compare_variants, run_experiment
from .nmpc import VARIANTS


def _load(args):
    config = load_config(args.config) if args.config else default_config()
    if getattr(args, "seed", None) is not None:
        config = config.with_seed(args.seed)
    if getattr(args, "variant", None) is not None:
        config = config.with_variant(args.variant)
    if getattr(args, "duration", None) is not None:
        from dataclasses import replace
        config = replace(config, run=replace(config.run,
                                             duration=args.duration))
    return config


def _cmd_run(args):
    config = _load(args)
    out_dir = Path(args.out)
    result = run_experiment(config, out_dir=out_dir)
    m = result.metrics
    print(f"variant={m['variant']} samples={m['samples']} "
          f"completed={m['completed']}")
    print(f"tractor mean error {100 * m['tractor']['mean']:.2f} cm "
          f"(max {100 * m['tractor']['max']:.2f} cm)")
    print(f"trailer mean error {100 * m['trailer']['mean']:.2f} cm "
          f"(max {100 * m['trailer']['max']:.2f} cm)")
    if args.report:
        from .export import generate_report
        figures = generate_report(out_dir,
                                  path_xy=result.path.sample_polyline())
        print(f"report figures: {', '.join(f.name for f in figures)}")
    print(f"artifacts in {out_dir}")
    return 0


def _cmd_compare(args):
    config = _load(args)
    variants = args.variants.split(",") if args.variants else list(VARIANTS)
    for v in variants:
        if v not in VARIANTS:
            raise TrailerMpcError(f"unknown variant {v!r}")
    out_dir = Path(args.out)
    result = compare_variants(config, variants=variants, out_dir=out_dir)
    width = max(len(v) for v in variants)
    print(f"{'variant':<{width}}  tractor-mean  trailer-mean  completed")
    for v in variants:
        s = result.summary[v]
        print(f"{v:<{width}}  {100 * s['tractor_mean']:10.2f}cm  "
              f"{100 * s['trailer_mean']:10.2f}cm  {s['completed']}")
    if args.report:
        from .export import generate_report
        for v in variants:
            generate_report(out_dir / v,
                            path_xy=result.runs[v].path.sample_polyline())
        print("report figures rendered per variant")
    print(f"artifacts in {out_dir}")
    return 0


def _cmd_export(args):
    from .export import generate_report
    figures = generate_report(args.run, out_dir=args.out)
    print(f"wrote {len(figures)} figures to "
          f"{Path(args.out) if args.out else Path(args.run)}")
    return 0


def _cmd_validate(args):
    config = load_config(args.config)
    print(f"{args.config}: OK (variant={config.run.variant}, "
          f"seed={config.run.seed}, horizon={config.controller.horizon})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trailermpc",
        description="Distributed predictive steering for a tractor-trailer "
                    "pair with moving-horizon slip estimation.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one closed-loop experiment")
    run.add_argument("--config", help="TOML configuration file")
    run.add_argument("--out", required=True, help="artifact directory")
    run.add_argument("--seed", type=int, help="override run.seed")
    run.add_argument("--variant", choices=VARIANTS,
                     help="override the controller variant")
    run.add_argument("--duration", type=float,
                     help="override run duration in seconds")
    run.add_argument("--report", action="store_true",
                     help="also render report figures")
    run.set_defaults(func=_cmd_run)

    cmp_ = sub.add_parser("compare",
                          help="run several variants from matched seeds")
    cmp_.add_argument("--config", help="TOML configuration file")
    cmp_.add_argument("--out", required=True, help="artifact directory")
    cmp_.add_argument("--seed", type=int, help="override run.seed")
    cmp_.add_argument("--duration", type=float,
                      help="override run duration in seconds")
    cmp_.add_argument("--variants",
                      help="comma-separated subset of variants")
    cmp_.add_argument("--report", action="store_true",
                      help="also render report figures")
    cmp_.set_defaults(func=_cmd_compare)

    exp = sub.add_parser("export",
                         help="render figures for an existing run directory")
    exp.add_argument("--run", required=True, help="run directory to read")
    exp.add_argument("--out", help="figure directory (default: run dir)")
    exp.set_defaults(func=_cmd_export)

    val = sub.add_parser("validate-config",
                         help="check a configuration file")
    val.add_argument("--config", required=True)
    val.set_defaults(func=_cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrailerMpcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
