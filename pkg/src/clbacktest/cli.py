"""Command line entry point: ``clbacktest run`` and ``clbacktest panjer-check``."""

from __future__ import annotations

import argparse
import logging
import sys
from importlib import resources
from pathlib import Path

from .experiment import (
    ConfigError,
    ExperimentError,
    load_document,
    parse_experiment,
    parse_panjer_check,
    run_experiment,
    run_panjer_check,
    write_panjer_check,
)

logger = logging.getLogger("clbacktest")


def shipped_config(name: str) -> Path:
    """Path of a config bundled with the package, e.g. ``shipped_config("fig2")``."""
    path = resources.files("clbacktest") / "configs" / f"{name}.toml"
    return Path(str(path))


def _resolve(config: str) -> Path:
    path = Path(config)
    if path.exists():
        return path
    bundled = shipped_config(config)
    if bundled.exists():
        return bundled
    raise ConfigError(f"no such config file or bundled config: {config}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clbacktest", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a sweep of configurations")
    run.add_argument("config", help="TOML file, run manifest, or bundled config name")
    run.add_argument("--seed", type=int, default=None, help="override the base seed")
    run.add_argument("--jobs", type=int, default=1, help="worker processes (results do not depend on it)")
    run.add_argument("--out", type=Path, default=None, help="output directory (default out/<name>)")

    pc = sub.add_parser("panjer-check", help="compare Panjer aggregate CDF with Monte Carlo")
    pc.add_argument("config", help="TOML file or bundled config name")
    pc.add_argument("--seed", type=int, default=None, help="override the seed")
    pc.add_argument("--out", type=Path, default=None, help="output directory (default out/<file stem>)")
    return parser


def _cmd_run(args) -> int:
    spec = parse_experiment(load_document(_resolve(args.config)), seed=args.seed)
    out = args.out or Path("out") / spec.name
    print(f"{spec.name}: {len(spec.configs)} configuration(s) -> {out}", file=sys.stderr)
    outcomes = run_experiment(spec, out, jobs=max(1, args.jobs))
    for o in outcomes:
        print(f"{o.entry.config_id}  {o.entry.label}  E(delta)={o.report.e_delta_mean:+.4f}")
    return 0


def _cmd_panjer(args) -> int:
    path = _resolve(args.config)
    params = parse_panjer_check(load_document(path), seed=args.seed)
    out = args.out or Path("out") / path.stem
    report = run_panjer_check(params)
    write_panjer_check(report, out)
    print(
        f"J={report.pmf.J} eps_trunc={report.pmf.eps_trunc:.3g} "
        f"max_deviation={report.max_deviation:.4f} band_fraction={report.band_fraction:.4f} "
        f"({report.seconds:.2f}s) -> {out}"
    )
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_panjer(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ExperimentError as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
