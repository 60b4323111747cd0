"""Command-line entry point.

    socialmesh join-latency [--config PATH | --preset NAME] [--seed N] [--out PATH] [--format csv|json]
    socialmesh churn-availability ...
    socialmesh demo ...
    socialmesh invariants ...
    socialmesh validate [PATH ...]

Exit status is 0 only when every check of the run passes.  Failed checks are
listed on stderr as ``FAIL <name>`` lines.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path
from typing import Optional, Sequence

from .errors import InvalidConfig
from .simnet.config import ScenarioConfig, load_config, preset_dict, preset_names, validate_config_dict
from .simnet.experiments import run

SUBCOMMANDS = {
    "join-latency": ("join_latency", "join-latency"),
    "churn-availability": ("churn_availability", "churn-availability"),
    "demo": ("demo", "demo"),
    "invariants": ("invariants", "invariants"),
}
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 1 << 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def atomic_write(path: Path, text: str) -> None:
    """Write to a temporary file next to ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="socialmesh", description="Simulate a friend-to-friend overlay social network.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=f"run the {name} scenario")
        src = p.add_mutually_exclusive_group()
        src.add_argument("--config", type=Path, help="scenario config (JSON)")
        src.add_argument("--preset", choices=preset_names(), help="shipped scenario preset")
        p.add_argument("--seed", type=_u64, help="override the config seed")
        p.add_argument("--out", type=Path, help="write the report here instead of stdout")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
    v = sub.add_parser("validate", help="check scenario configs against the schema")
    v.add_argument("paths", nargs="*", type=Path, help="config files; all shipped presets when omitted")
    v.add_argument("--config", type=Path, action="append", default=[], help="config file (repeatable)")
    return parser


def _configure_logging() -> None:
    level = os.environ.get("SOCIALMESH_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _validate(paths: list[Path]) -> int:
    targets: list[tuple[str, object]] = []
    if not paths:
        targets = [(f"preset:{n}", preset_dict(n)) for n in preset_names()]
    status = EXIT_OK
    for path in paths:
        if not path.is_file():
            print(f"{path}: FileNotFound", file=sys.stderr)
            status = EXIT_USAGE
            continue
        try:
            targets.append((str(path), json.loads(path.read_text(encoding="utf-8"))))
        except json.JSONDecodeError as exc:
            print(f"{path}: <root>: not valid JSON: {exc}", file=sys.stderr)
            status = max(status, EXIT_FAIL)
    for label, data in targets:
        problems = validate_config_dict(data)
        if problems:
            status = max(status, EXIT_FAIL)
            for field, msg in problems:
                print(f"{label}: {field}: {msg}", file=sys.stderr)
        else:
            print(f"{label}: valid")
    return status


def _load(args, experiment: str, default_preset: str) -> ScenarioConfig:
    if args.config is not None:
        if not args.config.is_file():
            raise FileNotFoundError(str(args.config))
        cfg = load_config(args.config)
    else:
        cfg = ScenarioConfig.from_dict(preset_dict(args.preset or default_preset))
    if cfg.experiment != experiment:
        raise InvalidConfig([("experiment", f"config is for {cfg.experiment!r}, subcommand runs {experiment!r}")])
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    if args.command == "validate":
        return _validate(list(args.paths) + list(args.config))
    experiment, default_preset = SUBCOMMANDS[args.command]
    try:
        cfg = _load(args, experiment, default_preset)
    except FileNotFoundError as exc:
        print(f"FileNotFound: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvalidConfig as exc:
        for field, msg in exc.violations:
            print(f"INVALID {field}: {msg}", file=sys.stderr)
        return EXIT_USAGE
    for note in cfg.notes:
        print(f"note: {note}", file=sys.stderr)
    report = run(cfg)
    text = report.render(args.format)
    if experiment == "demo":
        sys.stdout.write("\n".join(report.summary["transcript"]) + "\n")
    if args.out is not None:
        atomic_write(args.out, text)
    elif experiment != "demo":
        sys.stdout.write(text)
    for name in report.failures():
        print(f"FAIL {name}", file=sys.stderr)
    passed = sum(report.checks.values())
    print(f"SUMMARY experiment={report.experiment} seed={report.seed} passed={passed} failed={len(report.checks) - passed}", file=sys.stderr)
    return EXIT_OK if report.ok else EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
