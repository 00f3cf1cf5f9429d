"""Command-line entry point: run, validate, and list scenarios.

Exit codes: 0 success, 2 validation failure, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path

from .runner import OUTPUT_ROOT_ENV, StageError, run_scenario
from .scenario import ScenarioError, validate_scenario

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


def bundled_scenarios() -> dict:
    """Name -> path of the scenarios shipped with the package."""
    out = {}
    for entry in resources.files("probeinv.scenarios").iterdir():
        if entry.name.endswith(".yaml"):
            out[entry.name[: -len(".yaml")]] = Path(str(entry))
    return dict(sorted(out.items()))


def resolve_scenario_path(token: str) -> Path:
    path = Path(token)
    if path.exists():
        return path
    bundled = bundled_scenarios()
    if token in bundled:
        return bundled[token]
    raise FileNotFoundError(f"no scenario file {token!r} and no bundled scenario of that name")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="probeinv",
        description="Reconstruct time-varying control signals from quantum probe measurements.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute scenario files and write artifacts")
    run_p.add_argument("files", nargs="+", help="scenario files or bundled scenario names")
    run_p.add_argument("--out", default=None, help=f"output root (default ${OUTPUT_ROOT_ENV} or ./probeinv_out)")
    run_p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run_p.add_argument("--jobs", type=int, default=1, help="run independent scenario files in parallel")

    val_p = sub.add_parser("validate", help="statically check a scenario file without executing it")
    val_p.add_argument("file", help="scenario file or bundled scenario name")

    sub.add_parser("list", help="list bundled scenarios")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "list":
        for name, path in bundled_scenarios().items():
            print(f"{name}\t{path}")
        return EXIT_OK

    if args.command == "validate":
        try:
            report = validate_scenario(resolve_scenario_path(args.file))
        except (ScenarioError, FileNotFoundError) as exc:
            print(f"validation error: {exc}", file=sys.stderr)
            return EXIT_VALIDATION
        print(report)
        return EXIT_OK

    # run
    try:
        paths = [resolve_scenario_path(f) for f in args.files]
    except FileNotFoundError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    def execute(path: Path):
        return run_scenario(path, out_root=args.out, seed=args.seed)

    try:
        if args.jobs > 1 and len(paths) > 1:
            with ThreadPoolExecutor(max_workers=args.jobs) as pool:
                for out_dir in pool.map(execute, paths):
                    print(f"wrote {out_dir}")
        else:
            for path in paths:
                print(f"wrote {execute(path)}")
    except ScenarioError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except StageError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
