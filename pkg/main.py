#!/usr/bin/env python3
"""
Command-line entry point: run, list and validate lab scenarios.
"""
import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional, Tuple

from dotenv import load_dotenv

from core import LabError, ParseError
from report_generator import ReportGenerator
from run_cache import RunCache
from scenario_runner import (SCENARIO_EXTENSION, RunOutcome, Scenario, format_catalog,
                             list_scenarios, load_scenario, run_scenario, scenario_files)

DEFAULT_OUTPUT_DIR = './results'
DEFAULT_SCENARIO_DIR = './scenarios'
LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


def env_flag(name: str, default: str = 'false') -> bool:
    return os.getenv(name, default).lower() in ('true', '1', 'yes')


def report_error(error: LabError) -> int:
    """Print the one-line failure record and return the exit code."""
    print(f"error: {error.code_name}: {error}", file=sys.stderr)
    return error.exit_code


def resolve_scenario_path(name: str, scenario_dir: str) -> str:
    """A path as given, else a bundled scenario by name (with or without extension)."""
    if os.path.isfile(name):
        return name
    for candidate in (os.path.join(scenario_dir, name),
                      os.path.join(scenario_dir, name + SCENARIO_EXTENSION)):
        if os.path.isfile(candidate):
            return candidate
    raise ParseError(f"scenario file not found: {name}")


def _run_one(args: Tuple[Scenario, str, bool]) -> RunOutcome:
    scenario, output_dir, use_cache = args
    cache = RunCache(output_dir) if use_cache else None
    return run_scenario(scenario, output_dir, jobs=1, cache=cache)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Lambda-system quantum memory numerical lab",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    sub = parser.add_subparsers(dest='command', required=True)

    run = sub.add_parser('run', help="run one or more scenarios")
    run.add_argument('scenarios', nargs='+', help="scenario files or bundled scenario names")
    run.add_argument('--jobs', type=int, default=None,
                     help="worker processes (env LAMBDA_LAB_JOBS)")
    run.add_argument('--output-dir', default=None,
                     help="root folder for run folders (env LAMBDA_LAB_OUTPUT_DIR)")
    run.add_argument('--seed', type=lambda s: int(s, 0), default=None,
                     help="override the scenario seed")
    run.add_argument('--no-cache', action='store_true', help="ignore the run cache")

    lst = sub.add_parser('list', help="list bundled scenarios")
    lst.add_argument('--markdown', nargs='?', const='CATALOG.md', default=None,
                     help="also write the catalog as markdown")

    validate = sub.add_parser('validate', help="validate scenario files or directories")
    validate.add_argument('paths', nargs='+')
    return parser


def cmd_run(args: argparse.Namespace, scenario_dir: str) -> int:
    jobs = args.jobs if args.jobs is not None else int(os.getenv('LAMBDA_LAB_JOBS', '1'))
    if jobs < 1:
        return report_error(ParseError(f"--jobs must be at least 1, got {jobs}"))
    use_cache = env_flag('LAMBDA_LAB_USE_CACHE') and not args.no_cache
    env_output = os.getenv('LAMBDA_LAB_OUTPUT_DIR', DEFAULT_OUTPUT_DIR)

    # Every scenario is validated before anything is computed
    planned = []
    try:
        for name in args.scenarios:
            scenario = load_scenario(resolve_scenario_path(name, scenario_dir))
            if args.seed is not None:
                scenario = scenario.with_seed(args.seed)
            output_dir = args.output_dir or scenario.output_dir or env_output
            planned.append((scenario, output_dir, use_cache))
    except LabError as e:
        return report_error(e)

    print("=" * 60)
    print(f"Running {len(planned)} scenario(s) with {jobs} job(s)")
    print(f"Cache enabled: {use_cache}")
    print("=" * 60)

    outcomes: List[RunOutcome] = []
    try:
        if jobs > 1 and len(planned) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                outcomes = list(pool.map(_run_one, planned))
        else:
            for scenario, output_dir, cached in planned:
                print(f"\n[{len(outcomes) + 1}/{len(planned)}] {scenario.name} ({scenario.kind})")
                cache = RunCache(output_dir) if cached else None
                outcomes.append(run_scenario(scenario, output_dir, jobs=jobs, cache=cache))
    except LabError as e:
        return report_error(e)

    print("\n" + "=" * 60)
    print("Results")
    print("=" * 60)
    for (scenario, _, _), outcome in zip(planned, outcomes):
        origin = " (cached)" if outcome.cached else ""
        print(f"  {scenario.name}: {outcome.run_dir}{origin}")
        for key in sorted(outcome.summary):
            value = outcome.summary[key]
            if isinstance(value, (int, float, bool, str)):
                print(f"    {key}: {value}")
    print(f"\nTotal scenarios: {len(outcomes)}")
    return 0


def cmd_list(args: argparse.Namespace, scenario_dir: str) -> int:
    try:
        entries = list_scenarios(scenario_dir)
    except LabError as e:
        return report_error(e)
    sys.stdout.write(format_catalog(entries))
    if args.markdown:
        with open(args.markdown, 'w', encoding='utf-8') as f:
            f.write(ReportGenerator().generate_catalog(entries))
        print(f"\nCatalog written to: {args.markdown}")
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    files = []
    for path in args.paths:
        if os.path.isdir(path):
            files.extend(scenario_files(path))
        else:
            files.append(path)
    status = 0
    for path in files:
        try:
            scenario = load_scenario(path)
            print(f"  ok  {scenario.name} [{scenario.kind}]")
        except LabError as e:
            code = report_error(e)
            status = status or code
    return status


def main(argv: Optional[List[str]] = None) -> int:
    """Main execution function."""
    load_dotenv()
    logging.basicConfig(level=getattr(logging, os.getenv('LAMBDA_LAB_LOG_LEVEL', 'INFO').upper(),
                                      logging.INFO),
                        format=LOG_FORMAT)
    args = build_parser().parse_args(argv)
    scenario_dir = os.getenv('LAMBDA_LAB_SCENARIO_DIR', DEFAULT_SCENARIO_DIR)
    if args.command == 'run':
        return cmd_run(args, scenario_dir)
    if args.command == 'list':
        return cmd_list(args, scenario_dir)
    return cmd_validate(args)


if __name__ == '__main__':
    sys.exit(main())
