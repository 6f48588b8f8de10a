"""Command line: run a scenario from a config, list scenarios, validate a config.

Usage:
    bohmlab run configs/two_slit.toml --seed 7 --out out/two_slit
    bohmlab list
    bohmlab validate configs/two_slit.toml

Exit codes: 0 all gates pass, 1 a gate or the run failed, 2 config error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import TextIO

from dotenv import load_dotenv

from .compliance.diagnostics import DiagnosticsCollector
from .compliance.report import RunReport, write_artifacts
from .config import RunConfig, env_log_level, parse_config
from .protocol import BohmlabError, ConfigError
from .scenarios import ScenarioRegistry, default_registry

logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2


def list_scenarios(registry: ScenarioRegistry | None = None, out: TextIO | None = None) -> str:
    """Text table of registered scenarios with one-line descriptions."""
    registry = registry if registry is not None else default_registry()
    rows = registry.describe()
    width = max((len(name) for name, _ in rows), default=8)
    lines = [f"{'scenario':<{width}}  description", f"{'-'*width}  {'-'*11}"]
    lines += [f"{name:<{width}}  {desc}" for name, desc in rows]
    table = "\n".join(lines)
    print(table, file=out or sys.stdout)
    return table


def _plots(config: RunConfig, report: RunReport, outcome) -> None:
    from . import plots

    out = config.output_dir
    if config.plots.trajectories and outcome.ensemble is not None and outcome.ensemble.trajectories:
        report.artifacts.append(plots.plot_trajectory_fan(outcome.ensemble, out / "trajectories.svg").name)
    if config.plots.density:
        for k, (t, d) in enumerate(outcome.densities):
            path = plots.plot_density(d, out / f"density_t{k}.svg", title=f"t = {t:g}")
            report.artifacts.append(path.name)
    if config.plots.histogram and outcome.distributions:
        report.artifacts.append(plots.plot_results(outcome.distributions, out / "results.svg").name)


def run(config: RunConfig, *, registry: ScenarioRegistry | None = None) -> int:
    """Set up, run and report one scenario; returns the exit status."""
    registry = registry if registry is not None else default_registry()
    out = config.output_dir
    try:
        scenario = registry.get(config.scenario)
        setup = scenario.setup(params=config.params, **config.overrides)
    except ConfigError as e:
        logger.error("Config rejected: %s", e)
        RunReport.config_failure(e.problems, scenario=config.scenario, seed=config.seed).write(out)
        return EXIT_CONFIG
    except (BohmlabError, TypeError, ValueError) as e:
        logger.error("Setup failed: %s", e)
        RunReport.config_failure([str(e)], scenario=config.scenario, seed=config.seed).write(out)
        return EXIT_CONFIG

    diagnostics = DiagnosticsCollector()
    diagnostics.start_stage(config.scenario)
    logger.info("Running '%s' with seed %d", config.scenario, config.seed)
    try:
        outcome = scenario.run(
            setup,
            seed=config.seed,
            tolerances=config.tolerances,
            workers=config.workers,
            diagnostics=diagnostics,
        )
    except BohmlabError as e:
        logger.error("Run failed: %s", e)
        report = RunReport.run_failure(e, scenario=config.scenario, seed=config.seed)
        report.write(out)
        report.print_summary()
        return EXIT_FAIL
    diagnostics.end_stage(config.scenario)

    report = RunReport.from_outcome(
        outcome, seed=config.seed, config=config.to_dict(), diagnostics=diagnostics.get_aggregate()
    )
    report.artifacts.extend(write_artifacts(outcome, out))
    if config.plots.any:
        _plots(config, report, outcome)
    report.write(out)
    report.print_summary()
    for g in outcome.failures:
        logger.warning("Gate '%s' failed: %.3e vs %.3e", g.name, g.value, g.threshold)
    return EXIT_PASS if report.passed else EXIT_FAIL


def validate(path: str | Path, *, registry: ScenarioRegistry | None = None) -> int:
    """Parse the config and build its setup (grid, initial field, plan) without running."""
    registry = registry if registry is not None else default_registry()
    try:
        config = parse_config(path, registry=registry)
        registry.get(config.scenario).setup(params=config.params, **config.overrides)
    except ConfigError as e:
        for p in e.problems:
            print(f"error: {p}", file=sys.stderr)
        return EXIT_CONFIG
    except (BohmlabError, TypeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{path}: ok ({config.scenario}, seed {config.seed})")
    return EXIT_PASS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bohmlab", description="Bohmian trajectory experiments")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario from a TOML config")
    p_run.add_argument("config", type=Path)
    p_run.add_argument("--seed", type=int, default=None, help="replaces [run].seed")
    p_run.add_argument("--out", type=Path, default=None, help="replaces [run].output_dir")

    sub.add_parser("list", help="list registered scenarios")

    p_val = sub.add_parser("validate", help="check a config without running it")
    p_val.add_argument("config", type=Path)
    return parser


def main(argv: Sequence[str] | None = None, *, registry: ScenarioRegistry | None = None) -> int:
    args = build_parser().parse_args(argv)
    load_dotenv()
    logging.basicConfig(
        level=args.log_level or env_log_level(),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )

    if args.command == "list":
        list_scenarios(registry)
        return EXIT_PASS
    if args.command == "validate":
        return validate(args.config, registry=registry)

    try:
        config = parse_config(args.config, registry=registry, seed=args.seed).with_output(args.out)
    except ConfigError as e:
        for p in e.problems:
            print(f"error: {p}", file=sys.stderr)
        RunReport.config_failure(e.problems, seed=args.seed).write(args.out or Path("out"))
        return EXIT_CONFIG
    return run(config, registry=registry)


if __name__ == "__main__":
    sys.exit(main())
