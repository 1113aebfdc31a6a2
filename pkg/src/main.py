#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
WedgeLab
========

Desk-scale laboratory for two-dimensional models with factorizing S-matrices:
scattering-function certification, the discrete S2-symmetric Fock space,
contracted form factors, modular nuclearity bounds and collision theory.

Commands:
---------
✅ check              scattering-function properties and regularity data
✅ fock-verify        projector, ZF algebra and intertwiner identities
✅ formfactor-verify  contraction recursion identities and bounds
✅ nuclearity         sigma, trace norms, series bounds and s_min sweep
✅ smatrix            Moller operators, S-matrix formula and completeness
✅ report-all         every suite above, in this order
"""

import asyncio
import sys
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional

# Add src directory to path
sys.path.insert(0, str(Path(__file__).parent))

import typer
from rich.console import Console
from rich.table import Table

from core.config import COMMANDS, RunConfig, Settings
from core.errors import ConfigurationError, SpecError, WedgeLabError
from core.logging import setup_logging
from services.suites import SuiteResult, VerificationService, results_frame
from utils.helpers import dump_json, parse_float_list, parse_grid

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

console = Console(stderr=True)
cli = typer.Typer(add_completion=False, help="WedgeLab verification suites and nuclearity sweeps")


class WedgeLab:
    """
    Main application class for WedgeLab
    """

    def __init__(self, run: RunConfig, settings: Settings):
        self.settings = settings
        self.run = run
        self.logger = setup_logging(run.output.log_level, run.output.log_file)
        self.verification = VerificationService(run, settings.tolerances)

    async def initialize(self):
        """Load the scattering function and its regularity data"""
        self.logger.info("🚀 Initializing WedgeLab (%s)...", self.run.command)
        self.logger.debug("settings: %s", self.settings.to_dict())
        await self.verification.initialize()

    async def start(self) -> List[SuiteResult]:
        return await self.verification.execute()

    def render(self, results: List[SuiteResult]) -> str:
        if self.run.output.format == "csv":
            if self.run.command == "nuclearity":
                return results[0].csv
            return results_frame(results).to_csv(index=False, float_format="%.12g", lineterminator="\n")
        document = {
            "command": self.run.command,
            "family": self.verification.s2.label,
            "seed": self.run.verification.seed,
            "config": asdict(self.run),
            "passed": all(r.passed for r in results),
            "suites": {r.name: r.report for r in results},
            # excluded from determinism checks
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }
        return dump_json(document)

    def write(self, text: str):
        if self.run.output.path:
            Path(self.run.output.path).write_text(text, encoding="utf-8")
            self.logger.info("📝 wrote %s", self.run.output.path)
        else:
            sys.stdout.write(text)


def _summary_table(results: List[SuiteResult]) -> Table:
    table = Table(title="WedgeLab")
    table.add_column("Suite")
    table.add_column("Result")
    for result in results:
        table.add_row(result.name, "✅ pass" if result.passed else "❌ fail")
    return table


def build_run_config(command: str, spec: Optional[str], settings: Settings, config: Optional[str],
                     grid: Optional[str], n: Optional[int], k: Optional[str], m: Optional[float],
                     s: Optional[str], kappa: Optional[str], seed: Optional[int], trials: Optional[int],
                     out: Optional[str], fmt: Optional[str]) -> RunConfig:
    """Environment settings, then the YAML document, then explicit flags"""
    run = RunConfig.from_settings(command, spec or "", settings)
    if config:
        run.apply_yaml(config)
    try:
        if spec:
            run.spec_path = spec
        if grid:
            run.grid.d, run.grid.theta_min, run.grid.theta_max = parse_grid(grid)
        if n is not None:
            run.verification.n = n
        if k:
            run.verification.k_values = [int(x) for x in k.split(",")]
        if m is not None:
            run.grid.mass = m
        if s:
            run.nuclearity.s_values = parse_float_list(s)
        if kappa:
            run.nuclearity.kappa_values = parse_float_list(kappa)
        if seed is not None:
            run.verification.seed = seed
        if trials is not None:
            run.verification.trials = trials
        if out:
            run.output.path = out
        if fmt:
            run.output.format = fmt
    except ValueError as e:
        raise ConfigurationError(str(e)) from e
    if not run.spec_path:
        raise ConfigurationError("no scattering function given (--spec or the config document)")
    run.validate()
    return run


async def main(run: RunConfig, settings: Settings) -> int:
    """Main entry point"""
    app = WedgeLab(run, settings)
    await app.initialize()
    results = await app.start()
    app.write(app.render(results))
    console.print(_summary_table(results))
    return EXIT_PASS if all(r.passed for r in results) else EXIT_FAIL


@cli.command()
def run(
    command: str = typer.Argument(..., help=f"one of {', '.join(COMMANDS)}"),
    spec: Optional[str] = typer.Option(None, "--spec", help="spec file or preset:<name>"),
    grid: Optional[str] = typer.Option(None, "--grid", help="d,min,max"),
    n: Optional[int] = typer.Option(None, "--n", help="particle number / truncation"),
    k: Optional[str] = typer.Option(None, "--k", help="contraction split(s), comma separated"),
    m: Optional[float] = typer.Option(None, "--m", help="particle mass"),
    s: Optional[str] = typer.Option(None, "--s", help="splitting distances, comma separated"),
    kappa: Optional[str] = typer.Option(None, "--kappa", help="kappa values, comma separated"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    trials: Optional[int] = typer.Option(None, "--trials"),
    out: Optional[str] = typer.Option(None, "--out", help="output path (stdout if omitted)"),
    fmt: Optional[str] = typer.Option(None, "--format", help="csv or json"),
    config: Optional[str] = typer.Option(None, "--config", help="YAML run document"),
    env_file: str = typer.Option("config/.env", "--env-file"),
):
    """Run one WedgeLab command"""
    try:
        settings = Settings(env_file)
        run_config = build_run_config(command, spec, settings, config, grid, n, k, m, s, kappa,
                                      seed, trials, out, fmt)
        status = asyncio.run(main(run_config, settings))
    except (ConfigurationError, SpecError, OSError) as e:
        console.print(f"❌ {e}")
        raise typer.Exit(EXIT_USAGE)
    except WedgeLabError as e:
        console.print(f"❌ suite aborted: {e}")
        raise typer.Exit(EXIT_FAIL)
    raise typer.Exit(status)


if __name__ == "__main__":
    cli()
