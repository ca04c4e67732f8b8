#!/usr/bin/env python3
"""
Cross-checks the closed-form solvers against the brute-force oracles and
prints a pass/fail table. Exits non-zero when any check fails.
"""

import sys
import time
from pathlib import Path
from typing import List, Optional

import click
import numpy as np
import pandas as pd
from tqdm import tqdm

from isacdesign.config import RunConfig, load_config
from isacdesign.errors import (
    ConfigurationError,
    IsacDesignError,
    exit_codes,
)
from isacdesign.logs import get_logger
from isacdesign.validation.suites import CheckResult, SuiteContext, available_suites

TOLERANCE_SCALE_ENV = "ISACDESIGN_TOLERANCE_SCALE"


def run_validate(
    config_path: Optional[Path] = None,
    suite_filter: str = "all",
    seed: int = 0,
    instances: int = 100,
    tolerance_scale: float = 1.0,
    output_dir: Optional[Path] = None,
) -> pd.DataFrame:
    """
    Runs the selected suites and returns one row per check. Exceptions from
    the solvers inside a suite are reported as a failed check of that suite.
    """
    run = RunConfig(
        config_path=config_path,
        output_dir=Path(output_dir) if output_dir else Path("."),
        seed=seed,
        trials=instances,
        suite_filter=suite_filter,
        tolerance_scale=tolerance_scale,
    )
    if run.suite_filter == "all":
        names = list(available_suites)
    elif run.suite_filter in available_suites:
        names = [run.suite_filter]
    else:
        raise ConfigurationError(
            f"Unknown suite {run.suite_filter!r}, "
            f"expected all or one of {list(available_suites)}"
        )
    if output_dir is not None:
        run.output_dir.mkdir(parents=True, exist_ok=True)
        logger = get_logger("isacdesign", run.output_dir.joinpath("validate.log"))
    else:
        logger = get_logger("isacdesign")

    scenario, cfg = load_config(run.config_path)
    seeds = np.random.SeedSequence(run.seed).spawn(len(names))
    results: List[CheckResult] = []
    for name, suite_seed in tqdm(list(zip(names, seeds)), desc="validate"):
        start = time.time()
        ctx = SuiteContext(
            scenario=scenario,
            cfg=cfg,
            rng=np.random.default_rng(suite_seed),
            instances=instances,
            tolerance_scale=run.tolerance_scale,
        )
        try:
            results.extend(available_suites[name](ctx))
        except IsacDesignError as e:
            logger.error(f"Suite {name} raised {type(e).__name__}: {e}")
            results.append(CheckResult(name, type(e).__name__, 0, float("nan"), 0.0))
        logger.info(f"Suite {name} took {time.time() - start:.2f} sec")

    table = pd.DataFrame([r.to_row() for r in results])
    if output_dir is not None:
        table.to_csv(run.output_dir.joinpath("validate.csv"), index=False)
    return table


@click.command()
@click.argument("config", type=str, required=False)
@click.option(
    "--filter",
    "suite_filter",
    default="all",
    help=f"Suite to run: all or one of {list(available_suites)}. (Default: all)",
    type=str,
)
@click.option("--seed", default=0, help="Seed of the random instances", type=int)
@click.option(
    "--instances",
    default=100,
    help="Random instances per check. (Default: 100)",
    type=click.INT,
)
@click.option(
    "--tolerance-scale",
    default=1.0,
    envvar=TOLERANCE_SCALE_ENV,
    help="Multiplies every oracle tolerance. (Default: 1.0)",
    type=float,
)
@click.option(
    "--output-dir",
    default=None,
    help="Where to write validate.csv and validate.log (Default: nowhere)",
    type=str,
)
def runner(
    config: Optional[str] = None,
    suite_filter: str = "all",
    seed: int = 0,
    instances: int = 100,
    tolerance_scale: float = 1.0,
    output_dir: Optional[str] = None,
) -> None:
    logger = get_logger("isacdesign")
    with exit_codes(logger):
        table = run_validate(
            Path(config) if config else None,
            suite_filter=suite_filter,
            seed=seed,
            instances=instances,
            tolerance_scale=tolerance_scale,
            output_dir=Path(output_dir) if output_dir else None,
        )
        click.echo(table.to_string(index=False))
        failed = int((~table["passed"]).sum())
        if failed:
            click.echo(f"{failed} of {len(table)} checks failed")
            sys.exit(1)
        click.echo(f"All {len(table)} checks passed")


if __name__ == "__main__":
    runner()
