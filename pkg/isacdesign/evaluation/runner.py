#!/usr/bin/env python3
"""
Evaluates a stored design: beampattern, range profile against the actual
neighbours, PAPR, CI margins and Monte-Carlo SER per block, plus the same
metrics for the initial (matched filter) design as a baseline.
"""

import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import click
from tqdm import tqdm

from isacdesign.config import (
    RunConfig,
    parse_config,
    parse_json_option,
    read_config,
)
from isacdesign.errors import ConfigurationError, exit_codes
from isacdesign.logs import get_logger
from isacdesign.results import read_design, write_evaluation
from isacdesign.score import EvaluationReport, available_scores, evaluate_design


def score_reports(reports: List[EvaluationReport]) -> Dict[str, float]:
    return {name: score()(reports) for name, score in available_scores.items()}


def run_evaluate(
    design_path: Path,
    output_dir: Optional[Path] = None,
    config_path: Optional[Path] = None,
    snr_grid: Sequence[float] = (0.0, 5.0, 10.0, 15.0, 20.0),
    trials: int = 10000,
    seed: int = 0,
    threads: int = 1,
) -> Dict[str, Any]:
    design_path = Path(design_path)
    if not design_path.is_file():
        raise ConfigurationError(f"Design file {design_path} does not exist")
    output_dir = Path(output_dir) if output_dir is not None else design_path.parent
    run = RunConfig(
        config_path=config_path,
        output_dir=output_dir,
        seed=seed,
        threads=threads,
        snr_grid=tuple(snr_grid),
        trials=trials,
    )
    run.output_dir.mkdir(parents=True, exist_ok=True)
    logger = get_logger("isacdesign", run.output_dir.joinpath("evaluate.log"))

    stored_config, blocks = read_design(design_path)
    raw = read_config(run.config_path) if run.config_path else stored_config
    scenario, _ = parse_config(raw)

    start = time.time()
    reports, baseline = [], []
    for block in tqdm(blocks, desc="evaluate"):
        block_scenario = scenario.for_block(block.block)
        if len(block.s) != block_scenario.num_variables:
            raise ConfigurationError(
                f"Block {block.block} has {len(block.s)} samples, the scenario "
                f"expects {block_scenario.num_variables}"
            )
        reports.append(
            evaluate_design(
                block.s,
                block.g,
                block.evaluation_context,
                block_scenario,
                snr_grid=run.snr_grid,
                trials=run.trials,
                seed=run.seed + block.block,
                threads=run.threads,
                block=block.block,
            )
        )
        baseline.append(
            evaluate_design(
                block.initial_s,
                block.initial_g,
                block.evaluation_context,
                block_scenario,
                block=block.block,
            )
        )
    scores = score_reports(reports)
    baseline_scores = score_reports(baseline)
    write_evaluation(run.output_dir, reports, scores, baseline_scores)
    logger.info(
        f"Evaluated {len(blocks)} blocks in {time.time() - start:.2f} sec: "
        + ", ".join(f"{k}={v:.6g}" for k, v in scores.items())
    )
    return {
        "scores": scores,
        "baseline_scores": baseline_scores,
        "feasible": all(r.feasible for r in reports),
    }


@click.command()
@click.argument("design_file", type=str)
@click.option(
    "--output-dir",
    default=None,
    help="Where to write the evaluation (Default: the design file's directory)",
    type=str,
)
@click.option(
    "--config",
    default=None,
    help="Scenario JSON overriding the configuration stored in the design",
    type=str,
)
@click.option(
    "--snr-grid",
    default="[0, 5, 10, 15, 20]",
    help="SNR points in dB for the SER simulation, as a JSON list",
    type=str,
)
@click.option(
    "--trials",
    default=10000,
    help="Monte-Carlo trials per SNR point, at least 10000 for stable "
    "estimates. (Default: 10000)",
    type=click.INT,
)
@click.option("--seed", default=0, help="Master seed for the SER simulation", type=int)
@click.option(
    "--threads", default=1, help="Worker processes. (Default: 1)", type=click.INT
)
def runner(
    design_file: str,
    output_dir: Optional[str] = None,
    config: Optional[str] = None,
    snr_grid: str = "[0, 5, 10, 15, 20]",
    trials: int = 10000,
    seed: int = 0,
    threads: int = 1,
) -> None:
    logger = get_logger("isacdesign")
    with exit_codes(logger):
        grid = parse_json_option(snr_grid, "--snr-grid", list)
        summary = run_evaluate(
            Path(design_file),
            output_dir=Path(output_dir) if output_dir else None,
            config_path=Path(config) if config else None,
            snr_grid=[float(x) for x in grid],
            trials=trials,
            seed=seed,
            threads=threads,
        )
        for name, value in summary["scores"].items():
            click.echo(
                f"{name}: {value:.6g} (initial {summary['baseline_scores'][name]:.6g})"
            )


if __name__ == "__main__":
    runner()
