#!/usr/bin/env python3
"""
Designs the waveform and receive filter of consecutive blocks, and sweeps
that design over a grid of configuration values.
"""

import json
import time
from pathlib import Path
from typing import Any, Dict, List, Optional

import click
import pandas as pd
from slugify import slugify
from sklearn.model_selection import ParameterGrid
from tqdm import tqdm

from isacdesign.ao import DesignResult, interleaved_schedule
from isacdesign.config import (
    RunConfig,
    parse_config,
    parse_json_option,
    read_config,
    split_config,
)
from isacdesign.errors import (
    ConfigurationError,
    IsacDesignError,
    SolverConsistencyError,
    exit_codes,
)
from isacdesign.evaluation.runner import run_evaluate
from isacdesign.logs import get_logger
from isacdesign.model import dump_matrices
from isacdesign.results import write_design, write_traces

DONE_DESIGN = ".done.design"


def run_design(
    config_path: Optional[Path],
    output_dir: Path,
    num_blocks: int = 3,
    threads: int = 1,
    overrides: Optional[Dict[str, Any]] = None,
    matrices: bool = False,
) -> List[DesignResult]:
    """
    Runs the interleaved schedule and writes design.json, the trace CSVs,
    profile.design.json and the done marker into `output_dir`.
    """
    raw = read_config(config_path, overrides)
    scenario, cfg = parse_config(raw)
    run = RunConfig(
        config_path=config_path,
        output_dir=Path(output_dir),
        num_blocks=num_blocks,
        seed=cfg.seed,
        threads=threads,
    )
    run.output_dir.mkdir(parents=True, exist_ok=True)
    if matrices:
        dump_matrices(scenario, run.output_dir.joinpath("matrices.npz"))
    done_file = run.output_dir.joinpath(DONE_DESIGN)
    if done_file.exists():
        done_file.unlink()
    logger = get_logger("isacdesign", run.output_dir.joinpath("design.log"))
    logger.info(
        f"Designing {run.num_blocks} blocks of {scenario.num_samples} samples x "
        f"{scenario.num_antennas} antennas, {scenario.num_symbols} symbols, "
        f"solver {cfg.subproblem_solver}"
    )

    start = time.time()
    results = interleaved_schedule(scenario, run.num_blocks, cfg, threads=run.threads)
    time_elapsed = time.time() - start

    write_design(run.output_dir.joinpath("design.json"), results, raw, cfg.to_json())
    write_traces(run.output_dir, results)
    logger.info(f"...designed {run.num_blocks} blocks in {time_elapsed} sec")
    open(run.output_dir.joinpath("profile.design.json"), "wt").write(
        json.dumps(
            {
                "time_elapsed": time_elapsed,
                "threads": run.threads,
                "subproblem_solver": cfg.subproblem_solver,
                "num_blocks": run.num_blocks,
                "ao_iterations": [len(r.ao_records) for r in results],
            },
            indent=4,
        )
    )
    # Touch this file to indicate that the design completed successfully
    open(done_file, "wt")
    return results


def _design_overrides(
    overrides: str,
    seed: Optional[int],
    solver: Optional[str],
    record_adpm: bool,
) -> Dict[str, Any]:
    values = parse_json_option(overrides, "--overrides")
    if seed is not None:
        values["seed"] = seed
    if solver is not None:
        values["subproblem_solver"] = solver
    if record_adpm:
        values["record_adpm"] = True
    return values


@click.command()
@click.argument("config", type=str)
@click.option(
    "--output-dir", default="design", help="Location to save the design", type=str
)
@click.option(
    "--num-blocks",
    default=3,
    help="Number of consecutive blocks to design. (Default: 3)",
    type=click.INT,
)
@click.option(
    "--seed", default=None, help="Override the seed of the configuration", type=int
)
@click.option(
    "--threads",
    default=1,
    help="Worker processes for the blocks of one pass. (Default: 1)",
    type=click.INT,
)
@click.option(
    "--solver",
    default=None,
    help="SCA subproblem solver, adpm or cvxpy. (Default: from the configuration)",
    type=click.Choice(["adpm", "cvxpy"]),
)
@click.option(
    "--record-adpm",
    default=False,
    help="Write every ADPM sweep to adpm-trace.csv. (Default: False)",
    type=click.BOOL,
)
@click.option(
    "--overrides",
    default="{}",
    help='A JSON dict of configuration keys, e.g. \'{"peak_weight": 0.1}\'',
    type=str,
)
@click.option(
    "--matrices",
    default=False,
    help="Also dump the fixed matrices to matrices.npz. (Default: False)",
    type=click.BOOL,
)
def runner(
    config: str,
    output_dir: str = "design",
    num_blocks: int = 3,
    seed: Optional[int] = None,
    threads: int = 1,
    solver: Optional[str] = None,
    record_adpm: bool = False,
    overrides: str = "{}",
    matrices: bool = False,
) -> None:
    logger = get_logger("isacdesign")
    with exit_codes(logger):
        results = run_design(
            Path(config),
            Path(output_dir),
            num_blocks=num_blocks,
            threads=threads,
            overrides=_design_overrides(overrides, seed, solver, record_adpm),
            matrices=matrices,
        )
        for r in results:
            click.echo(
                f"block {r.block}: g_obj {r.g_obj_trace[0]:.6g} -> "
                f"{r.g_obj_trace[-1]:.6g} ({r.stop_reason})"
            )


def point_slug(point: Dict[str, Any]) -> str:
    return "-".join(
        "%s=%s" % (slugify(k), slugify(str(v))) for k, v in sorted(point.items())
    )


def serialize_value(v):
    if isinstance(v, str) or isinstance(v, float) or isinstance(v, int):
        return v
    else:
        return str(v)


def run_sweep(
    config_path: Path,
    grid: Dict[str, List[Any]],
    output_dir: Path,
    num_blocks: int = 3,
    threads: int = 1,
    snr_grid: Optional[List[float]] = None,
    trials: int = 10000,
) -> pd.DataFrame:
    """
    Designs and evaluates every point of `grid` in its own sub-directory and
    aggregates the scores into sweep-summary.csv. Points with a done marker
    are only re-evaluated.
    """
    if not isinstance(grid, dict) or not grid:
        raise ConfigurationError("--grid must be a non-empty JSON dict of lists")
    if not all(isinstance(v, list) and v for v in grid.values()):
        raise ConfigurationError("Every --grid entry must be a non-empty list")
    # Rejects unknown keys
    split_config(grid)
    output_dir.mkdir(parents=True, exist_ok=True)
    logger = get_logger("isacdesign", output_dir.joinpath("sweep.log"))

    rows = []
    for point in tqdm(list(ParameterGrid(grid)), desc="sweep"):
        point_dir = output_dir.joinpath(point_slug(point))
        row: Dict[str, Any] = {k: serialize_value(v) for k, v in point.items()}
        row["subdir"] = point_dir.name
        try:
            if not point_dir.joinpath(DONE_DESIGN).exists():
                run_design(
                    config_path,
                    point_dir,
                    num_blocks=num_blocks,
                    threads=threads,
                    overrides=point,
                )
            summary = run_evaluate(
                point_dir.joinpath("design.json"),
                snr_grid=snr_grid or [],
                trials=trials,
                threads=threads,
            )
        except SolverConsistencyError:
            raise
        except IsacDesignError as e:
            logger.warning(f"Sweep point {point} failed: {type(e).__name__}: {e}")
            row["status"] = type(e).__name__
            rows.append(row)
            continue
        row["status"] = "ok"
        row["feasible"] = summary["feasible"]
        row.update(summary["scores"])
        rows.append(row)

    summary_df = pd.DataFrame(rows)
    summary_df.to_csv(output_dir.joinpath("sweep-summary.csv"), index=False)
    return summary_df


@click.command()
@click.argument("config", type=str)
@click.option(
    "--grid",
    required=True,
    help='JSON dict of configuration keys to lists of values, e.g. '
    '\'{"peak_weight": [0, 0.1], "sidelobe_weight": [0.5, 1]}\'',
    type=str,
)
@click.option(
    "--output-dir", default="sweep", help="Location to save the sweep", type=str
)
@click.option(
    "--num-blocks",
    default=3,
    help="Number of consecutive blocks per design. (Default: 3)",
    type=click.INT,
)
@click.option(
    "--threads", default=1, help="Worker processes. (Default: 1)", type=click.INT
)
@click.option(
    "--snr-grid",
    default="[]",
    help="SNR points in dB for the SER simulation, as a JSON list (Default: none)",
    type=str,
)
@click.option(
    "--trials",
    default=10000,
    help="Monte-Carlo trials per SNR point, at least 10000 for stable "
    "estimates. (Default: 10000)",
    type=click.INT,
)
def sweep(
    config: str,
    grid: str,
    output_dir: str = "sweep",
    num_blocks: int = 3,
    threads: int = 1,
    snr_grid: str = "[]",
    trials: int = 10000,
) -> None:
    logger = get_logger("isacdesign")
    with exit_codes(logger):
        config_path = Path(config)
        if not config_path.is_file():
            raise ConfigurationError(f"{config_path} does not exist")
        summary = run_sweep(
            config_path,
            parse_json_option(grid, "--grid"),
            Path(output_dir),
            num_blocks=num_blocks,
            threads=threads,
            snr_grid=[float(x) for x in parse_json_option(snr_grid, "--snr-grid", list)],
            trials=trials,
        )
        click.echo(summary.to_string(index=False))


if __name__ == "__main__":
    runner()
