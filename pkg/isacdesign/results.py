"""
On-disk formats of designs and evaluations.

design.json holds everything needed to re-evaluate a design: the merged
configuration, the solver settings and per block the waveform, filter, the
contexts used in the design and for evaluation, the AO trace and the final
feasibility report. Complex vectors are interleaved real/imaginary arrays.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from isacdesign import __version__
from isacdesign.ao import BlockContext, DesignResult
from isacdesign.config import complex_to_interleaved, interleaved_to_complex
from isacdesign.errors import ConfigurationError
from isacdesign.score import EvaluationReport


def _context_to_json(ctx: BlockContext) -> Dict[str, Any]:
    return {
        "block": ctx.block,
        "s_pre": complex_to_interleaved(ctx.s_pre),
        "s_post": complex_to_interleaved(ctx.s_post),
    }


def _context_from_json(data: Dict[str, Any]) -> BlockContext:
    return BlockContext(
        s_pre=interleaved_to_complex(data["s_pre"]),
        s_post=interleaved_to_complex(data["s_post"]),
        block=int(data["block"]),
    )


def design_to_json(
    results: List[DesignResult], config: Dict[str, Any], solver: Dict[str, Any]
) -> Dict[str, Any]:
    return {
        "isacdesign_version": __version__,
        "config": config,
        "solver": solver,
        "num_blocks": len(results),
        "blocks": [
            {
                "block": r.block,
                "s": complex_to_interleaved(r.s),
                "g": complex_to_interleaved(r.g),
                "t": r.t,
                "initial_s": complex_to_interleaved(r.initial_s),
                "initial_g": complex_to_interleaved(r.initial_g),
                "context": _context_to_json(r.context),
                "evaluation_context": _context_to_json(
                    r.evaluation_context or r.context
                ),
                "g_obj_trace": r.g_obj_trace,
                "stop_reason": r.stop_reason,
                "feasibility": r.feasibility,
            }
            for r in results
        ],
    }


def write_design(
    path: Path,
    results: List[DesignResult],
    config: Dict[str, Any],
    solver: Dict[str, Any],
) -> None:
    path.write_text(json.dumps(design_to_json(results, config, solver), indent=4))


@dataclass(frozen=True, eq=False)
class StoredBlock:
    block: int
    s: np.ndarray
    g: np.ndarray
    t: float
    initial_s: np.ndarray
    initial_g: np.ndarray
    evaluation_context: BlockContext


def read_design(path: Path) -> Tuple[Dict[str, Any], List[StoredBlock]]:
    """Returns the stored configuration and the per-block designs."""
    try:
        data = json.loads(Path(path).read_text())
        blocks = [
            StoredBlock(
                block=int(b["block"]),
                s=interleaved_to_complex(b["s"]),
                g=interleaved_to_complex(b["g"]),
                t=float(b["t"]),
                initial_s=interleaved_to_complex(b["initial_s"]),
                initial_g=interleaved_to_complex(b["initial_g"]),
                evaluation_context=_context_from_json(b["evaluation_context"]),
            )
            for b in data["blocks"]
        ]
        config = data["config"]
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ConfigurationError(f"Malformed design file {path}: {e}") from e
    if not isinstance(config, dict) or not blocks:
        raise ConfigurationError(f"Design file {path} holds no blocks")
    return config, blocks


def trace_frames(results: List[DesignResult]) -> Dict[str, pd.DataFrame]:
    """ao/sca/adpm diagnostics with a leading block column."""
    frames = {}
    for name, attribute in (
        ("ao-trace.csv", "ao_records"),
        ("sca-trace.csv", "sca_records"),
        ("adpm-trace.csv", "adpm_records"),
    ):
        rows = [
            {"block": r.block, **record}
            for r in results
            for record in getattr(r, attribute)
        ]
        frames[name] = pd.DataFrame(rows, columns=None if rows else ["block"])
    return frames


def write_traces(output_dir: Path, results: List[DesignResult]) -> None:
    for name, frame in trace_frames(results).items():
        frame.to_csv(output_dir.joinpath(name), index=False)


def evaluation_to_json(
    reports: List[EvaluationReport],
    scores: Dict[str, float],
    baseline_scores: Optional[Dict[str, float]] = None,
) -> Dict[str, Any]:
    return {
        "isacdesign_version": __version__,
        "feasible": all(r.feasible for r in reports),
        "scores": scores,
        "baseline_scores": baseline_scores or {},
        "blocks": [r.summary() for r in reports],
    }


def write_evaluation(
    output_dir: Path,
    reports: List[EvaluationReport],
    scores: Dict[str, float],
    baseline_scores: Optional[Dict[str, float]] = None,
) -> None:
    output_dir.joinpath("evaluation.json").write_text(
        json.dumps(evaluation_to_json(reports, scores, baseline_scores), indent=4)
    )
    beampatterns = []
    for r in reports:
        frame = r.beampattern.copy()
        frame.insert(0, "block", r.block)
        beampatterns.append(frame)
    pd.concat(beampatterns, ignore_index=True).to_csv(
        output_dir.joinpath("beampattern.csv"), index=False
    )
    pd.concat(
        [r.range_profile.to_frame(block=r.block) for r in reports], ignore_index=True
    ).to_csv(output_dir.joinpath("range-profile.csv"), index=False)
    sers = []
    for r in reports:
        frame = r.ser.copy()
        frame.insert(0, "block", r.block)
        sers.append(frame)
    pd.concat(sers, ignore_index=True).to_csv(
        output_dir.joinpath("ser.csv"), index=False
    )
