"""
Alternating optimization (AO) of the receive filter and the waveform, and the
interleaved schedule that designs consecutive blocks of a continuous
transmission.

One AO iteration updates the filter in closed form for the current waveform,
then runs SCA on the waveform for the new filter. The tracked objective

    g_obj(g, s, t) = -t + lambda_G * g^H D(s) g

with D collecting the own-block sidelobes and the leakage of the neighbouring
blocks, never increases.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg

from isacdesign.config import SolverConfig
from isacdesign.errors import DomainError, InfeasibilityError, SolverConsistencyError
from isacdesign.model import Scenario, ShiftOperators
from isacdesign.multiproc import run_parallel
from isacdesign.sca import (
    WaveformProblem,
    build_coupling,
    feasibility_report,
    prepare_problem,
    restore_feasibility,
    sca_solve,
    sidelobe_rows,
)

logger = logging.getLogger(__name__)

IDENTITY_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class BlockContext:
    """Waveforms of the neighbouring blocks, fixed while a block is designed."""

    s_pre: np.ndarray
    s_post: np.ndarray
    block: int = 0

    @classmethod
    def isolated(cls, num_variables: int, block: int = 0) -> "BlockContext":
        zeros = np.zeros(num_variables, dtype=complex)
        return cls(s_pre=zeros, s_post=zeros, block=block)


def _lag_windows(s: np.ndarray, ctx: BlockContext, ops: ShiftOperators):
    """(own, pre, post) aligned windows, one row per contributing lag."""
    z = ops.zero_lag
    own = np.delete(ops.apply(s), z, axis=0)
    pre = ops.apply(ctx.s_pre)[z:]
    post = ops.apply(ctx.s_post)[: z + 1]
    return own, pre, post


def _outer_sum(windows: np.ndarray) -> np.ndarray:
    # sum_n w_n w_n^H
    return windows.T @ windows.conj()


def build_D(s: np.ndarray, ctx: BlockContext, ops: ShiftOperators) -> np.ndarray:
    own, pre, post = _lag_windows(s, ctx, ops)
    return _outer_sum(own) + _outer_sum(pre) + _outer_sum(post)


def leakage_energy(g: np.ndarray, ctx: BlockContext, ops: ShiftOperators) -> float:
    """Inter-block part of g^H D g; constant in the current block's waveform."""
    _, pre, post = _lag_windows(np.zeros(ops.matrices.shape[2]), ctx, ops)
    return float(np.sum(np.abs(pre @ g.conj()) ** 2) + np.sum(np.abs(post @ g.conj()) ** 2))


def update_filter(
    s: np.ndarray,
    ctx: BlockContext,
    ops: ShiftOperators,
    delta_D: Optional[float] = None,
) -> np.ndarray:
    """
    Distortionless filter g = D^-1 r / (r^H D^-1 r), r = G0 s, the minimizer
    of g^H D g subject to Re{g^H r} >= 1. D is factored as is; the loading
    delta_D I (default 1e-8 trace(D) / dim) is added only when D is singular
    or when `delta_D` is given explicitly.
    """
    r = ops.zero_lag_operator @ s
    if not np.any(r):
        raise DomainError("Zero-lag window of the waveform is zero; no filter exists")
    D = build_D(s, ctx, ops)
    dim = len(r)
    if delta_D is not None:
        D = D + delta_D * np.eye(dim)
    try:
        x = scipy.linalg.cho_solve(scipy.linalg.cho_factor(D), r)
        if not np.all(np.isfinite(x)):
            raise np.linalg.LinAlgError("non-finite solve")
    except np.linalg.LinAlgError:
        trace = float(np.real(np.trace(D)))
        loading = 1e-8 * trace / dim if trace > 0 else 1.0
        logger.debug(f"D is singular, loading with {loading:.3e}")
        x = scipy.linalg.cho_solve(
            scipy.linalg.cho_factor(D + loading * np.eye(dim)), r
        )
    return x / np.vdot(r, x)


def matched_filter(s: np.ndarray, ops: ShiftOperators) -> np.ndarray:
    r = ops.zero_lag_operator @ s
    if not np.any(r):
        raise DomainError("Zero-lag window of the waveform is zero; no filter exists")
    return r / np.real(np.vdot(r, r))


def build_G_side(g: np.ndarray, ops: ShiftOperators) -> np.ndarray:
    rows = sidelobe_rows(g, ops)
    return rows.conj().T @ rows


def g_objective(
    g: np.ndarray,
    s: np.ndarray,
    t: float,
    ctx: BlockContext,
    ops: ShiftOperators,
    sidelobe_weight: float,
) -> float:
    D = build_D(s, ctx, ops)
    return -t + sidelobe_weight * float(np.real(np.vdot(g, D @ g)))


@dataclass
class DesignResult:
    block: int
    s: np.ndarray
    g: np.ndarray
    t: float
    initial_s: np.ndarray
    initial_g: np.ndarray
    context: BlockContext
    g_obj_trace: List[float]
    feasibility: Dict[str, float]
    stop_reason: str
    sca_f_traces: List[List[float]] = field(default_factory=list)
    ao_records: List[Dict[str, Any]] = field(default_factory=list)
    sca_records: List[Dict[str, Any]] = field(default_factory=list)
    adpm_records: List[Dict[str, Any]] = field(default_factory=list)
    # Actual neighbours after the whole schedule; set by interleaved_schedule
    evaluation_context: Optional[BlockContext] = None

    @property
    def converged(self) -> bool:
        return self.stop_reason == "converged"


def initial_waveform(
    problem: WaveformProblem, rng: np.random.Generator, sweeps: int = 200
) -> np.ndarray:
    """Constant modulus sqrt(P0 / Nt) with random phases, restored to feasibility."""
    scenario = problem.scenario
    amplitude = np.sqrt(scenario.total_power / scenario.num_antennas)
    phases = rng.uniform(0, 2 * np.pi, scenario.num_variables)
    restored = restore_feasibility(amplitude * np.exp(1j * phases), problem, None, sweeps)
    if not restored.feasible:
        raise InfeasibilityError(
            f"Initialization cannot reach the feasible set: {restored.report}"
        )
    return restored.s


def _check_identity(
    g: np.ndarray,
    s: np.ndarray,
    t: float,
    g_side: np.ndarray,
    ctx: BlockContext,
    problem: WaveformProblem,
) -> None:
    weight = problem.scenario.sidelobe_weight
    ops = problem.shifts
    via_g_side = -t + weight * float(np.real(np.vdot(s, g_side @ s)))
    via_D = g_objective(g, s, t, ctx, ops, weight) - weight * leakage_energy(g, ctx, ops)
    scale = max(1.0, abs(via_g_side), abs(via_D))
    if abs(via_g_side - via_D) > IDENTITY_TOL * scale:
        raise SolverConsistencyError(
            f"Quadratic-form identity broken: {via_g_side} vs {via_D}"
        )


def ao_solve(
    scenario: Scenario,
    ctx: BlockContext,
    cfg: SolverConfig,
    problem: Optional[WaveformProblem] = None,
    init: Optional[Tuple[np.ndarray, Optional[np.ndarray]]] = None,
    rng: Optional[np.random.Generator] = None,
) -> DesignResult:
    """
    Alternates update_filter and sca_solve until g_obj changes by at most
    ``cfg.ao_tol`` or ``cfg.ao_max_iter`` iterations ran. `init` is an optional
    feasible (s, g) start; g defaults to the matched filter of s.
    """
    problem = problem if problem is not None else prepare_problem(scenario)
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    ops = problem.shifts
    bp = problem.beampattern
    weight = scenario.sidelobe_weight

    if init is None:
        s = initial_waveform(problem, rng, cfg.restoration_sweeps)
        g = matched_filter(s, ops)
    else:
        s = np.asarray(init[0], dtype=complex)
        g = matched_filter(s, ops) if init[1] is None else np.asarray(init[1])
    initial_s, initial_g = s.copy(), g.copy()
    t = bp.ratio(s)
    lower_bound = -problem.lambda_max - cfg.monotone_slack

    trace = [g_objective(g, s, t, ctx, ops, weight)]
    result = DesignResult(
        block=ctx.block,
        s=s,
        g=g,
        t=t,
        initial_s=initial_s,
        initial_g=initial_g,
        context=ctx,
        g_obj_trace=trace,
        feasibility={},
        stop_reason="max iterations",
    )

    def record(value: float) -> None:
        if value > trace[-1] + cfg.monotone_slack:
            raise SolverConsistencyError(
                f"AO objective increased from {trace[-1]} to {value}"
            )
        if value < lower_bound:
            raise SolverConsistencyError(
                f"AO objective {value} is below -lambda_max = {-problem.lambda_max}"
            )
        trace.append(value)

    for i in range(1, cfg.ao_max_iter + 1):
        g = update_filter(s, ctx, ops)
        coupling = build_coupling(problem, g, anchor=s)
        g_side = build_G_side(g, ops)
        sca = sca_solve(problem, coupling, g_side, (s, t), cfg, rng)
        s, t = sca.s, sca.t
        _check_identity(g, s, t, g_side, ctx, problem)
        value = g_objective(g, s, t, ctx, ops, weight)
        record(value)

        result.sca_f_traces.append(sca.f_trace)
        result.sca_records.extend({"i": i, **r} for r in sca.records)
        result.adpm_records.extend({"i": i, **r} for r in sca.adpm_records)
        result.ao_records.append(
            {
                "i": i,
                "g_obj": value,
                "t": t,
                "imsr_db": 10 * np.log10(t),
                "sca_iterations": sca.j,
                "sca_stop": sca.stop_reason,
            }
        )
        logger.debug(f"AO i={i} g_obj={value:.10g} ({sca.stop_reason})")
        if abs(trace[-2] - value) <= cfg.ao_tol:
            result.stop_reason = "converged"
            break

    # Filter for the final waveform
    g = update_filter(s, ctx, ops)
    record(g_objective(g, s, t, ctx, ops, weight))
    report = feasibility_report(s, t, problem)
    report["zero_lag_response"] = float(np.real(np.vdot(g, ops.zero_lag_operator @ s)))
    result.s, result.g, result.t, result.feasibility = s, g, t, report
    logger.info(
        f"Block {ctx.block}: AO {result.stop_reason} after {len(result.ao_records)} "
        f"iterations, g_obj {trace[0]:.6g} -> {trace[-1]:.6g}"
    )
    return result


def _design_block(job: Dict[str, Any]) -> DesignResult:
    problem = prepare_problem(job["scenario"])
    return ao_solve(
        job["scenario"],
        job["ctx"],
        job["cfg"],
        problem=problem,
        init=(job["init"], None),
        rng=np.random.default_rng(job["seed"]),
    )


def _neighbour(
    b: int, designed: Dict[int, np.ndarray], initial: List[np.ndarray], own: int
) -> np.ndarray:
    if 0 <= b < len(initial):
        return designed.get(b, initial[b])
    return initial[own]


def interleaved_schedule(
    scenario: Scenario,
    num_blocks: int,
    cfg: SolverConfig,
    threads: int = 1,
) -> List[DesignResult]:
    """
    Designs `num_blocks` consecutive blocks. With ``cfg.interblock`` the first
    pass designs blocks 0, 2, 4, ... against the initial waveforms of their
    neighbours and the second pass designs blocks 1, 3, ... against the
    optimized neighbours. Without it, every block is designed once with
    zero neighbours. Either way each result carries the context of its actual
    neighbours for evaluation. A missing neighbour (first or last block) is
    the block's own initial waveform.
    """
    if num_blocks < 1:
        raise DomainError(f"num_blocks must be >= 1: {num_blocks}")
    scenarios = [scenario.for_block(b) for b in range(num_blocks)]
    seeds = np.random.SeedSequence(cfg.seed).spawn(num_blocks)
    rngs = [np.random.default_rng(seed) for seed in seeds]
    initial = [
        initial_waveform(prepare_problem(sc), rng, cfg.restoration_sweeps)
        for sc, rng in zip(scenarios, rngs)
    ]
    designed: Dict[int, np.ndarray] = {}
    results: Dict[int, DesignResult] = {}

    def context(b: int) -> BlockContext:
        if not cfg.interblock:
            return BlockContext.isolated(scenario.num_variables, block=b)
        return BlockContext(
            s_pre=_neighbour(b - 1, designed, initial, b),
            s_post=_neighbour(b + 1, designed, initial, b),
            block=b,
        )

    passes = [list(range(num_blocks))]
    if cfg.interblock:
        passes = [list(range(0, num_blocks, 2)), list(range(1, num_blocks, 2))]
    for number, blocks in enumerate(passes, start=1):
        if not blocks:
            continue
        jobs = [
            {
                "scenario": scenarios[b],
                "ctx": context(b),
                "cfg": cfg,
                "init": initial[b],
                "seed": int(rngs[b].integers(2 ** 31)),
            }
            for b in blocks
        ]
        for b, result in zip(
            blocks,
            run_parallel(_design_block, jobs, threads, desc=f"pass {number}"),
        ):
            results[b] = result
            designed[b] = result.s

    ordered = [results[b] for b in range(num_blocks)]
    for b, result in enumerate(ordered):
        result.evaluation_context = BlockContext(
            s_pre=_neighbour(b - 1, designed, initial, b),
            s_post=_neighbour(b + 1, designed, initial, b),
            block=b,
        )
    return ordered
