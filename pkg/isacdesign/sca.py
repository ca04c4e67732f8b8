"""
Successive convex approximation (SCA) of the waveform update.

For a fixed receive filter the waveform block minimizes

    f(s, t) = -t + lambda_G s^H G_side s

subject to s^H Psi_SL s - s^H Psi_ML s / t <= 0, the per-sample power ring, the
CI constraint of every communication symbol and the zero-lag coupling with the
filter. Each iteration replaces the two nonconvex pieces (the fractional
constraint and the power floor) by convex upper bounds that are tight at the
current iterate, solves the convex surrogate (ADPM or cvxpy), then restores
exact feasibility and accepts the candidate only when f decreases.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import cvxpy as cp
import numpy as np
import scipy.linalg

from isacdesign import ci
from isacdesign.config import SolverConfig
from isacdesign.errors import DomainError, InfeasibilityError, SolverConsistencyError
from isacdesign.model import (
    BeampatternMatrices,
    Scenario,
    SelectionOperators,
    ShiftOperators,
    build_beampattern_matrices,
    build_selection_operators,
    build_shift_operators,
)
from isacdesign.subproblems import (
    EigCache,
    SurrogateCoefficients,
    adpm_solve,
    hermitian_eig,
    project_quadric,
)

logger = logging.getLogger(__name__)

# Relative margins used by the feasibility restoration
RING_MARGIN = 1e-7
ZERO_LAG_MARGIN = 1e-10
POWER_TOL = 1e-9
CI_TOL = 1e-9
ZERO_LAG_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class WaveformProblem:
    """Fixed data of one block's design problem, built once per scenario."""

    scenario: Scenario
    beampattern: BeampatternMatrices
    shifts: ShiftOperators
    selection: SelectionOperators
    eig1: EigCache
    eig2: EigCache
    ci_templates: Tuple[ci.CIInstance, ...]
    channel_pinv: Optional[np.ndarray]

    @property
    def lambda_max(self) -> float:
        return self.beampattern.max_generalized_eigenvalue

    def objective(self, s: np.ndarray, t: float, g_side: np.ndarray) -> float:
        sidelobe = float(np.real(np.vdot(s, g_side @ s)))
        return -t + self.scenario.sidelobe_weight * sidelobe

    def surrogate_objective(
        self, s: np.ndarray, t: float, s_j: np.ndarray, g_side: np.ndarray
    ) -> float:
        """f plus the proximal term of the SCA surrogate expanded at s_j."""
        proximal = float(np.linalg.norm(s - s_j) ** 2)
        return self.objective(s, t, g_side) + self.scenario.proximal_weight * proximal


def prepare_problem(scenario: Scenario) -> WaveformProblem:
    bp = build_beampattern_matrices(scenario)
    shifts = build_shift_operators(scenario)
    selection = build_selection_operators(scenario)
    # C_s^H Psi_SL C_s, i.e. Psi_SL padded with a zero row/column for t
    padded = selection.waveform.T @ bp.sidelobe @ selection.waveform
    g0 = shifts.zero_lag_operator
    eig1 = hermitian_eig(padded, source="C_s^H Psi_SL C_s")
    eig2 = hermitian_eig(
        scenario.peak_weight * (g0.conj().T @ g0), source="eta G0^H G0"
    )
    pinv = np.linalg.pinv(scenario.channels) if scenario.num_symbols else None
    return WaveformProblem(
        scenario=scenario,
        beampattern=bp,
        shifts=shifts,
        selection=selection,
        eig1=eig1,
        eig2=eig2,
        ci_templates=tuple(ci.instances_for(scenario)),
        channel_pinv=pinv,
    )


@dataclass(frozen=True, eq=False)
class FilterCoupling:
    """
    Zero-lag coupling of the waveform with filter g:
    eta ||G0 (s - anchor)||^2 - Re{g^H G0 (s - anchor)} <= 0,
    where `anchor` is the waveform g was designed for.
    """

    g: np.ndarray
    anchor: np.ndarray
    peak_weight: float
    # G0^H g, and the same vector in the eigenbasis of eta G0^H G0
    direction: np.ndarray
    beta_p: np.ndarray

    def value(self, s: np.ndarray, g0: np.ndarray) -> float:
        y = s - self.anchor
        return float(
            self.peak_weight * np.linalg.norm(g0 @ y) ** 2
            - np.real(np.vdot(self.direction, y))
        )


def build_coupling(
    problem: WaveformProblem, g: np.ndarray, anchor: np.ndarray
) -> FilterCoupling:
    direction = problem.shifts.zero_lag_operator.conj().T @ g
    return FilterCoupling(
        g=g,
        anchor=anchor.copy(),
        peak_weight=problem.scenario.peak_weight,
        direction=direction,
        beta_p=problem.eig2.to_frame(direction),
    )


@dataclass(frozen=True, eq=False)
class FractionalSurrogate:
    """
    s^H quadratic s - Re{linear^H s} + scalar * t <= 0, the convex upper
    bound of s^H Psi_SL s - s^H Psi_ML s / t at (s_bar, t_bar).
    """

    quadratic: np.ndarray
    linear: np.ndarray
    scalar: float

    def value(self, s: np.ndarray, t: float) -> float:
        return float(
            np.real(np.vdot(s, self.quadratic @ s))
            - np.real(np.vdot(self.linear, s))
            + self.scalar * t
        )

    def stacked_linear(self) -> np.ndarray:
        """Linear coefficient on [s; t] in the Re{beta^H x} convention."""
        return np.concatenate([self.linear, [-self.scalar]])


def linearize_fractional(
    s_bar: np.ndarray, t_bar: float, psi_ml: np.ndarray, psi_sl: np.ndarray
) -> FractionalSurrogate:
    if not t_bar > 0:
        raise DomainError(f"Linearization needs t_bar > 0, got {t_bar}")
    if not np.any(s_bar):
        raise DomainError("Linearization point s_bar is zero")
    ml_s = psi_ml @ s_bar
    return FractionalSurrogate(
        quadratic=psi_sl,
        linear=2 * ml_s / t_bar,
        scalar=float(np.real(np.vdot(s_bar, ml_s))) / t_bar ** 2,
    )


def fractional_residual(
    s: np.ndarray, t: float, bp: BeampatternMatrices
) -> float:
    """s^H Psi_SL s - s^H Psi_ML s / t"""
    return float(
        np.real(np.vdot(s, bp.sidelobe @ s)) - np.real(np.vdot(s, bp.mainlobe @ s)) / t
    )


@dataclass(frozen=True, eq=False)
class PowerHalfspaces:
    """Re{conj(normal_m) s_m} >= offset_m, implying |s_m|^2 >= floor."""

    normal: np.ndarray
    offset: np.ndarray

    def slack(self, s: np.ndarray) -> np.ndarray:
        return np.real(np.conj(self.normal) * s) - self.offset


def linearize_power(
    s_bar: np.ndarray, power_relaxation: float, total_power: float, num_antennas: int
) -> PowerHalfspaces:
    floor = (1 - power_relaxation) * total_power / num_antennas
    return PowerHalfspaces(normal=2 * s_bar, offset=np.abs(s_bar) ** 2 + floor)


def recenter_degenerate(
    s_bar: np.ndarray, floor: float, rng: np.random.Generator
) -> np.ndarray:
    """Moves zero elements of the expansion point to the power floor, random phase."""
    degenerate = np.abs(s_bar) ** 2 < 1e-12 * floor
    if not degenerate.any():
        return s_bar
    logger.debug(f"Re-centering {int(degenerate.sum())} degenerate elements")
    s_bar = s_bar.copy()
    phases = rng.uniform(0, 2 * np.pi, int(degenerate.sum()))
    s_bar[degenerate] = np.sqrt(floor) * np.exp(1j * phases)
    return s_bar


def ci_slacks(s: np.ndarray, problem: WaveformProblem) -> np.ndarray:
    """Smallest signed CI slack of every symbol, shape (L,)."""
    scenario = problem.scenario
    received = scenario.channels @ s
    threshold = scenario.ci_threshold
    return np.array(
        [
            min(ci.region_slacks(z, inst.symbol, threshold, inst.region))
            for z, inst in zip(received, problem.ci_templates)
        ]
    )


def feasibility_report(
    s: np.ndarray,
    t: float,
    problem: WaveformProblem,
    coupling: Optional[FilterCoupling] = None,
) -> Dict[str, float]:
    lo, hi = problem.scenario.power_bounds
    power = np.abs(s) ** 2
    slacks = ci_slacks(s, problem)
    report = {
        "fractional_residual": fractional_residual(s, t, problem.beampattern),
        "power_floor_slack": float(np.min(power) - lo),
        "power_cap_slack": float(hi - np.max(power)),
        "ci_min_slack": float(np.min(slacks)) if len(slacks) else float("inf"),
    }
    if coupling is not None:
        report["zero_lag_value"] = coupling.value(s, problem.shifts.zero_lag_operator)
    return report


def _ring_clip(s: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi > lo:
        lo, hi = lo * (1 + RING_MARGIN), hi * (1 - RING_MARGIN)
    magnitude = np.abs(s)
    target = np.clip(magnitude, np.sqrt(lo), np.sqrt(hi))
    phase = np.where(magnitude > 0, s / np.where(magnitude > 0, magnitude, 1), 1.0)
    return target * phase


def _ci_correction(s: np.ndarray, problem: WaveformProblem) -> np.ndarray:
    scenario = problem.scenario
    received = scenario.channels @ s
    wanted = np.array(
        [
            ci.project_image(z, inst.symbol, scenario.ci_threshold, inst.region)
            for z, inst in zip(received, problem.ci_templates)
        ]
    )
    return s + problem.channel_pinv @ (wanted - received)


def _zero_lag_projection(
    s: np.ndarray, problem: WaveformProblem, coupling: FilterCoupling
) -> np.ndarray:
    shifted = project_quadric(
        s - coupling.anchor, problem.eig2, coupling.beta_p, offset=ZERO_LAG_MARGIN
    )
    return shifted.x + coupling.anchor


def is_feasible(report: Dict[str, float], problem: WaveformProblem) -> bool:
    scenario = problem.scenario
    power_tol = POWER_TOL * scenario.power_bounds[1]
    ci_tol = CI_TOL * max(1.0, scenario.ci_threshold)
    return (
        report["power_floor_slack"] >= -power_tol
        and report["power_cap_slack"] >= -power_tol
        and report["ci_min_slack"] >= -ci_tol
        and report.get("zero_lag_value", 0.0) <= ZERO_LAG_TOL
    )


@dataclass
class Restoration:
    s: np.ndarray
    feasible: bool
    sweeps: int
    report: Dict[str, float]


def restore_feasibility(
    s: np.ndarray,
    problem: WaveformProblem,
    coupling: Optional[FilterCoupling] = None,
    sweeps: int = 200,
) -> Restoration:
    """
    Alternating projections onto the power ring, the CI sets (minimum-norm
    correction of the received symbols) and the zero-lag set, until every
    constraint holds exactly.
    """
    lo, hi = problem.scenario.power_bounds
    s = np.asarray(s, dtype=complex)
    for sweep in range(sweeps + 1):
        # t does not enter the checks below
        report = feasibility_report(s, 1.0, problem, coupling)
        if is_feasible(report, problem):
            return Restoration(s=s, feasible=True, sweeps=sweep, report=report)
        if sweep == sweeps:
            break
        s = _ring_clip(s, lo, hi)
        if problem.channel_pinv is not None:
            s = _ci_correction(s, problem)
        if coupling is not None:
            s = _zero_lag_projection(s, problem, coupling)
    logger.debug(f"Feasibility restoration failed after {sweeps} sweeps: {report}")
    return Restoration(s=s, feasible=False, sweeps=sweeps, report=report)


def sidelobe_rows(g: np.ndarray, shifts: ShiftOperators) -> np.ndarray:
    """Rows g^H G_n for every non-zero lag; G_side = rows^H rows."""
    rows = np.einsum("m,nmk->nk", g.conj(), shifts.matrices)
    return np.delete(rows, shifts.zero_lag, axis=0)


def _cvxpy_ci_constraints(z, inst: ci.CIInstance) -> List[Any]:
    target = inst.threshold * inst.symbol
    region = inst.region
    # Plain Python scalars on the left of cvxpy expressions
    if region.tag is ci.RegionTag.PSK_CONE:
        rotated = complex(np.exp(-1j * np.angle(inst.symbol))) * z
        depth = float(np.tan(region.half_angle)) * (
            cp.real(rotated) - inst.threshold * abs(inst.symbol)
        )
        return [depth - cp.imag(rotated) >= 0, depth + cp.imag(rotated) >= 0]
    re_side = float(np.sign(inst.symbol.real)) * (cp.real(z) - target.real)
    im_side = float(np.sign(inst.symbol.imag)) * (cp.imag(z) - target.imag)
    pin_re = cp.real(z) == target.real
    pin_im = cp.imag(z) == target.imag
    return {
        ci.RegionTag.EXACT_A: [pin_re, pin_im],
        ci.RegionTag.EDGE_B: [pin_re, im_side >= 0],
        ci.RegionTag.EDGE_D: [re_side >= 0, pin_im],
        ci.RegionTag.CORNER_C: [re_side >= 0, im_side >= 0],
    }[region.tag]


def solve_surrogate_cvxpy(
    problem: WaveformProblem,
    coupling: FilterCoupling,
    fractional: FractionalSurrogate,
    power: PowerHalfspaces,
    s_j: np.ndarray,
) -> Optional[Tuple[np.ndarray, float]]:
    """
    Hands the whole surrogate problem, with the exact sidelobe quadratic, to
    cvxpy. Returns None when the solver does not report an optimum.
    """
    scenario = problem.scenario
    n = scenario.num_variables
    s = cp.Variable(n, complex=True)
    t = cp.Variable()
    lo, hi = scenario.power_bounds
    g0 = problem.shifts.zero_lag_operator
    factor = scipy.linalg.cholesky(fractional.quadratic)
    y = s - coupling.anchor
    constraints = [
        cp.sum_squares(factor @ s)
        - cp.real(fractional.linear.conj() @ s)
        + fractional.scalar * t
        <= 0,
        coupling.peak_weight * cp.sum_squares(g0 @ y)
        - cp.real(coupling.direction.conj() @ y)
        <= 0,
        cp.real(cp.multiply(np.conj(power.normal), s)) >= power.offset,
        cp.abs(s) <= np.sqrt(hi),
    ]
    for inst in problem.ci_templates:
        constraints += _cvxpy_ci_constraints(inst.channel @ s, inst)
    rows = sidelobe_rows(coupling.g, problem.shifts)
    objective = cp.Minimize(
        -t
        + scenario.proximal_weight * cp.sum_squares(s - s_j)
        + scenario.sidelobe_weight * cp.sum_squares(rows @ s)
    )
    surrogate = cp.Problem(objective, constraints)
    try:
        surrogate.solve()
    except cp.error.SolverError as e:
        logger.warning(f"cvxpy failed on the SCA surrogate: {e}")
        return None
    if surrogate.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        logger.warning(f"cvxpy surrogate status {surrogate.status}")
        return None
    return np.asarray(s.value, dtype=complex), float(t.value)


@dataclass
class ScaState:
    j: int
    s: np.ndarray
    t: float
    t_bar: float
    f_trace: List[float]
    records: List[Dict[str, Any]] = field(default_factory=list)
    adpm_records: List[Dict[str, Any]] = field(default_factory=list)
    steps: List[float] = field(default_factory=list)
    stop_reason: str = ""


def _check_dominance(
    fractional: FractionalSurrogate,
    problem: WaveformProblem,
    s_bar: np.ndarray,
    t_bar: float,
    samples: int,
    rng: np.random.Generator,
) -> None:
    if samples == 0:
        return
    n = len(s_bar)
    spread = np.linalg.norm(s_bar) / np.sqrt(n)
    points = spread * (
        rng.standard_normal((samples, n)) + 1j * rng.standard_normal((samples, n))
    )
    ts = t_bar * rng.uniform(0.05, 5.0, samples)
    bp = problem.beampattern
    sl = np.real(np.sum(points.conj() * (points @ bp.sidelobe.T), axis=1))
    ml = np.real(np.sum(points.conj() * (points @ bp.mainlobe.T), axis=1))
    original = sl - ml / ts
    surrogate = sl - np.real(points @ fractional.linear.conj()) + fractional.scalar * ts
    scale = np.maximum(1.0, np.abs(sl) + np.abs(ml / ts))
    worst = float(np.min((surrogate - original) / scale))
    if worst < -1e-10:
        raise SolverConsistencyError(
            f"Fractional surrogate undercuts the constraint by {-worst:.3e}"
        )


def _check_property_one(
    s: np.ndarray, t: float, problem: WaveformProblem, cfg: SolverConfig
) -> None:
    residual = fractional_residual(s, t, problem.beampattern)
    floor = problem.scenario.power_bounds[0]
    power_gap = floor - float(np.min(np.abs(s) ** 2))
    if residual > cfg.feasibility_tol or power_gap > cfg.feasibility_tol:
        raise SolverConsistencyError(
            f"SCA iterate infeasible: fractional residual {residual:.3e}, "
            f"power floor violation {power_gap:.3e}"
        )


def _no_descent_reason(
    problem: WaveformProblem,
    candidate: Tuple[np.ndarray, float],
    s_j: np.ndarray,
    g_side: np.ndarray,
    f_j: float,
    cfg: SolverConfig,
    j: int,
) -> str:
    """
    Names why a candidate was rejected. The surrogate is tight at s_j, so a
    surrogate solution worse than f_j means the subproblem solver did not
    descend; otherwise the ascent came from the feasibility restoration.
    """
    value = problem.surrogate_objective(candidate[0], candidate[1], s_j, g_side)
    if value > f_j + cfg.monotone_slack:
        logger.warning(
            f"SCA surrogate solution at j={j} does not descend: {value} > {f_j}"
        )
        return "no descent (surrogate)"
    return "no descent (restoration)"


def _check_proximal_decay(steps: List[float]) -> None:
    if len(steps) < 10:
        return
    if np.mean(steps[-5:]) > np.mean(steps[-10:-5]):
        logger.warning("SCA steps ||s_(j+1) - s_j|| are not decaying")


def sca_solve(
    problem: WaveformProblem,
    coupling: FilterCoupling,
    g_side: np.ndarray,
    init: Tuple[np.ndarray, float],
    cfg: SolverConfig,
    rng: Optional[np.random.Generator] = None,
) -> ScaState:
    """
    Runs SCA from a feasible (s0, t0) for the filter in `coupling`. Every
    accepted iterate is feasible and lowers f, so f_trace is non-increasing
    and stays above -lambda_max.
    """
    scenario = problem.scenario
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    bp = problem.beampattern
    lo, hi = scenario.power_bounds
    s, t = np.asarray(init[0], dtype=complex), float(init[1])
    _check_property_one(s, t, problem, cfg)
    f = problem.objective(s, t, g_side)
    lower_bound = -problem.lambda_max - cfg.monotone_slack
    if f < lower_bound:
        raise SolverConsistencyError(
            f"Objective {f} is below -lambda_max = {-problem.lambda_max}"
        )
    sidelobe_matrix = scenario.sidelobe_weight * g_side
    # Step size of the ADPM primal update
    curvature = float(scipy.linalg.eigh(sidelobe_matrix, eigvals_only=True)[-1])
    state = ScaState(j=0, s=s, t=t, t_bar=bp.ratio(s), f_trace=[f])

    while state.j < cfg.sca_max_iter:
        s_j = state.s
        t_bar = bp.ratio(s_j)
        s_bar = recenter_degenerate(s_j, lo, rng)
        fractional = linearize_fractional(s_bar, t_bar, bp.mainlobe, bp.sidelobe)
        power = linearize_power(
            s_bar,
            scenario.power_relaxation,
            scenario.total_power,
            scenario.num_antennas,
        )
        _check_dominance(
            fractional, problem, s_bar, t_bar, cfg.dominance_samples, rng
        )

        adpm_iterations, adpm_residual = 0, 0.0
        if cfg.subproblem_solver == "cvxpy":
            candidate = solve_surrogate_cvxpy(problem, coupling, fractional, power, s_j)
        else:
            surrogate = SurrogateCoefficients(
                beta_b=problem.eig1.to_frame(fractional.stacked_linear()),
                beta_p=coupling.beta_p,
                anchor=coupling.anchor,
                power_normal=power.normal,
                power_offset=power.offset,
                power_cap=hi,
                sidelobe_matrix=sidelobe_matrix,
                sidelobe_curvature=curvature,
                expansion_point=s_j,
                proximal_weight=scenario.proximal_weight,
            )
            try:
                report = adpm_solve(
                    s_j,
                    state.t,
                    surrogate,
                    problem.eig1,
                    problem.eig2,
                    problem.ci_templates,
                    cfg,
                )
            except InfeasibilityError as e:
                logger.warning(f"SCA surrogate infeasible at j={state.j}: {e}")
                state.stop_reason = "surrogate infeasible"
                break
            candidate = (report.s, report.t)
            adpm_iterations, adpm_residual = report.iterations, report.residual
            for record in report.records:
                state.adpm_records.append({"j": state.j + 1, **record})

        if candidate is None:
            state.stop_reason = "surrogate solver failed"
            break
        restored = restore_feasibility(
            candidate[0], problem, coupling, cfg.restoration_sweeps
        )
        if not restored.feasible:
            state.stop_reason = "restoration failed"
            break
        s_new = restored.s
        t_new = bp.ratio(s_new)
        f_new = problem.objective(s_new, t_new, g_side)
        if f_new > state.f_trace[-1]:
            state.stop_reason = _no_descent_reason(
                problem, candidate, s_j, g_side, state.f_trace[-1], cfg, state.j
            )
            break

        _check_property_one(s_new, t_new, problem, cfg)
        if f_new < lower_bound:
            raise SolverConsistencyError(
                f"SCA objective {f_new} is below -lambda_max = {-problem.lambda_max}"
            )

        step = float(np.linalg.norm(s_new - s_j))
        state.j += 1
        state.steps.append(step)
        state.s, state.t, state.t_bar = s_new, t_new, t_bar
        state.f_trace.append(f_new)
        state.records.append(
            {
                "j": state.j,
                "f": f_new,
                "t": t_new,
                "fractional_residual": restored.report["fractional_residual"],
                "power_floor_slack": restored.report["power_floor_slack"],
                "ci_min_slack": restored.report["ci_min_slack"],
                "zero_lag_value": restored.report["zero_lag_value"],
                "adpm_iterations": adpm_iterations,
                "adpm_residual": adpm_residual,
                "restoration_sweeps": restored.sweeps,
                "step": step,
            }
        )
        logger.debug(f"SCA j={state.j} f={f_new:.10g} step={step:.3e}")
        if abs(state.f_trace[-2] - f_new) <= cfg.sca_tol:
            state.stop_reason = "converged"
            break
    else:
        state.stop_reason = "max iterations"

    _check_proximal_decay(state.steps)
    logger.debug(
        f"SCA stopped ({state.stop_reason}) after {state.j} accepted iterations"
    )
    return state
