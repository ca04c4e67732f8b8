"""
Oracle suites run by `isacdesign validate`.

Each suite draws random instances, solves them with the closed-form solvers
and with the brute-force references in `isacdesign.oracle`, and reports the
worst disagreement per check. Reference quantities (steering vectors, lag
windows, filter outputs) are rebuilt here from raw sample arithmetic instead
of being taken from the solver modules.
"""

import dataclasses
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence

import numpy as np
from scipy.linalg import block_diag

from isacdesign import ci
from isacdesign.ao import BlockContext, ao_solve, build_D
from isacdesign.config import SolverConfig
from isacdesign.errors import RootFindingError
from isacdesign.model import (
    Constellation,
    Scenario,
    build_beampattern_matrices,
    build_shift_operators,
)
from isacdesign.oracle import (
    QuadraticConstraint,
    generalized_lambda_max,
    grid_lambda_oracle,
    projection_oracle_2d,
    qcqp_oracle,
    region_constraints,
)
from isacdesign.subproblems import (
    AdpmState,
    hermitian_eig,
    project_power_elements,
    update_b,
    update_p,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SuiteContext:
    scenario: Scenario
    cfg: SolverConfig
    rng: np.random.Generator
    instances: int = 100
    tolerance_scale: float = 1.0


@dataclass(frozen=True)
class CheckResult:
    suite: str
    check: str
    instances: int
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        # NaN errors fail
        return bool(self.max_error <= self.tolerance)

    def to_row(self) -> Dict:
        return {**dataclasses.asdict(self), "passed": self.passed}


def _check(
    suite: str, check: str, errors: Sequence[float], tolerance: float, scale: float
) -> CheckResult:
    errors = np.asarray(errors, dtype=float)
    if np.any(np.isnan(errors)):
        worst = float("nan")
    else:
        worst = float(np.max(errors)) if len(errors) else 0.0
    return CheckResult(suite, check, len(errors), worst, tolerance * scale)


def _crandn(rng: np.random.Generator, *shape: int) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def _random_psd(rng: np.random.Generator, n: int, rank: int) -> np.ndarray:
    factor = _crandn(rng, n, rank)
    return factor @ factor.conj().T


def _steering(num_antennas: int, spacing: float, angles_deg) -> np.ndarray:
    k = np.arange(num_antennas)
    sines = np.sin(np.deg2rad(np.atleast_1d(angles_deg)))
    return np.exp(2j * np.pi * spacing * np.outer(sines, k))


def _extended(scenario: Scenario, s: np.ndarray) -> np.ndarray:
    """Target-direction combined samples with the cyclic prefix prepended."""
    a0 = _steering(
        scenario.num_antennas, scenario.element_spacing, scenario.target_angle
    )[0]
    samples = s.reshape(scenario.num_samples, scenario.num_antennas) @ a0
    cp = scenario.cp_length
    return np.concatenate([samples[len(samples) - cp:], samples])


def _window(ext: np.ndarray, lag: int) -> np.ndarray:
    out = np.zeros(len(ext), dtype=complex)
    for i in range(len(ext)):
        if 0 <= i - lag < len(ext):
            out[i] = ext[i - lag]
    return out


def model_suite(ctx: SuiteContext) -> List[CheckResult]:
    scenario, rng = ctx.scenario, ctx.rng
    bp = build_beampattern_matrices(scenario)
    shifts = build_shift_operators(scenario)
    checks = []

    hermitian = [
        np.linalg.norm(m - m.conj().T) / max(np.linalg.norm(m), 1e-300)
        for m in (bp.mainlobe, bp.sidelobe)
    ]
    checks.append(_check("model", "psi_hermitian", hermitian, 1e-12, ctx.tolerance_scale))

    min_eig = float(np.linalg.eigvalsh(bp.sidelobe)[0])
    norm = max(1.0, float(np.linalg.norm(bp.sidelobe, 2)))
    checks.append(
        _check(
            "model",
            "psi_sl_loading",
            [max(0.0, scenario.sidelobe_loading - min_eig) / norm],
            1e-11,
            ctx.tolerance_scale,
        )
    )

    grid = scenario.angle_grid
    inside = np.zeros(len(grid), dtype=bool)
    for lo, hi in scenario.mainlobe:
        inside |= (grid >= lo - 1e-9) & (grid <= hi + 1e-9)
    steering = _steering(scenario.num_antennas, scenario.element_spacing, grid)
    form_errors, ratio_errors = [], []
    lam_max = generalized_lambda_max(bp.mainlobe, bp.sidelobe)
    for _ in range(ctx.instances):
        s = _crandn(rng, scenario.num_variables)
        beams = s.reshape(scenario.num_samples, scenario.num_antennas) @ steering.conj().T
        power = np.sum(np.abs(beams) ** 2, axis=0)
        ml = power[inside].sum()
        sl = power[~inside].sum() + scenario.sidelobe_loading * np.vdot(s, s).real
        for direct, matrix in ((ml, bp.mainlobe), (sl, bp.sidelobe)):
            form = np.vdot(s, matrix @ s).real
            form_errors.append(abs(form - direct) / max(1.0, abs(direct)))
        ratio_errors.append(max(0.0, bp.ratio(s) - lam_max) / max(1.0, lam_max))
    checks.append(
        _check("model", "quadratic_form_vs_grid_sum", form_errors, 1e-10, ctx.tolerance_scale)
    )
    checks.append(
        _check(
            "model",
            "generalized_lambda_max",
            [abs(bp.max_generalized_eigenvalue - lam_max) / max(1.0, lam_max)],
            1e-8,
            ctx.tolerance_scale,
        )
    )
    checks.append(
        _check("model", "ratio_below_lambda_max", ratio_errors, 1e-9, ctx.tolerance_scale)
    )

    window_errors = []
    for _ in range(min(ctx.instances, 10)):
        s = _crandn(rng, scenario.num_variables)
        ext = _extended(scenario, s)
        applied = shifts.apply(s)
        for row, lag in enumerate(shifts.lags):
            window_errors.append(np.max(np.abs(applied[row] - _window(ext, int(lag)))))
    checks.append(
        _check("model", "lag_windows", window_errors, 1e-12, ctx.tolerance_scale)
    )

    a0 = _steering(scenario.num_antennas, scenario.element_spacing, scenario.target_angle)
    bound = np.linalg.norm(a0) * (np.sqrt(2) if scenario.cp_length > 0 else 1.0)
    op_norm = np.linalg.norm(shifts.zero_lag_operator, 2)
    checks.append(
        _check(
            "model",
            "zero_lag_norm_bound",
            [max(0.0, op_norm - bound) / bound],
            1e-12,
            ctx.tolerance_scale,
        )
    )
    return checks


def _ci_pool() -> Dict[ci.RegionTag, List[complex]]:
    pools: Dict[ci.RegionTag, List[complex]] = {}
    for constellation in (Constellation("psk", 8), Constellation("qam", 16)):
        for point in constellation.points:
            tag = ci.classify_point(constellation, point).tag
            pools.setdefault(tag, []).append(complex(point))
    return pools


def _region_violation(z: complex, tag: str, symbol, threshold, half_angle) -> float:
    equalities, inequalities = region_constraints(tag, symbol, threshold, half_angle)
    values = [abs(h.value(z.real, z.imag)) for h in equalities]
    values += [max(0.0, h.value(z.real, z.imag)) for h in inequalities]
    return max(values + [0.0])


def ci_suite(ctx: SuiteContext) -> List[CheckResult]:
    """Closed-form CI projections against the 2-D nearest-point oracle."""
    rng = ctx.rng
    checks = []
    psk = Constellation("psk", 8)
    qam = Constellation("qam", 16)
    for tag, pool in _ci_pool().items():
        constellation = psk if tag is ci.RegionTag.PSK_CONE else qam
        errors, violations = [], []
        for _ in range(ctx.instances):
            n = int(rng.integers(1, 9))
            symbol = pool[int(rng.integers(len(pool)))]
            region = ci.classify_point(constellation, symbol)
            inst = ci.CIInstance(
                channel=_crandn(rng, n),
                symbol=symbol,
                sinr_threshold=10 ** rng.uniform(0, 2),
                noise_power=10 ** rng.uniform(-3, -1),
                region=region,
                center=np.zeros(n, dtype=complex),
            )
            inst = inst.with_center(2 * inst.threshold * _crandn(rng, n))
            q = ci.project(inst)

            h, c = inst.channel, inst.center
            z0 = complex(h @ c)
            z_star = projection_oracle_2d(
                tag.value, symbol, inst.threshold, z0, region.half_angle
            )
            q_oracle = c + (z_star - z0) * np.conj(h) / np.vdot(h, h).real
            scale = max(np.linalg.norm(q_oracle - c), inst.threshold)
            errors.append(np.linalg.norm(q - q_oracle) / scale)
            violations.append(
                _region_violation(
                    complex(h @ q), tag.value, symbol, inst.threshold, region.half_angle
                )
                / max(1.0, inst.threshold)
            )
        checks.append(
            _check("ci", f"projection_{tag.value}", errors, 1e-6, ctx.tolerance_scale)
        )
        checks.append(
            _check("ci", f"feasible_{tag.value}", violations, 1e-9, ctx.tolerance_scale)
        )
    return checks


def _quadric_oracle(
    center: np.ndarray, matrix: np.ndarray, beta_tilde: np.ndarray
) -> np.ndarray:
    values, vectors = np.linalg.eigh(matrix)
    values = np.clip(values, 0, None)
    _, x_hat = grid_lambda_oracle(
        vectors.conj().T @ center, values, vectors.conj().T @ beta_tilde
    )
    return vectors @ x_hat


def subproblems_suite(ctx: SuiteContext) -> List[CheckResult]:
    rng, cfg = ctx.rng, ctx.cfg
    checks = []

    reconstruction = []
    for _ in range(ctx.instances):
        m = _crandn(rng, 8, 8)
        m = m + m.conj().T
        eig = hermitian_eig(m, "random")
        reconstruction.append(np.linalg.norm(eig.reconstruct() - m) / np.linalg.norm(m))
    checks.append(
        _check("subproblems", "eig_reconstruction", reconstruction, 1e-9, ctx.tolerance_scale)
    )

    b_errors, p_errors, monotone = [], [], []
    for _ in range(ctx.instances):
        n = int(rng.integers(2, 8))
        s = _crandn(rng, n)
        state = AdpmState.start(s, float(rng.uniform(0.5, 2.0)), 0, float(rng.uniform(0.5, 5)))
        state.mu_b = _crandn(rng, n + 1)
        state.mu_p = _crandn(rng, n)

        # b: blkdiag(Psi, 0) with the epigraph coordinate unweighted
        matrix = block_diag(_random_psd(rng, n, n), np.zeros((1, 1)))
        beta_tilde = 2 * _crandn(rng, n + 1)
        eig = hermitian_eig(matrix, "b")
        center = state.stacked - state.mu_b / state.rho_b

        values, vectors = np.linalg.eigh(matrix)
        c_hat, b_hat = vectors.conj().T @ center, vectors.conj().T @ beta_tilde
        lams = np.geomspace(1e-3, 1e3, 50)[:, None]
        xs = (c_hat + lams * b_hat / 2) / (1 + lams * values)
        f = np.sum(values * np.abs(xs) ** 2, axis=1) - np.real(xs @ b_hat.conj())
        monotone.append(max(0.0, float(np.max(np.diff(f)))) / max(1.0, abs(f[0])))

        try:
            x_oracle = _quadric_oracle(center, matrix, beta_tilde)
        except RootFindingError as e:
            logger.warning(f"b oracle failed: {e}")
            b_errors.append(float("nan"))
        else:
            x = update_b(state, eig, eig.to_frame(beta_tilde), cfg.root_tol, cfg.root_bracket_cap)
            b_errors.append(
                np.linalg.norm(x - x_oracle) / max(np.linalg.norm(x_oracle - center), 1e-12)
            )

        # p: rank deficient eta G0^H G0, anchored
        g0 = _crandn(rng, int(rng.integers(1, n + 1)), n)
        eta = float(rng.uniform(0.01, 1.0))
        matrix = eta * g0.conj().T @ g0
        beta_tilde = g0.conj().T @ _crandn(rng, g0.shape[0])
        anchor = _crandn(rng, n)
        eig = hermitian_eig(matrix, "p")
        center = state.s - state.mu_p / state.rho_p
        try:
            y_oracle = _quadric_oracle(center - anchor, matrix, beta_tilde)
        except RootFindingError as e:
            logger.warning(f"p oracle failed: {e}")
            p_errors.append(float("nan"))
        else:
            x = update_p(
                state, eig, eig.to_frame(beta_tilde), anchor, cfg.root_tol, cfg.root_bracket_cap
            )
            p_errors.append(
                np.linalg.norm(x - anchor - y_oracle)
                / max(np.linalg.norm(y_oracle - center + anchor), 1e-12)
            )
    checks.append(
        _check("subproblems", "multiplier_function_monotone", monotone, 1e-12, ctx.tolerance_scale)
    )
    checks.append(_check("subproblems", "update_b", b_errors, 1e-6, ctx.tolerance_scale))
    checks.append(_check("subproblems", "update_p", p_errors, 1e-6, ctx.tolerance_scale))

    power_errors = []
    for _ in range(ctx.instances):
        floor = float(rng.uniform(0.1, 1.0))
        cap = floor * float(rng.uniform(1.2, 3.0))
        s_bar = np.sqrt(floor * rng.uniform(0.8, 1.25)) * np.exp(
            2j * np.pi * rng.uniform()
        )
        normal, offset = 2 * s_bar, abs(s_bar) ** 2 + floor
        u = 1.5 * np.sqrt(cap) * _crandn(rng, 1)
        x = project_power_elements(u, np.array([normal]), np.array([offset]), cap)
        result = qcqp_oracle(
            np.eye(1),
            -2 * u,
            [
                QuadraticConstraint(A=np.eye(1), b=None, c=-cap),
                QuadraticConstraint(A=None, b=-np.array([normal]), c=offset),
            ],
            r=float(abs(u[0]) ** 2),
        )
        if not result.converged:
            power_errors.append(float("nan"))
            continue
        power_errors.append(
            abs(x[0] - result.x[0]) / max(abs(result.x[0] - u[0]), 1.0)
        )
    checks.append(
        _check("subproblems", "power_elements_vs_qcqp", power_errors, 1e-5, ctx.tolerance_scale)
    )
    return checks


def _filter_energy(
    g: np.ndarray, s: np.ndarray, s_pre: np.ndarray, s_post: np.ndarray, scenario
) -> float:
    """Sum of squared filter outputs over own sidelobes and neighbour leakage."""
    m = scenario.filter_length
    own, pre, post = (_extended(scenario, x) for x in (s, s_pre, s_post))
    total = 0.0
    for lag in range(-(m - 1), m):
        if lag != 0:
            total += abs(np.vdot(g, _window(own, lag))) ** 2
        if lag >= 0:
            total += abs(np.vdot(g, _window(pre, lag))) ** 2
        if lag <= 0:
            total += abs(np.vdot(g, _window(post, lag))) ** 2
    return total


def consensus_suite(ctx: SuiteContext) -> List[CheckResult]:
    """
    A capped AO run on the scenario: monotone objective above -lambda_max,
    feasible output, ADPM consensus reached, and the filter-side quadratic
    form equal to the explicit sum of filter outputs.
    """
    scenario, rng = ctx.scenario, ctx.rng
    cfg = dataclasses.replace(
        ctx.cfg,
        ao_max_iter=min(ctx.cfg.ao_max_iter, 3),
        sca_max_iter=min(ctx.cfg.sca_max_iter, 5),
    )
    shifts = build_shift_operators(scenario)
    amplitude = np.sqrt(scenario.total_power / scenario.num_antennas)

    def neighbour() -> np.ndarray:
        return amplitude * np.exp(2j * np.pi * rng.uniform(size=scenario.num_variables))

    identity_errors = []
    for _ in range(min(ctx.instances, 10)):
        s, s_pre, s_post = neighbour(), neighbour(), neighbour()
        g = _crandn(rng, scenario.filter_length)
        D = build_D(s, BlockContext(s_pre=s_pre, s_post=s_post), shifts)
        direct = _filter_energy(g, s, s_pre, s_post, scenario)
        identity_errors.append(abs(np.vdot(g, D @ g).real - direct) / max(1.0, direct))

    block = BlockContext(s_pre=neighbour(), s_post=neighbour())
    result = ao_solve(scenario, block, cfg, rng=rng)
    trace = np.asarray(result.g_obj_trace)
    bp = build_beampattern_matrices(scenario)
    lam_max = generalized_lambda_max(bp.mainlobe, bp.sidelobe)
    report = result.feasibility
    infeasibility = max(
        report["fractional_residual"],
        -report["power_floor_slack"],
        -report["power_cap_slack"],
        -report["ci_min_slack"],
        0.0,
    )
    adpm_residuals = [
        r["adpm_residual"] for r in result.sca_records if r["adpm_iterations"] > 0
    ]
    return [
        _check("consensus", "filter_identity", identity_errors, 1e-9, ctx.tolerance_scale),
        _check(
            "consensus",
            "ao_monotone",
            [max(0.0, float(np.max(np.diff(trace)))) if len(trace) > 1 else 0.0],
            cfg.monotone_slack,
            ctx.tolerance_scale,
        ),
        _check(
            "consensus",
            "ao_lower_bound",
            [max(0.0, -lam_max - float(np.min(trace)))],
            cfg.monotone_slack,
            ctx.tolerance_scale,
        ),
        _check(
            "consensus", "final_feasibility", [infeasibility], cfg.feasibility_tol, ctx.tolerance_scale
        ),
        _check(
            "consensus",
            "zero_lag_response",
            [abs(report["zero_lag_response"] - 1.0)],
            1e-9,
            ctx.tolerance_scale,
        ),
        _check("consensus", "adpm_residual", adpm_residuals, 1e-4, ctx.tolerance_scale),
    ]


available_suites: Dict[str, Callable[[SuiteContext], List[CheckResult]]] = {
    "model": model_suite,
    "ci": ci_suite,
    "subproblems": subproblems_suite,
    "consensus": consensus_suite,
}
