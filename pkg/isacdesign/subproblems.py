"""
Auxiliary-variable updates of the alternating direction penalty method (ADPM)
that solves one convex surrogate problem of the waveform update.

The surrogate problem is split with three kinds of consensus copies of the
stacked variable [s; t]:

    b      copy of [s; t] carrying the linearized fractional constraint
    p      copy of s carrying the zero-lag coupling with the current filter
    q_l    copy of s carrying the CI constraint of symbol l

Every auxiliary update is the projection of ``current - mu / rho`` onto its set.
The b and p sets share one shape, a diagonal quadric in an eigenbasis,

    sum_n a_n |x_n|^2 - Re{beta^H x} + offset <= 0,

solved through the scalar multiplier equation f(lambda) = 0, where f is
non-increasing in lambda. The primal (s, t) step keeps the exact sidelobe
quadratic and runs a few projected gradient steps, see `update_s_consensus`.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from scipy.optimize import brentq

from isacdesign.ci import CIInstance, project
from isacdesign.config import SolverConfig
from isacdesign.errors import DomainError, InfeasibilityError, RootFindingError

logger = logging.getLogger(__name__)

HERMITIAN_TOL = 1e-10
# Projected gradient steps per primal update
PRIMAL_STEPS = 5


@dataclass(frozen=True, eq=False)
class EigCache:
    """M = Q diag(a) Q^H with ascending a (non-negative for the PSD inputs)."""

    vectors: np.ndarray
    values: np.ndarray
    source: str = ""

    def to_frame(self, x: np.ndarray) -> np.ndarray:
        return self.vectors.conj().T @ x

    def from_frame(self, x_hat: np.ndarray) -> np.ndarray:
        return self.vectors @ x_hat

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.conj().T


def hermitian_eig(matrix: np.ndarray, source: str = "") -> EigCache:
    matrix = np.asarray(matrix)
    scale = max(1.0, float(np.linalg.norm(matrix)))
    asymmetry = float(np.linalg.norm(matrix - matrix.conj().T))
    if asymmetry > HERMITIAN_TOL * scale:
        raise DomainError(
            f"Matrix {source!r} is not Hermitian: ||M - M^H|| = {asymmetry}"
        )
    values, vectors = scipy.linalg.eigh((matrix + matrix.conj().T) / 2)
    # Rounding noise of PSD inputs
    values = np.where((values < 0) & (values > -1e-12 * scale), 0.0, values)
    return EigCache(vectors=vectors, values=values, source=source)


def solve_monotone_root(
    f: Callable[[float], float],
    bracket_cap: float = 1e12,
    tol: float = 1e-10,
    derivative: Optional[Callable[[float], float]] = None,
    start: float = 1.0,
) -> float:
    """
    Root lambda >= 0 of a continuous non-increasing f with f(0) > 0.

    The upper end of the bracket grows tenfold until f changes sign, then
    Brent's method isolates the root. When `derivative` is given, Newton steps
    that stay inside the bracket polish the result until |f| <= tol, with tol
    relative to max(1, f(0)).
    """
    f0 = f(0.0)
    if not f0 > 0:
        raise DomainError(f"solve_monotone_root needs f(0) > 0, got {f0}")
    lo, hi = 0.0, start
    while f(hi) > 0:
        lo, hi = hi, hi * 10
        if hi > bracket_cap:
            raise RootFindingError(
                f"No sign change of f up to lambda = {bracket_cap:g}"
            )
    target = tol * max(1.0, abs(f0))
    lam = brentq(f, lo, hi, xtol=1e-15 * max(1.0, hi), rtol=4 * np.finfo(float).eps)
    if derivative is not None:
        for _ in range(20):
            value = f(lam)
            if abs(value) <= target:
                break
            slope = derivative(lam)
            if slope == 0:
                break
            candidate = lam - value / slope
            if not lo <= candidate <= hi:
                break
            lam = candidate
    residual = abs(f(lam))
    if residual > target:
        logger.debug(f"Root residual {residual:.3e} above target {target:.3e}")
    return max(lam, 0.0)


@dataclass(frozen=True)
class QuadraticProjection:
    x: np.ndarray
    multiplier: float


def project_quadric(
    center: np.ndarray,
    eig: EigCache,
    beta: np.ndarray,
    offset: float = 0.0,
    tol: float = 1e-10,
    bracket_cap: float = 1e12,
) -> QuadraticProjection:
    """
    Projects `center` onto {x : sum a |Q^H x|^2 - Re{beta^H Q^H x} + offset <= 0}.

    `beta` is expressed in the eigenbasis. The stationary point for multiplier
    lambda is x_hat = (c_hat + lambda beta / 2) / (1 + lambda a).
    """
    a = eig.values
    c_hat = eig.to_frame(center)

    def point(lam: float) -> np.ndarray:
        return (c_hat + lam * beta / 2) / (1 + lam * a)

    def f(lam: float) -> float:
        x = point(lam)
        return float(
            np.sum(a * np.abs(x) ** 2) - np.real(np.vdot(beta, x)) + offset
        )

    def df(lam: float) -> float:
        x = point(lam)
        dx = (beta / 2 - a * x) / (1 + lam * a)
        return float(np.sum(np.real(np.conj(2 * a * x - beta) * dx)))

    if f(0.0) <= 0:
        return QuadraticProjection(x=center.copy(), multiplier=0.0)
    lam = solve_monotone_root(f, bracket_cap=bracket_cap, tol=tol, derivative=df)
    return QuadraticProjection(x=eig.from_frame(point(lam)), multiplier=lam)


@dataclass(frozen=True, eq=False)
class SurrogateCoefficients:
    """
    Everything the ADPM needs about one SCA surrogate problem.

    ``beta_b`` and ``beta_p`` are the linear coefficients of the b and p
    quadrics in their eigenbases. The power lower bound is linearized into
    Re{conj(power_normal) s} >= power_offset per element, the upper bound is
    the cap |s|^2 <= power_cap. ``sidelobe_matrix`` is the weighted sidelobe
    quadratic lambda_G G_side and ``sidelobe_curvature`` its largest eigenvalue.
    """

    beta_b: np.ndarray
    beta_p: np.ndarray
    anchor: np.ndarray
    power_normal: np.ndarray
    power_offset: np.ndarray
    power_cap: float
    sidelobe_matrix: np.ndarray
    sidelobe_curvature: float
    expansion_point: np.ndarray
    proximal_weight: float


@dataclass
class AdpmState:
    s: np.ndarray
    t: float
    b: np.ndarray
    p: np.ndarray
    q: np.ndarray
    mu_b: np.ndarray
    mu_p: np.ndarray
    mu_q: np.ndarray
    rho_b: float
    rho_p: float
    rho_q: np.ndarray
    k: int = 0
    residuals: List[Tuple[float, float, float]] = field(default_factory=list)

    @classmethod
    def start(
        cls, s: np.ndarray, t: float, num_symbols: int, rho: float
    ) -> "AdpmState":
        """Every copy equal to the primal point, zero multipliers."""
        n = len(s)
        return cls(
            s=s.astype(complex),
            t=float(t),
            b=np.concatenate([s, [t]]).astype(complex),
            p=s.astype(complex),
            q=np.tile(s.astype(complex), (num_symbols, 1)),
            mu_b=np.zeros(n + 1, dtype=complex),
            mu_p=np.zeros(n, dtype=complex),
            mu_q=np.zeros((num_symbols, n), dtype=complex),
            rho_b=rho,
            rho_p=rho,
            rho_q=np.full(num_symbols, rho),
        )

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate([self.s, [self.t]])

    def consensus_residuals(self) -> Tuple[float, float, float]:
        r_b = float(np.max(np.abs(self.b - self.stacked)))
        r_p = float(np.max(np.abs(self.p - self.s)))
        r_q = float(np.max(np.abs(self.q - self.s))) if len(self.q) else 0.0
        return r_b, r_p, r_q


def update_b(
    state: AdpmState,
    eig1: EigCache,
    beta_b: np.ndarray,
    tol: float = 1e-10,
    bracket_cap: float = 1e12,
) -> np.ndarray:
    """
    b-update: projection of [s; t] - mu_b / rho_b onto the linearized
    fractional constraint. `eig1` decomposes blkdiag(Psi_SL, 0) and `beta_b`
    (built from the SCA expansion point) is in its eigenbasis.
    """
    center = state.stacked - state.mu_b / state.rho_b
    return project_quadric(center, eig1, beta_b, tol=tol, bracket_cap=bracket_cap).x


def update_p(
    state: AdpmState,
    eig2: EigCache,
    beta_p: np.ndarray,
    anchor: Optional[np.ndarray] = None,
    tol: float = 1e-10,
    bracket_cap: float = 1e12,
) -> np.ndarray:
    """
    p-update: projection of s - mu_p / rho_p onto
    eta ||G0 y||^2 - Re{g^H G0 y} <= 0 with y = p - anchor.
    A zero anchor gives the constraint in p itself.
    """
    center = state.s - state.mu_p / state.rho_p
    if anchor is None:
        anchor = np.zeros_like(center)
    shifted = project_quadric(
        center - anchor, eig2, beta_p, tol=tol, bracket_cap=bracket_cap
    )
    return shifted.x + anchor


def update_q(state: AdpmState, l: int, ci_instance: CIInstance) -> np.ndarray:
    center = state.s - state.mu_q[l] / state.rho_q[l]
    return project(ci_instance.with_center(center))


def project_power_elements(
    u: np.ndarray,
    normal: np.ndarray,
    offset: np.ndarray,
    cap: float,
) -> np.ndarray:
    """
    Element-wise projection of u onto {Re(conj(w) s) >= tau, |s|^2 <= cap}.

    Candidates in order: u itself, its projection on the halfspace, its radial
    projection on the disk, then the boundary intersection nearest u. The first
    feasible candidate of each element is optimal.
    """
    u = np.asarray(u, dtype=complex)
    w2 = np.abs(normal) ** 2
    if np.any(w2 == 0):
        raise InfeasibilityError("Degenerate power halfspace (zero normal)")
    tol = 1e-12 * max(1.0, cap)

    def feasible(x: np.ndarray) -> np.ndarray:
        return (np.real(np.conj(normal) * x) >= offset - tol) & (
            np.abs(x) ** 2 <= cap + tol
        )

    out = u.copy()
    done = feasible(u)

    gap = offset - np.real(np.conj(normal) * u)
    halfspace = u + np.maximum(gap, 0) * normal / w2
    pick = ~done & feasible(halfspace)
    out[pick] = halfspace[pick]
    done |= pick

    magnitude = np.abs(u)
    radial = np.where(
        magnitude > 0, u * np.sqrt(cap) / np.where(magnitude > 0, magnitude, 1), u
    )
    pick = ~done & feasible(radial)
    out[pick] = radial[pick]
    done |= pick

    if not done.all():
        rest = ~done
        chord = cap - offset[rest] ** 2 / w2[rest]
        if np.any(chord < -tol):
            bad = int(np.flatnonzero(rest)[np.argmin(chord)])
            raise InfeasibilityError(
                f"Power halfspace excludes the magnitude disk at element {bad}"
            )
        unit = normal[rest] / np.sqrt(w2[rest])
        foot = offset[rest] / w2[rest] * normal[rest]
        along = 1j * unit * np.sqrt(np.maximum(chord, 0))
        plus, minus = foot + along, foot - along
        nearer = np.abs(plus - u[rest]) <= np.abs(minus - u[rest])
        out[rest] = np.where(nearer, plus, minus)
    return out


def update_s_consensus(
    state: AdpmState, surrogate: SurrogateCoefficients, steps: int = PRIMAL_STEPS
) -> Tuple[np.ndarray, float]:
    """
    Primal step. The objective

        -t + lambda_s ||s - s_j||^2 + s^H Q s
           + sum over copies (rho / 2) ||copy - s + mu / rho||^2

    with Q = ``sidelobe_matrix`` is minimized over the per-element power
    constraints by projected gradient steps from the current s, with step
    1 / (W + lambda_max(Q)) where W is the common weight of the separable
    part. Every step lowers the objective; with Q = 0 the first step is the
    exact minimizer. t has the closed form Re(b_t + mu_t / rho_b) + 1 / rho_b.
    """
    n = len(state.s)
    weight = (
        surrogate.proximal_weight
        + state.rho_b / 2
        + state.rho_p / 2
        + np.sum(state.rho_q) / 2
    )
    target = surrogate.proximal_weight * surrogate.expansion_point
    target = target + (state.rho_b / 2) * (
        state.b[:n] + state.mu_b[:n] / state.rho_b
    )
    target = target + (state.rho_p / 2) * (state.p + state.mu_p / state.rho_p)
    if len(state.q):
        target = target + np.sum(
            (state.rho_q[:, None] / 2)
            * (state.q + state.mu_q / state.rho_q[:, None]),
            axis=0,
        )
    lipschitz = weight + surrogate.sidelobe_curvature
    s = state.s
    for _ in range(steps if surrogate.sidelobe_curvature > 0 else 1):
        # Half the Wirtinger gradient of the objective at s
        half_gradient = weight * s - target + surrogate.sidelobe_matrix @ s
        s = project_power_elements(
            s - half_gradient / lipschitz,
            surrogate.power_normal,
            surrogate.power_offset,
            surrogate.power_cap,
        )
    t = float(
        np.real(state.b[n]) + np.real(state.mu_b[n]) / state.rho_b + 1 / state.rho_b
    )
    return s, t


def update_multipliers_and_penalties(
    state: AdpmState, growth: float, rho_max: float
) -> AdpmState:
    state.mu_b = state.mu_b + state.rho_b * (state.b - state.stacked)
    state.mu_p = state.mu_p + state.rho_p * (state.p - state.s)
    if len(state.q):
        state.mu_q = state.mu_q + state.rho_q[:, None] * (state.q - state.s)
    state.rho_b = min(growth * state.rho_b, rho_max)
    state.rho_p = min(growth * state.rho_p, rho_max)
    state.rho_q = np.minimum(growth * state.rho_q, rho_max)
    state.residuals.append(state.consensus_residuals())
    state.k += 1
    return state


@dataclass
class AdpmReport:
    s: np.ndarray
    t: float
    iterations: int
    residual: float
    converged: bool
    records: List[Dict[str, float]] = field(default_factory=list)


def _residuals_settled(residuals: Sequence[Tuple[float, float, float]]) -> bool:
    tail = np.array([max(r) for r in residuals[-10:]])
    return bool(np.all(np.diff(tail) <= 1e-12 * max(1.0, tail[0])))


def adpm_solve(
    s_init: np.ndarray,
    t_init: float,
    surrogate: SurrogateCoefficients,
    eig1: EigCache,
    eig2: EigCache,
    ci_templates: Sequence[CIInstance],
    cfg: SolverConfig,
) -> AdpmReport:
    """
    Runs ADPM sweeps on one surrogate problem starting from consensus at
    (s_init, t_init). Stops when the largest consensus residual drops below
    ``cfg.adpm_tol`` or after ``cfg.adpm_max_iter`` sweeps.
    """
    state = AdpmState.start(s_init, t_init, len(ci_templates), cfg.rho_init)
    records: List[Dict[str, float]] = []
    residual = np.inf
    while state.k < cfg.adpm_max_iter:
        state.b = update_b(
            state, eig1, surrogate.beta_b, cfg.root_tol, cfg.root_bracket_cap
        )
        state.p = update_p(
            state,
            eig2,
            surrogate.beta_p,
            surrogate.anchor,
            cfg.root_tol,
            cfg.root_bracket_cap,
        )
        for l, inst in enumerate(ci_templates):
            state.q[l] = update_q(state, l, inst)
        state.s, state.t = update_s_consensus(state, surrogate)
        update_multipliers_and_penalties(state, cfg.rho_growth, cfg.rho_max)
        r_b, r_p, r_q = state.residuals[-1]
        residual = max(r_b, r_p, r_q)
        if cfg.record_adpm:
            records.append(
                {
                    "k": state.k,
                    "residual_b": r_b,
                    "residual_p": r_p,
                    "residual_q": r_q,
                    "rho": state.rho_b,
                    "t": state.t,
                }
            )
        if residual <= cfg.adpm_tol:
            break

    converged = residual <= cfg.adpm_tol
    if converged and len(state.residuals) >= 10 and not _residuals_settled(
        state.residuals
    ):
        logger.warning("ADPM consensus residuals increased over the last 10 sweeps")
    logger.debug(
        f"ADPM stopped after {state.k} sweeps with residual {residual:.3e}"
    )
    return AdpmReport(
        s=state.s,
        t=state.t,
        iterations=state.k,
        residual=float(residual),
        converged=bool(converged),
        records=records,
    )
