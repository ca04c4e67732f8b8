"""
Brute-force reference solvers for the closed-form pieces of the design stack.

Nothing here imports the solver modules; each oracle rebuilds its problem from
raw arrays so that a shared bug cannot hide on both sides of a comparison.
They are slow on purpose.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import cvxpy as cp
import numpy as np
from scipy.optimize import minimize, minimize_scalar

from isacdesign.errors import RootFindingError

logger = logging.getLogger(__name__)

GRID_CHUNK = 100_000


def grid_lambda_oracle(
    center: np.ndarray,
    a: np.ndarray,
    beta: np.ndarray,
    offset: float = 0.0,
    lam_range: Tuple[float, float] = (1e-10, 1e8),
    resolution: int = 1_000_000,
) -> Tuple[float, np.ndarray]:
    """
    Scans f(lambda) = sum a |x|^2 - Re{beta^H x} + offset, with
    x = (center + lambda beta / 2) / (1 + lambda a), on a geometric grid,
    brackets the first sign change and bisects it. Everything is in the
    eigenbasis of the quadric.
    """
    center = np.asarray(center, dtype=complex)
    a = np.asarray(a, dtype=float)
    beta = np.asarray(beta, dtype=complex)

    def f(lams: np.ndarray) -> np.ndarray:
        x = (center[None, :] + lams[:, None] * beta[None, :] / 2) / (
            1 + lams[:, None] * a[None, :]
        )
        return (
            np.sum(a * np.abs(x) ** 2, axis=1)
            - np.sum(np.real(beta.conj() * x), axis=1)
            + offset
        )

    if f(np.zeros(1))[0] <= 0:
        return 0.0, center.copy()
    grid = np.concatenate([[0.0], np.geomspace(*lam_range, resolution)])
    lo = hi = None
    for start in range(0, len(grid), GRID_CHUNK):
        chunk = grid[start:start + GRID_CHUNK]
        values = f(chunk)
        crossing = np.flatnonzero(values <= 0)
        if len(crossing):
            k = start + int(crossing[0])
            lo, hi = grid[k - 1], grid[k]
            break
    if lo is None:
        raise RootFindingError(f"f has no sign change on {lam_range}")
    for _ in range(200):
        mid = (lo + hi) / 2
        if f(np.array([mid]))[0] > 0:
            lo = mid
        else:
            hi = mid
    lam = (lo + hi) / 2
    x = (center + lam * beta / 2) / (1 + lam * a)
    return lam, x


@dataclass(frozen=True)
class Halfplane:
    """a * Re z + b * Im z + c <= 0"""

    a: float
    b: float
    c: float

    def value(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.a * x + self.b * y + self.c


def region_constraints(
    tag: str, symbol: complex, threshold: float, half_angle: Optional[float] = None
) -> Tuple[List[Halfplane], List[Halfplane]]:
    """(equalities, inequalities) of a CI region in the received-symbol plane."""
    if tag == "PskCone":
        # Apex at threshold * |s_D| along the symbol direction, half-angle phi
        theta = np.angle(symbol)
        apex = threshold * abs(symbol)
        sin_phi, cos_phi = np.sin(half_angle), np.cos(half_angle)
        inequalities = []
        for side in (1, -1):
            # Rotated coordinates: x' = x cos + y sin, y' = -x sin + y cos
            # side * y' * cos(phi) - (x' - apex) * sin(phi) <= 0
            a = -side * np.sin(theta) * cos_phi - np.cos(theta) * sin_phi
            b = side * np.cos(theta) * cos_phi - np.sin(theta) * sin_phi
            inequalities.append(Halfplane(a, b, apex * sin_phi))
        return [], inequalities
    target = threshold * symbol
    sx, sy = np.sign(symbol.real), np.sign(symbol.imag)
    pin_re = Halfplane(1.0, 0.0, -target.real)
    pin_im = Halfplane(0.0, 1.0, -target.imag)
    away_re = Halfplane(-sx, 0.0, sx * target.real)
    away_im = Halfplane(0.0, -sy, sy * target.imag)
    return {
        "ExactA": ([pin_re, pin_im], []),
        "EdgeB": ([pin_re], [away_im]),
        "EdgeD": ([pin_im], [away_re]),
        "CornerC": ([], [away_re, away_im]),
    }[tag]


def projection_oracle_2d(
    tag: str,
    symbol: complex,
    threshold: float,
    center: complex,
    half_angle: Optional[float] = None,
    grid_points: int = 401,
) -> complex:
    """
    Nearest point to `center` of a CI region in the received-symbol plane,
    by dense search and local refinement.
    """
    equalities, inequalities = region_constraints(tag, symbol, threshold, half_angle)
    cx, cy = center.real, center.imag
    tol = 1e-12

    if len(equalities) == 2:
        return complex(threshold * symbol)

    if len(equalities) == 1:
        eq = equalities[0]
        # Points (x0 + u dx, y0 + u dy) on the equality line
        dx, dy = -eq.b, eq.a
        x0, y0 = -eq.a * eq.c, -eq.b * eq.c
        lo, hi = -np.inf, np.inf
        for h in inequalities:
            slope = h.a * dx + h.b * dy
            rest = h.a * x0 + h.b * y0 + h.c
            if slope > 0:
                hi = min(hi, -rest / slope)
            elif slope < 0:
                lo = max(lo, -rest / slope)
        free = (cx - x0) * dx + (cy - y0) * dy
        span = abs(free) + 10 * threshold + 1
        lo_s, hi_s = max(lo, free - span), min(hi, free + span)
        grid = np.linspace(lo_s, hi_s, 10 * grid_points)
        dist = (x0 + grid * dx - cx) ** 2 + (y0 + grid * dy - cy) ** 2
        best = grid[np.argmin(dist)]
        step = grid[1] - grid[0] if len(grid) > 1 else 1.0
        refined = minimize_scalar(
            lambda u: (x0 + u * dx - cx) ** 2 + (y0 + u * dy - cy) ** 2,
            bounds=(max(lo_s, best - step), min(hi_s, best + step)),
            method="bounded",
            options={"xatol": 1e-14},
        )
        u = refined.x if refined.success else best
        return complex(x0 + u * dx, y0 + u * dy)

    def feasible(x, y):
        ok = np.ones(np.shape(x), dtype=bool)
        for h in inequalities:
            ok &= h.value(x, y) <= tol
        return ok

    anchor = threshold * symbol
    radius = abs(center - anchor) + threshold + 1
    xs = np.linspace(cx - radius, cx + radius, grid_points)
    ys = np.linspace(cy - radius, cy + radius, grid_points)
    X, Y = np.meshgrid(xs, ys)
    dist = np.where(feasible(X, Y), (X - cx) ** 2 + (Y - cy) ** 2, np.inf)
    k = np.unravel_index(np.argmin(dist), dist.shape)
    start = np.array([X[k], Y[k]]) if np.isfinite(dist[k]) else np.array(
        [anchor.real, anchor.imag]
    )
    refined = minimize(
        lambda v: (v[0] - cx) ** 2 + (v[1] - cy) ** 2,
        start,
        jac=lambda v: np.array([2 * (v[0] - cx), 2 * (v[1] - cy)]),
        method="SLSQP",
        constraints=[
            {
                "type": "ineq",
                "fun": lambda v, h=h: -h.value(v[0], v[1]),
                "jac": lambda v, h=h: np.array([-h.a, -h.b]),
            }
            for h in inequalities
        ],
        options={"ftol": 1e-15, "maxiter": 500},
    )
    v = refined.x
    if not feasible(v[0], v[1]) and np.isfinite(dist[k]):
        v = start
    return complex(v[0], v[1])


@dataclass(frozen=True, eq=False)
class QuadraticConstraint:
    """x^H A x + Re{b^H x} + c <= 0, with A Hermitian PSD (or None)."""

    A: Optional[np.ndarray]
    b: Optional[np.ndarray]
    c: float


@dataclass(frozen=True, eq=False)
class QcqpResult:
    x: Optional[np.ndarray]
    objective: float
    converged: bool


def _psd_factor(matrix: np.ndarray) -> np.ndarray:
    values, vectors = np.linalg.eigh((matrix + matrix.conj().T) / 2)
    values = np.clip(values, 0, None)
    return np.sqrt(values)[:, None] * vectors.conj().T


def qcqp_oracle(
    P: np.ndarray,
    q: np.ndarray,
    constraints: Sequence[QuadraticConstraint] = (),
    r: float = 0.0,
) -> QcqpResult:
    """
    Minimizes x^H P x + Re{q^H x} + r over complex x subject to convex
    quadratic constraints, with cvxpy's conic solvers.
    """
    n = len(q)
    x = cp.Variable(n, complex=True)

    def quadratic(A, b, c):
        expr = c
        if A is not None and np.any(A):
            expr = expr + cp.sum_squares(_psd_factor(A) @ x)
        if b is not None and np.any(b):
            expr = expr + cp.real(np.conj(b) @ x)
        return expr

    problem = cp.Problem(
        cp.Minimize(quadratic(P, q, r)),
        [quadratic(con.A, con.b, con.c) <= 0 for con in constraints],
    )
    try:
        problem.solve()
    except cp.error.SolverError as e:
        logger.warning(f"qcqp_oracle solver failure: {e}")
        return QcqpResult(x=None, objective=np.nan, converged=False)
    converged = problem.status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE)
    value = np.asarray(x.value, dtype=complex) if converged else None
    objective = (
        float(np.real(np.vdot(value, P @ value)) + np.real(np.vdot(q, value)) + r)
        if converged
        else np.nan
    )
    return QcqpResult(x=value, objective=objective, converged=converged)


def generalized_lambda_max(A: np.ndarray, B: np.ndarray) -> float:
    """Largest lambda of A v = lambda B v for B positive definite, by whitening."""
    L = np.linalg.cholesky(B)
    L_inv = np.linalg.inv(L)
    whitened = L_inv @ A @ L_inv.conj().T
    return float(np.linalg.eigvalsh((whitened + whitened.conj().T) / 2)[-1])


def ser_oracle(
    received: np.ndarray,
    sent_points: np.ndarray,
    points: np.ndarray,
    variance: float,
    trials: int,
    seed: int,
) -> float:
    """
    Symbol error rate by minimum distance to the scaled constellation
    `points`, one trial at a time.
    """
    rng = np.random.default_rng(seed)
    errors = 0
    for _ in range(trials):
        noise = np.sqrt(variance / 2) * (
            rng.standard_normal(len(received)) + 1j * rng.standard_normal(len(received))
        )
        for z, sent in zip(received + noise, sent_points):
            decided = points[np.argmin(np.abs(points - z))]
            errors += int(not np.isclose(decided, sent))
    return errors / (trials * len(received))
