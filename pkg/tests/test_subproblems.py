import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import crandn
from isacdesign.ci import instances_for
from isacdesign.config import SolverConfig
from isacdesign.errors import DomainError, InfeasibilityError, RootFindingError
from isacdesign.oracle import grid_lambda_oracle
from isacdesign.subproblems import (
    AdpmState,
    SurrogateCoefficients,
    adpm_solve,
    hermitian_eig,
    project_power_elements,
    project_quadric,
    solve_monotone_root,
    update_b,
    update_multipliers_and_penalties,
    update_p,
    update_q,
    update_s_consensus,
)


class TestHermitianEig:
    def test_diagonal(self):
        eig = hermitian_eig(np.diag([3.0, 1.0]))
        assert_allclose(eig.values, [1.0, 3.0])
        assert_allclose(np.abs(eig.vectors), [[0, 1], [1, 0]])

    def test_reconstruction(self, rng):
        m = crandn(rng, 8, 8)
        m = m + m.conj().T
        eig = hermitian_eig(m)
        assert np.linalg.norm(eig.reconstruct() - m) <= 1e-9 * np.linalg.norm(m)

    def test_frame_round_trip(self, rng):
        m = crandn(rng, 5, 5)
        eig = hermitian_eig(m @ m.conj().T)
        x = crandn(rng, 5)
        assert_allclose(eig.from_frame(eig.to_frame(x)), x)

    def test_rejects_non_hermitian(self):
        with pytest.raises(DomainError):
            hermitian_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))


class TestMonotoneRoot:
    def test_linear(self):
        assert solve_monotone_root(lambda x: 2.0 - x) == pytest.approx(2.0, abs=1e-10)

    def test_needs_growth(self):
        lam = solve_monotone_root(lambda x: 1e6 - x, derivative=lambda x: -1.0)
        assert lam == pytest.approx(1e6, rel=1e-12)

    def test_negative_start(self):
        with pytest.raises(DomainError):
            solve_monotone_root(lambda x: -1.0 - x)

    def test_no_sign_change(self):
        with pytest.raises(RootFindingError):
            solve_monotone_root(lambda x: 1.0 / (1.0 + x), bracket_cap=1e6)


def random_quadric(rng, n, rank=None):
    factor = crandn(rng, n, rank or n)
    return factor @ factor.conj().T


def quadric_value(x, matrix, beta_tilde, offset=0.0):
    return float(np.vdot(x, matrix @ x).real - np.vdot(beta_tilde, x).real + offset)


class TestProjectQuadric:
    def test_feasible_center(self, rng):
        matrix = random_quadric(rng, 4)
        eig = hermitian_eig(matrix)
        beta_tilde = crandn(rng, 4)
        # Zero is always feasible for a zero offset
        result = project_quadric(np.zeros(4, complex), eig, eig.to_frame(beta_tilde))
        assert result.multiplier == 0.0
        assert_allclose(result.x, 0.0)

    def test_lands_on_boundary(self, rng):
        matrix = random_quadric(rng, 6, rank=3)
        eig = hermitian_eig(matrix)
        beta_tilde = matrix @ crandn(rng, 6)
        # Opposite to beta, so the center violates the constraint
        center = -2 * beta_tilde
        result = project_quadric(center, eig, eig.to_frame(beta_tilde))
        assert result.multiplier > 0
        value = quadric_value(result.x, matrix, beta_tilde)
        start = quadric_value(center, matrix, beta_tilde)
        assert abs(value) <= 1e-8 * max(1.0, start)

    def test_multiplier_function_is_monotone(self, rng):
        for _ in range(100):
            n = int(rng.integers(2, 8))
            matrix = random_quadric(rng, n)
            values, vectors = np.linalg.eigh(matrix)
            c_hat = vectors.conj().T @ crandn(rng, n)
            b_hat = vectors.conj().T @ crandn(rng, n)
            lams = np.geomspace(1e-3, 1e3, 50)[:, None]
            xs = (c_hat + lams * b_hat / 2) / (1 + lams * values)
            f = np.sum(values * np.abs(xs) ** 2, axis=1) - np.real(xs @ b_hat.conj())
            assert np.all(np.diff(f) <= 1e-12 * max(1.0, abs(f[0])))


def start_state(rng, n, num_symbols=0):
    state = AdpmState.start(crandn(rng, n), 1.5, num_symbols, 2.0)
    state.mu_b = crandn(rng, n + 1)
    state.mu_p = crandn(rng, n)
    return state


class TestUpdateB:
    def test_matches_grid_oracle(self, rng):
        for _ in range(20):
            n = int(rng.integers(2, 7))
            state = start_state(rng, n)
            matrix = np.zeros((n + 1, n + 1), complex)
            matrix[:n, :n] = random_quadric(rng, n)
            beta_tilde = 2 * crandn(rng, n + 1)
            eig = hermitian_eig(matrix)
            b = update_b(state, eig, eig.to_frame(beta_tilde))

            values, vectors = np.linalg.eigh(matrix)
            center = state.stacked - state.mu_b / state.rho_b
            _, x_hat = grid_lambda_oracle(
                vectors.conj().T @ center,
                np.clip(values, 0, None),
                vectors.conj().T @ beta_tilde,
                resolution=100_000,
            )
            expected = vectors @ x_hat
            scale = max(np.linalg.norm(expected - center), 1e-12)
            assert np.linalg.norm(b - expected) <= 1e-6 * scale


class TestUpdateP:
    def test_zero_weight_is_halfspace(self, rng):
        n = 4
        state = start_state(rng, n)
        eig = hermitian_eig(np.zeros((n, n)))
        direction = crandn(rng, n)
        # Center on the wrong side: Re{d^H y} < 0
        state.s = -direction
        state.mu_p = np.zeros(n, complex)
        p = update_p(state, eig, eig.to_frame(direction))
        assert np.vdot(direction, p).real == pytest.approx(0.0, abs=1e-9)
        # The move is along the halfspace normal
        move = p - state.s
        assert np.linalg.matrix_rank(np.stack([move, direction]), tol=1e-9) == 1

    def test_anchor_shifts_the_set(self, rng):
        n = 5
        state = start_state(rng, n)
        g0 = crandn(rng, 3, n)
        matrix = 0.1 * g0.conj().T @ g0
        direction = g0.conj().T @ crandn(rng, 3)
        anchor = crandn(rng, n)
        eig = hermitian_eig(matrix)
        p = update_p(state, eig, eig.to_frame(direction), anchor)
        y = p - anchor
        assert quadric_value(y, matrix, direction) <= 1e-7
        # Zero anchor is the unshifted constraint
        p0 = update_p(state, eig, eig.to_frame(direction))
        assert quadric_value(p0, matrix, direction) <= 1e-7


def test_update_q_projects_onto_ci_set(tiny_scenario, rng):
    templates = instances_for(tiny_scenario)
    n = tiny_scenario.num_variables
    state = AdpmState.start(np.zeros(n, complex), 1.0, len(templates), 1.0)
    state.mu_q = crandn(rng, len(templates), n)
    q = update_q(state, 1, templates[1])
    z = templates[1].channel @ q
    threshold = tiny_scenario.ci_threshold
    rotated = np.exp(-1j * np.angle(templates[1].symbol)) * z
    depth = (rotated.real - threshold) * np.tan(np.pi / 4)
    assert abs(rotated.imag) <= depth + 1e-9


class TestPowerElements:
    def test_feasible_points_unchanged(self):
        normal = np.array([2.0, 2.0j])
        offset = np.array([1.5, 1.5])
        u = np.array([1.0, 1.0j])
        assert_allclose(project_power_elements(u, normal, offset, 2.0), u)

    def test_halfspace_then_disk(self):
        normal = np.array([2.0])
        offset = np.array([1.5])
        # Below the halfspace, inside the disk after the move
        assert_allclose(project_power_elements(np.array([0.1 + 0.2j]), normal, offset, 4.0), [0.75 + 0.2j])
        # Outside the disk, radial projection is feasible
        assert_allclose(project_power_elements(np.array([3.0]), normal, offset, 4.0), [2.0])

    def test_corner(self):
        normal = np.array([2.0])
        offset = np.array([1.5])
        # Far out along the imaginary axis: both constraints active
        x = project_power_elements(np.array([0.1 + 5j]), normal, offset, 1.0)
        assert_allclose(x, [0.75 + 1j * np.sqrt(1 - 0.75 ** 2)])

    def test_disjoint(self):
        with pytest.raises(InfeasibilityError):
            project_power_elements(np.array([0.0]), np.array([2.0]), np.array([5.0]), 1.0)


def surrogate_for(s, floor, cap, n, beta_b, beta_p, sidelobe=None):
    sidelobe = np.zeros((n, n), complex) if sidelobe is None else sidelobe
    return SurrogateCoefficients(
        beta_b=beta_b,
        beta_p=beta_p,
        anchor=np.zeros(n, complex),
        power_normal=2 * s,
        power_offset=np.abs(s) ** 2 + floor,
        power_cap=cap,
        sidelobe_matrix=sidelobe,
        sidelobe_curvature=float(np.linalg.eigvalsh(sidelobe)[-1]),
        expansion_point=s,
        proximal_weight=1e-3,
    )


class TestConsensus:
    def test_unconstrained_average(self, rng):
        n = 3
        s = np.full(n, 1.0 + 0j)
        state = AdpmState.start(s, 1.0, 1, 1.0)
        state.b[:n] = s + 0.1
        state.p = s + 0.2
        state.q[0] = s + 0.3
        surrogate = surrogate_for(s, 0.01, 100.0, n, None, None)
        s_new, t_new = update_s_consensus(state, surrogate)
        alpha = 1e-3
        expected = (alpha * s + 0.5 * (s + 0.1) + 0.5 * (s + 0.2) + 0.5 * (s + 0.3)) / (
            alpha + 1.5
        )
        assert_allclose(s_new, expected)
        assert t_new == pytest.approx(1.0 + 1.0)

    @staticmethod
    def spread_copies(n):
        s = np.full(n, 1.0 + 0j)
        state = AdpmState.start(s, 1.0, 1, 1.0)
        state.b[:n] = s + 0.1
        state.p = s + 0.2
        state.q[0] = s + 0.3
        weight = 1e-3 + 1.5
        target = 1e-3 * s + 0.5 * ((s + 0.1) + (s + 0.2) + (s + 0.3))
        return s, state, weight, target

    @staticmethod
    def unit_sidelobe(rng, n):
        a = crandn(rng, n, n)
        q = a @ a.conj().T
        return q / np.linalg.eigvalsh(q)[-1]

    def test_sidelobe_quadratic_is_solved(self, rng):
        n = 3
        s, state, weight, target = self.spread_copies(n)
        q = self.unit_sidelobe(rng, n)
        # Power constraints far from the unconstrained minimizer
        surrogate = surrogate_for(s, -10.0, 100.0, n, None, None, sidelobe=q)
        s_new, _ = update_s_consensus(state, surrogate, steps=200)
        expected = np.linalg.solve(weight * np.eye(n) + q, target)
        assert_allclose(s_new, expected, rtol=1e-10)

    def test_every_step_lowers_the_objective(self, rng):
        n = 3
        s, state, weight, target = self.spread_copies(n)
        q = self.unit_sidelobe(rng, n)
        surrogate = surrogate_for(s, -10.0, 1.0, n, None, None, sidelobe=q)

        def objective(x):
            return float(
                weight * np.vdot(x, x).real
                - 2 * np.vdot(target, x).real
                + np.vdot(x, q @ x).real
            )

        values = [objective(s)]
        for steps in range(1, 7):
            s_new, _ = update_s_consensus(state, surrogate, steps=steps)
            assert np.all(np.abs(s_new) ** 2 <= 1.0 + 1e-12)
            values.append(objective(s_new))
        assert np.all(np.diff(values) <= 1e-12)
        assert values[-1] < values[0]

    def test_exact_consensus_keeps_multipliers(self, rng):
        n = 4
        state = AdpmState.start(crandn(rng, n), 0.7, 2, 1.0)
        state.mu_b = crandn(rng, n + 1)
        mu_b = state.mu_b.copy()
        update_multipliers_and_penalties(state, growth=1.5, rho_max=2.0)
        assert_allclose(state.mu_b, mu_b)
        assert state.rho_b == 1.5
        update_multipliers_and_penalties(state, growth=1.5, rho_max=2.0)
        assert state.rho_b == 2.0
        assert state.k == 2
        assert state.residuals[-1] == (0.0, 0.0, 0.0)

    def test_adpm_reaches_consensus(self, rng):
        n = 4
        s = np.full(n, 1.0 + 0j)
        matrix = np.zeros((n + 1, n + 1), complex)
        matrix[:n, :n] = np.eye(n)
        eig1 = hermitian_eig(matrix)
        eig2 = hermitian_eig(np.zeros((n, n)))
        # ||s||^2 - Re{beta^H [s; t]} <= 0 with beta = [2 s_bar; -1]
        beta_b = eig1.to_frame(np.concatenate([2 * s, [-1.0]]))
        beta_p = eig2.to_frame(np.zeros(n))
        surrogate = surrogate_for(s, 0.5, 2.0, n, beta_b, beta_p)
        cfg = SolverConfig(adpm_max_iter=300, adpm_tol=1e-9, record_adpm=True)
        report = adpm_solve(s, 1.0, surrogate, eig1, eig2, [], cfg)
        assert report.iterations == len(report.records)
        first = max(report.records[0][k] for k in ("residual_b", "residual_p", "residual_q"))
        assert report.residual < first
        assert np.all(np.abs(report.s) ** 2 <= 2.0 + 1e-9)
        assert np.all(2 * report.s.real >= 1.5 - 1e-9)
