import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import crandn
from isacdesign.ao import build_G_side, initial_waveform, matched_filter
from isacdesign.errors import DomainError
from isacdesign.sca import (
    build_coupling,
    feasibility_report,
    fractional_residual,
    is_feasible,
    linearize_fractional,
    linearize_power,
    prepare_problem,
    recenter_degenerate,
    Restoration,
    restore_feasibility,
    sca_solve,
    sidelobe_rows,
)
from isacdesign.subproblems import AdpmReport


@pytest.fixture
def problem(tiny_scenario):
    return prepare_problem(tiny_scenario)


@pytest.fixture
def start(problem, rng):
    s = initial_waveform(problem, rng)
    return s, matched_filter(s, problem.shifts)


class TestFractionalSurrogate:
    def test_tight_at_expansion_point(self, problem, rng):
        bp = problem.beampattern
        s_bar = crandn(rng, problem.scenario.num_variables)
        t_bar = bp.ratio(s_bar)
        surrogate = linearize_fractional(s_bar, t_bar, bp.mainlobe, bp.sidelobe)
        assert surrogate.value(s_bar, t_bar) == pytest.approx(
            fractional_residual(s_bar, t_bar, bp), abs=1e-9
        )

    def test_upper_bound(self, problem, rng):
        bp = problem.beampattern
        n = problem.scenario.num_variables
        s_bar = crandn(rng, n)
        t_bar = bp.ratio(s_bar)
        surrogate = linearize_fractional(s_bar, t_bar, bp.mainlobe, bp.sidelobe)
        for _ in range(200):
            s = 2 * crandn(rng, n)
            t = t_bar * rng.uniform(0.1, 10)
            original = fractional_residual(s, t, bp)
            assert surrogate.value(s, t) >= original - 1e-9 * max(1.0, abs(original))

    def test_stacked_linear(self, problem, rng):
        bp = problem.beampattern
        s_bar = crandn(rng, problem.scenario.num_variables)
        surrogate = linearize_fractional(s_bar, 2.0, bp.mainlobe, bp.sidelobe)
        stacked = surrogate.stacked_linear()
        assert stacked[-1] == -surrogate.scalar
        assert_allclose(stacked[:-1], surrogate.linear)

    def test_domain(self, problem):
        bp = problem.beampattern
        n = problem.scenario.num_variables
        with pytest.raises(DomainError):
            linearize_fractional(np.ones(n), 0.0, bp.mainlobe, bp.sidelobe)
        with pytest.raises(DomainError):
            linearize_fractional(np.zeros(n), 1.0, bp.mainlobe, bp.sidelobe)


class TestPowerLinearization:
    def test_halfspace_implies_floor(self, rng):
        s_bar = crandn(rng, 50)
        power = linearize_power(s_bar, 0.25, 1.0, 2)
        floor = 0.75 / 2
        points = s_bar[None, :] + 2 * crandn(rng, 400, 50)
        inside = power.slack(points) >= 0
        assert inside.any()
        assert np.all(np.abs(points[inside]) ** 2 >= floor - 1e-12)

    def test_tight_at_expansion_point(self, rng):
        s_bar = crandn(rng, 6)
        power = linearize_power(s_bar, 0.25, 1.0, 2)
        assert_allclose(power.slack(s_bar), np.abs(s_bar) ** 2 - 0.375)


def test_recenter_degenerate(rng):
    s = np.array([1.0, 0.0, 0.5j])
    moved = recenter_degenerate(s, 0.25, rng)
    assert_allclose(moved[[0, 2]], s[[0, 2]])
    assert abs(moved[1]) == pytest.approx(0.5)
    assert recenter_degenerate(moved, 0.25, rng) is moved


def test_sidelobe_rows(problem, rng):
    ops = problem.shifts
    g = crandn(rng, ops.filter_length)
    s = crandn(rng, problem.scenario.num_variables)
    rows = sidelobe_rows(g, ops)
    assert rows.shape == (len(ops.lags) - 1, problem.scenario.num_variables)
    responses = np.delete(ops.responses(g, s), ops.zero_lag)
    assert_allclose(rows @ s, responses)


class TestRestoration:
    def test_from_random_phases(self, problem, rng):
        scenario = problem.scenario
        amplitude = np.sqrt(scenario.total_power / scenario.num_antennas)
        s = amplitude * np.exp(2j * np.pi * rng.uniform(size=scenario.num_variables))
        restored = restore_feasibility(s, problem)
        assert restored.feasible
        assert is_feasible(restored.report, problem)
        lo, hi = scenario.power_bounds
        power = np.abs(restored.s) ** 2
        assert power.min() >= lo * (1 - 1e-9)
        assert power.max() <= hi * (1 + 1e-9)

    def test_feasible_point_is_untouched(self, problem, start):
        s, _ = start
        restored = restore_feasibility(s, problem)
        assert restored.sweeps == 0
        assert_allclose(restored.s, s)

    def test_with_coupling(self, problem, start, rng):
        s, g = start
        coupling = build_coupling(problem, g, anchor=s)
        moved = s + 0.05 * crandn(rng, len(s))
        restored = restore_feasibility(moved, problem, coupling)
        if restored.feasible:
            assert restored.report["zero_lag_value"] <= 1e-9


def test_coupling_vanishes_at_anchor(problem, start):
    s, g = start
    coupling = build_coupling(problem, g, anchor=s)
    assert coupling.value(s, problem.shifts.zero_lag_operator) == pytest.approx(0.0)
    report = feasibility_report(s, 1.0, problem, coupling)
    assert report["zero_lag_value"] == pytest.approx(0.0)


def test_initial_waveform_is_feasible(problem, start):
    s, _ = start
    report = feasibility_report(s, problem.beampattern.ratio(s), problem)
    assert is_feasible(report, problem)
    assert report["fractional_residual"] == pytest.approx(0.0, abs=1e-9)


class TestScaSolve:
    def run(self, problem, start, cfg, rng):
        s, g = start
        coupling = build_coupling(problem, g, anchor=s)
        g_side = build_G_side(g, problem.shifts)
        t = problem.beampattern.ratio(s)
        return sca_solve(problem, coupling, g_side, (s, t), cfg, rng), coupling

    def test_objective_never_increases(self, problem, start, tiny, rng):
        _, cfg = tiny
        state, coupling = self.run(problem, start, cfg, rng)
        trace = np.array(state.f_trace)
        assert len(trace) == state.j + 1
        assert np.all(np.diff(trace) <= cfg.monotone_slack)
        assert trace.min() >= -problem.lambda_max - cfg.monotone_slack
        assert state.stop_reason in {
            "converged",
            "max iterations",
            "no descent (surrogate)",
            "no descent (restoration)",
            "restoration failed",
            "surrogate infeasible",
        }

    def test_accepted_iterates_are_feasible(self, problem, start, tiny, rng):
        _, cfg = tiny
        state, coupling = self.run(problem, start, cfg, rng)
        report = feasibility_report(state.s, state.t, problem, coupling)
        assert is_feasible(report, problem)
        for record in state.records:
            assert record["power_floor_slack"] >= -1e-9
            assert record["zero_lag_value"] <= 1e-9

    def test_records_adpm_sweeps(self, problem, start, tiny, rng):
        _, cfg = tiny
        cfg = cfg.__class__(**{**cfg.to_json(), "record_adpm": True})
        state, _ = self.run(problem, start, cfg, rng)
        if state.j:
            assert state.adpm_records
            assert {"j", "k", "residual_b", "rho"} <= set(state.adpm_records[0])

    @pytest.mark.slow
    def test_cvxpy_surrogate(self, problem, start, tiny, rng):
        _, cfg = tiny
        cfg = cfg.__class__(**{**cfg.to_json(), "subproblem_solver": "cvxpy"})
        state, _ = self.run(problem, start, cfg, rng)
        assert np.all(np.diff(state.f_trace) <= cfg.monotone_slack)
        assert all(r["adpm_iterations"] == 0 for r in state.records)


class TestRejectedCandidates:
    """sca_solve with the surrogate solver and the restoration replaced."""

    def run(self, problem, start, tiny, rng, monkeypatch, candidate, restored):
        s, g = start
        _, cfg = tiny
        t = problem.beampattern.ratio(s)

        def fake_adpm(*args, **kwargs):
            c_s, c_t = candidate(s, t)
            return AdpmReport(s=c_s, t=c_t, iterations=1, residual=0.0, converged=True)

        def fake_restoration(c_s, *args, **kwargs):
            return Restoration(s=restored(s, c_s), feasible=True, sweeps=0, report={})

        monkeypatch.setattr("isacdesign.sca.adpm_solve", fake_adpm)
        monkeypatch.setattr("isacdesign.sca.restore_feasibility", fake_restoration)
        coupling = build_coupling(problem, g, anchor=s)
        g_side = build_G_side(g, problem.shifts)
        return sca_solve(problem, coupling, g_side, (s, t), cfg, rng), s

    def test_ascending_surrogate_solution(
        self, problem, start, tiny, rng, monkeypatch, caplog
    ):
        # Scaling up the waveform keeps the ratio and grows the sidelobe energy
        state, s = self.run(
            problem,
            start,
            tiny,
            rng,
            monkeypatch,
            candidate=lambda s, t: (1.1 * s, t),
            restored=lambda s, c_s: c_s,
        )
        assert state.stop_reason == "no descent (surrogate)"
        assert "does not descend" in caplog.text
        assert state.j == 0
        assert len(state.f_trace) == 1
        assert_allclose(state.s, s)

    def test_ascent_from_restoration(self, problem, start, tiny, rng, monkeypatch):
        state, s = self.run(
            problem,
            start,
            tiny,
            rng,
            monkeypatch,
            candidate=lambda s, t: (s, t + 1.0),
            restored=lambda s, c_s: 1.1 * s,
        )
        assert state.stop_reason == "no descent (restoration)"
        assert len(state.f_trace) == 1
        assert_allclose(state.s, s)
