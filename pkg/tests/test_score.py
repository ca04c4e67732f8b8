import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from conftest import crandn
from isacdesign.ao import BlockContext, initial_waveform, update_filter
from isacdesign.config import load_config
from isacdesign.errors import DomainError
from isacdesign.model import build_beampattern_matrices, build_shift_operators
from isacdesign.sca import prepare_problem
from isacdesign.score import (
    DB_FLOOR,
    MIN_SER_TRIALS,
    available_scores,
    beampattern,
    binomial_half_width,
    ci_margin,
    evaluate_design,
    imsr,
    imsr_grid,
    papr,
    range_profile,
    ser_noise_variance,
    simulate_ser,
    to_db,
    validate_score_return_type,
)


@pytest.fixture
def feasible(tiny_scenario, rng):
    return initial_waveform(prepare_problem(tiny_scenario), rng)


def test_to_db():
    assert to_db(100.0) == pytest.approx(20.0)
    assert to_db(0.0) == DB_FLOOR
    assert_allclose(to_db(np.array([1.0, 10.0])), [0.0, 10.0])


class TestImsr:
    def test_matches_ratio(self, tiny_scenario, rng):
        bp = build_beampattern_matrices(tiny_scenario)
        s = crandn(rng, tiny_scenario.num_variables)
        assert imsr(s, bp) == pytest.approx(10 * np.log10(bp.ratio(s)))

    def test_grid_sum_agrees(self, tiny_scenario, rng):
        bp = build_beampattern_matrices(tiny_scenario)
        s = crandn(rng, tiny_scenario.num_variables)
        assert imsr_grid(s, tiny_scenario) == pytest.approx(imsr(s, bp), abs=1e-9)

    def test_zero_waveform(self, tiny_scenario):
        s = np.zeros(tiny_scenario.num_variables)
        with pytest.raises(DomainError):
            imsr(s, build_beampattern_matrices(tiny_scenario))
        with pytest.raises(DomainError):
            imsr_grid(s, tiny_scenario)


def test_beampattern_frame(tiny_scenario, rng):
    frame = beampattern(crandn(rng, tiny_scenario.num_variables), tiny_scenario)
    assert list(frame.columns) == ["angle", "db"]
    assert len(frame) == len(tiny_scenario.angle_grid)


class TestRangeProfile:
    def test_scalar_pulse(self):
        scenario = load_config(
            None, {"num_antennas": 1, "num_samples": 2, "cp_length": 0, "num_symbols": 0}
        )[0]
        ops = build_shift_operators(scenario)
        s = np.array([1.0, 0.5])
        ctx = BlockContext(s_pre=np.array([0.0, 2.0]), s_post=np.array([3.0, 0.0]))
        profile = range_profile(s, s, ctx, ops)
        assert list(profile.lags) == [-1, 0, 1]
        assert_allclose(profile.own, [0.5, 1.25, 0.5])
        assert profile.zero_lag_response == pytest.approx(1.25)
        # Leakage only on the causal side of each neighbour
        assert profile.pre[0] == 0
        assert profile.post[2] == 0
        assert profile.sidelobe_energy == pytest.approx(0.5)

    def test_peak_sidelobe_includes_leakage(self, tiny_scenario, rng):
        ops = build_shift_operators(tiny_scenario)
        n = tiny_scenario.num_variables
        s = crandn(rng, n)
        g = update_filter(s, BlockContext.isolated(n), ops)
        quiet = range_profile(g, s, BlockContext.isolated(n), ops)
        loud = range_profile(g, s, BlockContext(100 * s, 100 * s), ops)
        assert quiet.leakage_peak_db == DB_FLOOR
        assert quiet.peak_sidelobe_db == quiet.own_peak_sidelobe_db
        assert loud.peak_sidelobe_db == loud.leakage_peak_db > quiet.peak_sidelobe_db

    def test_to_frame(self, tiny_scenario, rng):
        ops = build_shift_operators(tiny_scenario)
        n = tiny_scenario.num_variables
        s = crandn(rng, n)
        profile = range_profile(s[: ops.filter_length], s, BlockContext.isolated(n), ops)
        frame = profile.to_frame(block=2)
        assert set(frame.source) == {"own", "pre", "post"}
        assert len(frame) == 3 * len(ops.lags)
        assert (frame.block == 2).all()


def test_papr_of_constant_modulus(tiny_scenario):
    s = np.full(tiny_scenario.num_variables, np.sqrt(0.5) + 0j)
    report = papr(s, tiny_scenario)
    assert_allclose(report.papr_db, 0.0)
    assert report.violation() == 0.0
    report = papr(2 * s, tiny_scenario)
    assert report.violation() == pytest.approx(2.0 - tiny_scenario.power_bounds[1])


def test_ci_margin_of_feasible_waveform(tiny_scenario, feasible):
    margins = ci_margin(feasible, tiny_scenario)
    assert margins.shape == (tiny_scenario.num_symbols,)
    assert margins.min() >= -1e-9


class TestSer:
    def test_noise_variance(self, tiny_scenario):
        base = ser_noise_variance(tiny_scenario, 0.0)
        assert base == pytest.approx(tiny_scenario.sinr_threshold * tiny_scenario.noise_power)
        assert ser_noise_variance(tiny_scenario, 10.0) == pytest.approx(base / 10)

    def test_error_free_at_high_snr(self, tiny_scenario, feasible):
        frame = simulate_ser(feasible, tiny_scenario, [60.0], trials=500)
        assert frame.ser.iloc[0] == 0.0
        assert frame.decisions.iloc[0] == 500 * tiny_scenario.num_symbols

    def test_errors_at_low_snr(self, tiny_scenario, feasible):
        frame = simulate_ser(feasible, tiny_scenario, [-60.0, 60.0], trials=3000)
        assert frame.ser.iloc[0] > 0.3
        assert frame.ser.iloc[0] > frame.ser.iloc[1]

    def test_seeded(self, tiny_scenario, feasible):
        one = simulate_ser(feasible, tiny_scenario, [0.0], trials=4500, seed=3)
        two = simulate_ser(feasible, tiny_scenario, [0.0], trials=4500, seed=3)
        pd.testing.assert_frame_equal(one, two)

    def test_radar_only(self):
        scenario = load_config(None, {"num_symbols": 0})[0]
        s = np.ones(scenario.num_variables)
        frame = simulate_ser(s, scenario, [0.0, 5.0], trials=10)
        assert frame.ser.isna().all()

    def test_trials(self, tiny_scenario, feasible):
        with pytest.raises(DomainError):
            simulate_ser(feasible, tiny_scenario, [0.0], trials=0)

    def test_warns_below_minimum_trials(self, tiny_scenario, feasible, caplog):
        simulate_ser(feasible, tiny_scenario, [0.0], trials=100)
        assert "100 SER trials" in caplog.text
        caplog.clear()
        simulate_ser(feasible, tiny_scenario, [0.0], trials=MIN_SER_TRIALS)
        assert "SER trials" not in caplog.text

    def test_half_width(self):
        assert binomial_half_width(0.5, 100) == pytest.approx(1.959964 * 0.05, rel=1e-5)
        assert binomial_half_width(0.0, 100) == 0.0


def test_evaluate_design(tiny_scenario, feasible):
    ops = build_shift_operators(tiny_scenario)
    ctx = BlockContext.isolated(tiny_scenario.num_variables)
    g = update_filter(feasible, ctx, ops)
    report = evaluate_design(feasible, g, ctx, tiny_scenario, snr_grid=[20.0], trials=100)
    assert report.feasible
    summary = report.summary()
    assert summary["zero_lag_response"][0] == pytest.approx(1.0)
    assert summary["peak_sidelobe_db"] == report.range_profile.own_peak_sidelobe_db
    assert len(summary["papr_db"]) == tiny_scenario.num_antennas
    assert len(report.ser) == 1


class TestScores:
    def reports(self, tiny_scenario, rng):
        ops = build_shift_operators(tiny_scenario)
        out = []
        for block in range(2):
            s = initial_waveform(prepare_problem(tiny_scenario), rng)
            ctx = BlockContext.isolated(len(s), block)
            g = update_filter(s, ctx, ops)
            out.append(evaluate_design(s, g, ctx, tiny_scenario, block=block))
        return out

    def test_worst_case(self, tiny_scenario, rng):
        reports = self.reports(tiny_scenario, rng)
        imsr_score = available_scores["imsr_db"]()
        assert imsr_score(reports) == min(r.imsr_db for r in reports)
        psl = available_scores["peak_sidelobe_db"]()
        assert psl(reports) == max(r.peak_sidelobe_db for r in reports)
        assert not psl.maximize
        assert str(psl) == "peak_sidelobe_db"

    def test_zero_lag_and_power(self, tiny_scenario, rng):
        reports = self.reports(tiny_scenario, rng)
        assert available_scores["zero_lag_response"]()(reports) <= 1e-9
        assert available_scores["power_violation"]()(reports) == 0.0

    def test_return_type(self):
        validate_score_return_type(1.0)
        validate_score_return_type((("a", 1.0),))
        with pytest.raises(ValueError):
            validate_score_return_type("1.0")
        with pytest.raises(AssertionError):
            validate_score_return_type((("a", 1),))
