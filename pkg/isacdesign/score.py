"""
Metrics of a designed (waveform, filter) pair and the scalar scores reported
by `evaluate` and `sweep`.
"""
import logging
from dataclasses import dataclass
from functools import partial
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import more_itertools
import numpy as np
import pandas as pd
from scipy import stats

from isacdesign import ci
from isacdesign.errors import DomainError
from isacdesign.model import (
    BeampatternMatrices,
    Scenario,
    ShiftOperators,
    build_beampattern_matrices,
    build_shift_operators,
    ula_steering,
)
from isacdesign.multiproc import run_parallel

logger = logging.getLogger(__name__)

DB_FLOOR = -300.0
SER_SHARD = 2000
# Fewer trials cannot resolve error rates around 1e-4
MIN_SER_TRIALS = 10000


def to_db(power: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    power = np.asarray(power, dtype=float)
    with np.errstate(divide="ignore"):
        db = 10 * np.log10(power)
    db = np.maximum(np.nan_to_num(db, nan=DB_FLOOR, neginf=DB_FLOOR), DB_FLOOR)
    return float(db) if db.ndim == 0 else db


def imsr(s: np.ndarray, bp: BeampatternMatrices) -> float:
    """10 log10(s^H Psi_ML s / s^H Psi_SL s)"""
    if not np.any(s):
        raise DomainError("IMSR of a zero waveform is undefined")
    return to_db(bp.ratio(s))


def beampattern_power(s: np.ndarray, scenario: Scenario) -> np.ndarray:
    """Transmit power per grid angle, averaged over the snapshots."""
    snapshots = s.reshape(scenario.num_samples, scenario.num_antennas)
    steering = ula_steering(
        scenario.num_antennas, scenario.element_spacing, scenario.angle_grid
    )
    return np.sum(np.abs(snapshots @ steering.conj().T) ** 2, axis=0) / (
        scenario.num_samples
    )


def beampattern(s: np.ndarray, scenario: Scenario) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "angle": scenario.angle_grid,
            "db": to_db(beampattern_power(s, scenario)),
        }
    )


def imsr_grid(s: np.ndarray, scenario: Scenario) -> float:
    """
    IMSR integrated directly over the angle grid (unit weights), plus the
    diagonal loading of the sidelobe region.
    """
    if not np.any(s):
        raise DomainError("IMSR of a zero waveform is undefined")
    energy = beampattern_power(s, scenario) * scenario.num_samples
    mask = scenario.mainlobe_mask
    sidelobe = energy[~mask].sum() + scenario.sidelobe_loading * np.vdot(s, s).real
    return to_db(energy[mask].sum() / sidelobe)


@dataclass(frozen=True, eq=False)
class RangeProfile:
    """
    Filter outputs per lag. ``pre`` is defined for lags >= 0 and ``post`` for
    lags <= 0; the other entries are zero.
    """

    lags: np.ndarray
    own: np.ndarray
    pre: np.ndarray
    post: np.ndarray
    zero_lag: int

    @property
    def zero_lag_response(self) -> complex:
        return complex(self.own[self.zero_lag])

    @property
    def sidelobe_energy(self) -> float:
        return float(np.sum(np.abs(np.delete(self.own, self.zero_lag)) ** 2))

    def _relative_db(self, values: np.ndarray) -> float:
        peak = abs(self.zero_lag_response) ** 2
        if peak == 0:
            raise DomainError("Zero-lag response is zero")
        return to_db(float(np.max(np.abs(values) ** 2, initial=0.0)) / peak)

    @property
    def own_peak_sidelobe_db(self) -> float:
        return self._relative_db(np.delete(self.own, self.zero_lag))

    @property
    def leakage_peak_db(self) -> float:
        return self._relative_db(np.concatenate([self.pre, self.post]))

    @property
    def peak_sidelobe_db(self) -> float:
        """Largest sidelobe, own block or neighbour leakage, relative to zero lag."""
        return max(self.own_peak_sidelobe_db, self.leakage_peak_db)

    def to_frame(self, block: Optional[int] = None) -> pd.DataFrame:
        peak = abs(self.zero_lag_response) ** 2 or 1.0
        frames = []
        for source, values in (("own", self.own), ("pre", self.pre), ("post", self.post)):
            frame = pd.DataFrame(
                {
                    "lag": self.lags,
                    "db": to_db(np.abs(values) ** 2 / peak),
                    "real": values.real,
                    "imag": values.imag,
                    "source": source,
                }
            )
            if block is not None:
                frame.insert(0, "block", block)
            frames.append(frame)
        return pd.concat(frames, ignore_index=True)


def range_profile(
    g: np.ndarray, s: np.ndarray, ctx, ops: ShiftOperators
) -> RangeProfile:
    """`ctx` is any object with s_pre / s_post waveforms (a BlockContext)."""
    z = ops.zero_lag
    own = ops.responses(g, s)
    pre = ops.responses(g, ctx.s_pre)
    post = ops.responses(g, ctx.s_post)
    pre[:z] = 0
    post[z + 1:] = 0
    return RangeProfile(lags=ops.lags, own=own, pre=pre, post=post, zero_lag=z)


@dataclass(frozen=True)
class PaprReport:
    papr_db: np.ndarray
    min_power: float
    max_power: float
    bounds: Tuple[float, float]

    def violation(self) -> float:
        lo, hi = self.bounds
        return max(0.0, lo - self.min_power, self.max_power - hi)


def papr(s: np.ndarray, scenario: Scenario) -> PaprReport:
    if not np.any(s):
        raise DomainError("PAPR of a zero waveform is undefined")
    power = np.abs(s.reshape(scenario.num_samples, scenario.num_antennas)) ** 2
    ratio = power.max(axis=0) / power.mean(axis=0)
    return PaprReport(
        papr_db=to_db(ratio),
        min_power=float(power.min()),
        max_power=float(power.max()),
        bounds=scenario.power_bounds,
    )


def ci_margin(s: np.ndarray, scenario: Scenario) -> np.ndarray:
    """Smallest signed CI slack per symbol; pinned coordinates count -|residual|."""
    received = scenario.channels @ s
    return np.array(
        [
            min(
                ci.region_slacks(
                    z,
                    complex(symbol),
                    scenario.ci_threshold,
                    ci.classify_point(scenario.constellation, symbol),
                )
            )
            for z, symbol in zip(received, scenario.symbols)
        ]
    )


def ser_noise_variance(scenario: Scenario, snr_db: float) -> float:
    """Noise power that puts the nominal received constellation at `snr_db`."""
    energy = float(np.mean(np.abs(scenario.constellation.points) ** 2))
    return scenario.sinr_threshold * scenario.noise_power * energy / 10 ** (snr_db / 10)


def _count_errors(job: Dict[str, Any]) -> int:
    scenario: Scenario = job["scenario"]
    rng = np.random.default_rng(job["seed"])
    shape = (job["trials"], scenario.num_symbols)
    noise = np.sqrt(job["variance"] / 2) * (
        rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    )
    decided = scenario.constellation.detect(
        job["received"][None, :] + noise, scenario.ci_threshold
    )
    return int(np.sum(decided != job["sent"][None, :]))


def binomial_half_width(p: float, n: int, confidence: float = 0.95) -> float:
    z = stats.norm.ppf(0.5 + confidence / 2)
    return float(z * np.sqrt(p * (1 - p) / n))


def simulate_ser(
    s: np.ndarray,
    scenario: Scenario,
    snr_grid: Sequence[float],
    trials: int = 10000,
    seed: int = 0,
    threads: int = 1,
) -> pd.DataFrame:
    """
    Monte-Carlo symbol error rate of the noiseless received symbols h_l^T s
    under circular Gaussian noise, one row per SNR point. Trials are split in
    shards with independent seeds, so the estimate depends only on `seed`.
    """
    if trials < 1:
        raise DomainError(f"trials must be >= 1: {trials}")
    if trials < MIN_SER_TRIALS:
        logger.warning(
            f"{trials} SER trials per SNR point, below the {MIN_SER_TRIALS} needed "
            "for a stable estimate"
        )
    columns = ["snr_db", "ser", "half_width", "errors", "decisions"]
    if scenario.num_symbols == 0:
        return pd.DataFrame(
            [(snr, np.nan, np.nan, 0, 0) for snr in snr_grid], columns=columns
        )
    received = scenario.channels @ s
    sent = np.array(
        [scenario.constellation.index_of(symbol) for symbol in scenario.symbols]
    )
    shards = [len(chunk) for chunk in more_itertools.chunked(range(trials), SER_SHARD)]
    seeds = np.random.SeedSequence(seed).spawn(len(snr_grid) * len(shards))
    rows = []
    for i, snr in enumerate(snr_grid):
        variance = ser_noise_variance(scenario, snr)
        jobs = [
            {
                "scenario": scenario,
                "received": received,
                "sent": sent,
                "variance": variance,
                "trials": count,
                "seed": seeds[i * len(shards) + k],
            }
            for k, count in enumerate(shards)
        ]
        errors = sum(run_parallel(_count_errors, jobs, threads, progress=False))
        decisions = trials * scenario.num_symbols
        rate = errors / decisions
        rows.append(
            (float(snr), rate, binomial_half_width(rate, decisions), errors, decisions)
        )
    return pd.DataFrame(rows, columns=columns)


@dataclass
class EvaluationReport:
    block: int
    imsr_db: float
    imsr_grid_db: float
    beampattern: pd.DataFrame
    range_profile: RangeProfile
    peak_sidelobe_db: float
    papr: PaprReport
    ci_margins: np.ndarray
    ser: pd.DataFrame

    @property
    def feasible(self) -> bool:
        margin = float(np.min(self.ci_margins)) if len(self.ci_margins) else 0.0
        return margin >= -1e-6 and self.papr.violation() <= 1e-6

    def summary(self) -> Dict[str, Any]:
        return {
            "block": self.block,
            "imsr_db": self.imsr_db,
            "imsr_grid_db": self.imsr_grid_db,
            "peak_sidelobe_db": self.peak_sidelobe_db,
            "own_peak_sidelobe_db": self.range_profile.own_peak_sidelobe_db,
            "interblock_leakage_db": self.range_profile.leakage_peak_db,
            "zero_lag_response": [
                self.range_profile.zero_lag_response.real,
                self.range_profile.zero_lag_response.imag,
            ],
            "papr_db": self.papr.papr_db.tolist(),
            "min_sample_power": self.papr.min_power,
            "max_sample_power": self.papr.max_power,
            "power_bounds": list(self.papr.bounds),
            "ci_margins": self.ci_margins.tolist(),
            "feasible": self.feasible,
        }


def evaluate_design(
    s: np.ndarray,
    g: np.ndarray,
    ctx,
    scenario: Scenario,
    snr_grid: Sequence[float] = (),
    trials: int = 10000,
    seed: int = 0,
    threads: int = 1,
    block: int = 0,
) -> EvaluationReport:
    bp = build_beampattern_matrices(scenario)
    ops = build_shift_operators(scenario)
    profile = range_profile(g, s, ctx, ops)
    return EvaluationReport(
        block=block,
        imsr_db=imsr(s, bp),
        imsr_grid_db=imsr_grid(s, scenario),
        beampattern=beampattern(s, scenario),
        range_profile=profile,
        peak_sidelobe_db=profile.peak_sidelobe_db,
        papr=papr(s, scenario),
        ci_margins=ci_margin(s, scenario),
        ser=simulate_ser(s, scenario, snr_grid, trials, seed, threads),
    )


def validate_score_return_type(ret: Union[Tuple[Tuple[str, float], ...], float]):
    """
    Valid return types for a score are
        - tuple(tuple(string: name of the subtype, float: the value)), the
            first entry being the primary value
        - float
    """
    if isinstance(ret, tuple):
        assert all(
            type(s) == tuple and type(s[0]) == str and type(s[1]) == float for s in ret
        ), (
            "If the return type of the score is a tuple, all the elements "
            "in the tuple should be tuple of type (string, float)"
        )
    elif isinstance(ret, float):
        pass
    else:
        raise ValueError(
            f"Return type {type(ret)} is unexpected. Return type of "
            "the score function should either be a "
            "tuple(tuple) or float. "
        )


class ScoreFunction:
    """
    A simple abstract base class for scalar summaries of a list of
    per-block evaluation reports.
    """

    def __init__(self, name: Optional[str] = None, maximize: bool = True):
        """
        :param name: Override the name of this scoring function.
        :param maximize: Maximize this score? (Otherwise it is a loss, a
            sidelobe level or a violation we want to minimize.)
        """
        if name:
            self.name = name
        self.maximize = maximize

    def __call__(self, *args, **kwargs) -> Union[Tuple[Tuple[str, float], ...], float]:
        ret = self._compute(*args, **kwargs)
        validate_score_return_type(ret)
        return ret

    def _compute(
        self, reports: List[EvaluationReport], **kwargs
    ) -> Union[Tuple[Tuple[str, float], ...], float]:
        raise NotImplementedError("Inheriting classes must implement this function")

    def __str__(self):
        return self.name


class WorstCase(ScoreFunction):
    """Worst value of a per-block quantity across blocks."""

    name = "worst_case"

    def __init__(
        self,
        extract: Callable[[EvaluationReport], float],
        name: Optional[str] = None,
        maximize: bool = True,
    ):
        super().__init__(name=name, maximize=maximize)
        self.extract = extract

    def _compute(self, reports: List[EvaluationReport], **kwargs) -> float:
        values = [float(self.extract(r)) for r in reports]
        return float(min(values) if self.maximize else max(values))


class ZeroLagResponse(ScoreFunction):
    """Largest deviation of the zero-lag output from the distortionless value 1."""

    name = "zero_lag_response"

    def _compute(self, reports: List[EvaluationReport], **kwargs) -> float:
        return float(
            max(abs(r.range_profile.zero_lag_response - 1.0) for r in reports)
        )


def _min_margin(report: EvaluationReport) -> float:
    return float(np.min(report.ci_margins)) if len(report.ci_margins) else np.inf


available_scores: Dict[str, Callable] = {
    "imsr_db": partial(WorstCase, lambda r: r.imsr_db, name="imsr_db"),
    "peak_sidelobe_db": partial(
        WorstCase, lambda r: r.peak_sidelobe_db, name="peak_sidelobe_db", maximize=False
    ),
    "interblock_leakage_db": partial(
        WorstCase,
        lambda r: r.range_profile.leakage_peak_db,
        name="interblock_leakage_db",
        maximize=False,
    ),
    "max_papr_db": partial(
        WorstCase,
        lambda r: float(np.max(r.papr.papr_db)),
        name="max_papr_db",
        maximize=False,
    ),
    "min_ci_margin": partial(WorstCase, _min_margin, name="min_ci_margin"),
    "zero_lag_response": partial(ZeroLagResponse, maximize=False),
    "power_violation": partial(
        WorstCase, lambda r: r.papr.violation(), name="power_violation", maximize=False
    ),
}
