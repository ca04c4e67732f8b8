"""
Fixed matrices and vectors of the transceiver design problem.

Waveforms are stacked snapshot by snapshot: element ``n * num_antennas + k`` of
a waveform ``s`` is antenna ``k`` at time sample ``n``. The receive filter acts
on the angle-combined, cyclic-prefix extended stream of length
``num_samples + cp_length``.
"""

import dataclasses
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from isacdesign.errors import ConfigurationError, DomainError

ANGLE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Constellation:
    """
    Nominal symbol alphabet, unit average energy.

    PSK points sit at angles ``2 pi k / order + pi / order`` so that QPSK is
    ``(+-1 +- j) / sqrt(2)``. Square QAM uses odd integer coordinates scaled by
    ``1 / sqrt(2 (order - 1) / 3)``.
    """

    kind: str
    order: int

    def __post_init__(self):
        if self.kind not in ("psk", "qam"):
            raise ConfigurationError(f"Unknown constellation {self.kind!r}")
        # The CI cone needs a half-angle below pi / 2
        if self.kind == "psk" and self.order < 4:
            raise ConfigurationError(f"PSK order must be >= 4, got {self.order}")
        if self.kind == "qam":
            side = int(round(np.sqrt(self.order)))
            if side * side != self.order or side < 2 or side % 2:
                raise ConfigurationError(
                    f"Square QAM order must be an even square, got {self.order}"
                )

    @property
    def is_psk(self) -> bool:
        return self.kind == "psk"

    @property
    def half_angle(self) -> float:
        """CI cone half-angle phi for PSK."""
        if not self.is_psk:
            raise DomainError("half_angle is only defined for PSK")
        return np.pi / self.order

    @cached_property
    def levels(self) -> np.ndarray:
        """Per-axis QAM amplitude levels, ascending."""
        side = int(round(np.sqrt(self.order)))
        return np.arange(-(side - 1), side, 2) / np.sqrt(2 * (self.order - 1) / 3)

    @cached_property
    def points(self) -> np.ndarray:
        if self.is_psk:
            k = np.arange(self.order)
            return np.exp(1j * (2 * np.pi * k / self.order + np.pi / self.order))
        re, im = np.meshgrid(self.levels, self.levels, indexing="xy")
        return (re + 1j * im).ravel()

    def index_of(self, symbol: complex, tol: float = 1e-9) -> int:
        distance = np.abs(self.points - symbol)
        idx = int(np.argmin(distance))
        if distance[idx] > tol:
            raise DomainError(f"{symbol} is not a {self.order}-{self.kind} point")
        return idx

    def detect(self, received: np.ndarray, scale: float) -> np.ndarray:
        """
        Hard decisions for received samples of the constellation scaled by
        `scale`: angular sectors for PSK, nearest neighbour for QAM.
        Returns indices into `points`.
        """
        if self.is_psk:
            offset = np.pi / self.order
            sector = 2 * np.pi / self.order
            return np.mod(
                np.round((np.angle(received) - offset) / sector), self.order
            ).astype(int)
        distance = np.abs(received[..., None] - scale * self.points)
        return np.argmin(distance, axis=-1)


@dataclass(frozen=True, eq=False)
class Scenario:
    """
    Immutable description of one design problem.

    Arrays are stored read-only. `channels` has one row per communication
    symbol, each of length ``num_samples * num_antennas``; the received symbol
    is ``channels[l] @ s``.
    """

    num_antennas: int
    num_samples: int
    cp_length: int
    element_spacing: float
    angle_grid: np.ndarray
    mainlobe: Tuple[Tuple[float, float], ...]
    target_angle: float
    total_power: float
    power_relaxation: float
    peak_weight: float
    sidelobe_weight: float
    proximal_weight: float
    sidelobe_loading: float
    sinr_threshold: float
    noise_power: float
    constellation: Constellation
    channels: np.ndarray
    symbols: np.ndarray
    # Seed for per-block payload draws. None when the payload was given explicitly.
    symbol_seed: Optional[int] = None

    def __post_init__(self):
        if self.num_antennas < 1:
            raise ConfigurationError(f"num_antennas must be >= 1: {self.num_antennas}")
        if self.num_samples < 2:
            raise ConfigurationError(f"num_samples must be >= 2: {self.num_samples}")
        if not 0 <= self.cp_length < self.num_samples:
            raise ConfigurationError(
                f"cp_length must be in [0, num_samples): {self.cp_length}"
            )
        if not 0 <= self.power_relaxation < 1:
            raise ConfigurationError(
                f"power_relaxation must be in [0, 1): {self.power_relaxation}"
            )
        if self.sidelobe_loading <= 0:
            raise ConfigurationError(
                f"sidelobe_loading must be > 0: {self.sidelobe_loading}"
            )
        if self.proximal_weight <= 0:
            raise ConfigurationError(
                f"proximal_weight must be > 0: {self.proximal_weight}"
            )
        for name in ("total_power", "noise_power", "element_spacing"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be > 0: {getattr(self, name)}")
        for name in ("peak_weight", "sidelobe_weight", "sinr_threshold"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0: {getattr(self, name)}")

        grid = np.array(self.angle_grid, dtype=float)
        if grid.ndim != 1 or len(grid) == 0:
            raise ConfigurationError("angle_grid must be a non-empty list of angles")
        if np.any(np.diff(grid) <= 0):
            raise ConfigurationError("angle_grid must be strictly increasing")
        if np.any(np.abs(grid) > 90 + ANGLE_TOL):
            raise ConfigurationError("angle_grid must lie within [-90, 90] degrees")
        if abs(self.target_angle) > 90 + ANGLE_TOL:
            raise ConfigurationError(f"target_angle out of range: {self.target_angle}")
        for lo, hi in self.mainlobe:
            if lo > hi:
                raise ConfigurationError(f"mainlobe interval [{lo}, {hi}] is reversed")
            if lo < grid[0] - ANGLE_TOL or hi > grid[-1] + ANGLE_TOL:
                raise ConfigurationError(
                    f"mainlobe interval [{lo}, {hi}] exceeds the angle grid span"
                )

        channels = np.atleast_2d(np.array(self.channels, dtype=complex))
        symbols = np.array(self.symbols, dtype=complex).ravel()
        if len(symbols) == 0:
            channels = np.zeros((0, self.num_variables), dtype=complex)
        if channels.shape != (len(symbols), self.num_variables):
            raise ConfigurationError(
                f"channels must have shape ({len(symbols)}, {self.num_variables}), "
                f"got {channels.shape}"
            )
        if np.any(np.linalg.norm(channels, axis=1) == 0):
            raise ConfigurationError("every channel vector must be nonzero")
        for symbol in symbols:
            self.constellation.index_of(symbol)

        for name, value in (("angle_grid", grid), ("channels", channels),
                            ("symbols", symbols)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def num_variables(self) -> int:
        return self.num_samples * self.num_antennas

    @property
    def filter_length(self) -> int:
        return self.num_samples + self.cp_length

    @property
    def num_symbols(self) -> int:
        return len(self.symbols)

    @property
    def power_bounds(self) -> Tuple[float, float]:
        """Per-sample power interval [(1 - eps) P0 / Nt, (1 + eps) P0 / Nt]."""
        nominal = self.total_power / self.num_antennas
        return (
            (1 - self.power_relaxation) * nominal,
            (1 + self.power_relaxation) * nominal,
        )

    @property
    def ci_threshold(self) -> float:
        """sqrt(Gamma_u sigma^2), the scale of the nominal received constellation."""
        return float(np.sqrt(self.sinr_threshold * self.noise_power))

    @cached_property
    def mainlobe_mask(self) -> np.ndarray:
        return mainlobe_mask(self.angle_grid, self.mainlobe)

    def for_block(self, block: int) -> "Scenario":
        """Scenario for block `block`: same geometry and channels, fresh payload."""
        if self.symbol_seed is None or self.num_symbols == 0:
            return self
        symbols = draw_symbols(
            self.constellation, self.num_symbols, self.symbol_seed + block
        )
        return dataclasses.replace(self, symbols=symbols)


def mainlobe_mask(
    angle_grid: np.ndarray, mainlobe: Sequence[Tuple[float, float]]
) -> np.ndarray:
    grid = np.asarray(angle_grid, dtype=float)
    mask = np.zeros(len(grid), dtype=bool)
    for lo, hi in mainlobe:
        mask |= (grid >= lo - ANGLE_TOL) & (grid <= hi + ANGLE_TOL)
    return mask


def ofdm_channels(
    num_antennas: int,
    num_samples: int,
    subcarriers: Sequence[int],
    user_channel: np.ndarray,
) -> np.ndarray:
    """
    Per-symbol channels of a single user whose symbols ride on `subcarriers`:
    ``h_l = f_{k_l} kron h_u`` with ``f_k`` the unitary DFT row of subcarrier k.
    """
    subcarriers = np.asarray(subcarriers, dtype=int)
    if np.any(subcarriers < 0) or np.any(subcarriers >= num_samples):
        raise ConfigurationError(f"subcarriers must lie in [0, {num_samples})")
    if len(set(subcarriers.tolist())) != len(subcarriers):
        raise ConfigurationError("subcarriers must be distinct")
    n = np.arange(num_samples)
    dft_rows = np.exp(-2j * np.pi * np.outer(subcarriers, n) / num_samples)
    dft_rows /= np.sqrt(num_samples)
    user_channel = np.asarray(user_channel, dtype=complex).reshape(num_antennas)
    return np.stack([np.kron(row, user_channel) for row in dft_rows]).reshape(
        len(subcarriers), num_samples * num_antennas
    )


def draw_user_channel(num_antennas: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return (
        rng.standard_normal(num_antennas) + 1j * rng.standard_normal(num_antennas)
    ) / np.sqrt(2)


def draw_symbols(constellation: Constellation, count: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return constellation.points[rng.integers(constellation.order, size=count)]


def ula_steering(
    num_antennas: int, spacing: float, angles_deg: np.ndarray
) -> np.ndarray:
    """Steering vectors, one row per angle."""
    angles = np.atleast_1d(np.asarray(angles_deg, dtype=float))
    if np.any(np.abs(angles) > 90 + ANGLE_TOL):
        raise DomainError(f"Angles must lie within [-90, 90] degrees: {angles}")
    k = np.arange(num_antennas)
    return np.exp(2j * np.pi * spacing * np.outer(np.sin(np.deg2rad(angles)), k))


def steering_vector(scenario: Scenario, theta: float) -> np.ndarray:
    return ula_steering(scenario.num_antennas, scenario.element_spacing, theta)[0]


@dataclass(frozen=True, eq=False)
class BeampatternMatrices:
    mainlobe: np.ndarray
    sidelobe: np.ndarray
    grid_weights: np.ndarray
    mainlobe_mask: np.ndarray
    loading: float

    def ratio(self, s: np.ndarray) -> float:
        """s^H Psi_ML s / s^H Psi_SL s"""
        return float(
            np.real(np.vdot(s, self.mainlobe @ s)) / np.real(np.vdot(s, self.sidelobe @ s))
        )

    @cached_property
    def max_generalized_eigenvalue(self) -> float:
        """Largest lambda with Psi_ML v = lambda Psi_SL v; upper bound of the ratio."""
        return float(
            scipy.linalg.eigh(self.mainlobe, self.sidelobe, eigvals_only=True)[-1]
        )


def build_beampattern_matrices(scenario: Scenario) -> BeampatternMatrices:
    """
    Psi = sum over the region's grid angles of w (I kron a a^H), with uniform
    quadrature weights and diagonal loading on the sidelobe matrix.
    """
    grid = scenario.angle_grid
    mask = scenario.mainlobe_mask
    if not mask.any():
        raise ConfigurationError("The mainlobe contains no angle grid point")
    if mask.all():
        raise ConfigurationError("The sidelobe region contains no angle grid point")
    weights = np.ones(len(grid))
    steering = ula_steering(scenario.num_antennas, scenario.element_spacing, grid)
    eye = np.eye(scenario.num_samples)

    def region(select: np.ndarray) -> np.ndarray:
        rows = steering[select]
        per_snapshot = (rows.T * weights[select]) @ rows.conj()
        return np.kron(eye, per_snapshot)

    mainlobe = region(mask)
    sidelobe = region(~mask) + scenario.sidelobe_loading * np.eye(
        scenario.num_variables
    )
    return BeampatternMatrices(
        mainlobe=mainlobe,
        sidelobe=sidelobe,
        grid_weights=weights,
        mainlobe_mask=mask,
        loading=scenario.sidelobe_loading,
    )


@dataclass(frozen=True, eq=False)
class ShiftOperators:
    """
    Lag-windowed correlation maps. ``matrices[i]`` is the operator for lag
    ``lags[i]``; the zero lag sits at position ``zero_lag`` (0-based), i.e.
    index ``num_samples + cp_length`` when counted from one.
    """

    matrices: np.ndarray
    combiner: np.ndarray
    lags: np.ndarray

    @property
    def zero_lag(self) -> int:
        return len(self.lags) // 2

    @property
    def zero_lag_operator(self) -> np.ndarray:
        return self.matrices[self.zero_lag]

    @property
    def filter_length(self) -> int:
        return self.matrices.shape[1]

    def apply(self, s: np.ndarray) -> np.ndarray:
        """Aligned windows for every lag, shape (num_lags, filter_length)."""
        return self.matrices @ s

    def responses(self, g: np.ndarray, s: np.ndarray) -> np.ndarray:
        """Filter outputs g^H G_n s for every lag."""
        return self.apply(s) @ g.conj()


def build_shift_operators(scenario: Scenario) -> ShiftOperators:
    num_samples, cp = scenario.num_samples, scenario.cp_length
    length = scenario.filter_length
    a0 = steering_vector(scenario, scenario.target_angle)
    combine = np.kron(np.eye(num_samples), a0[None, :])
    eye = np.eye(num_samples)
    cp_extend = np.vstack([eye[num_samples - cp:], eye])
    combiner = cp_extend @ combine
    lags = np.arange(-(length - 1), length)
    # Row i of the lag-l window reads sample i - l of the extended block.
    matrices = np.stack([np.eye(length, k=-lag) @ combiner for lag in lags])
    matrices.setflags(write=False)
    combiner.setflags(write=False)
    return ShiftOperators(matrices=matrices, combiner=combiner, lags=lags)


@dataclass(frozen=True, eq=False)
class SelectionOperators:
    """Selectors on the stacked variable x = [s; t]."""

    waveform: np.ndarray
    epigraph: np.ndarray

    def basis(self, m: int) -> np.ndarray:
        e = np.zeros(self.waveform.shape[0])
        e[m] = 1.0
        return e

    def stack(self, s: np.ndarray, t: complex) -> np.ndarray:
        return np.concatenate([s, [t]])


def build_selection_operators(scenario: Scenario) -> SelectionOperators:
    n = scenario.num_variables
    waveform = np.hstack([np.eye(n), np.zeros((n, 1))])
    epigraph = np.zeros(n + 1)
    epigraph[-1] = 1.0
    return SelectionOperators(waveform=waveform, epigraph=epigraph)


def dump_matrices(scenario: Scenario, path: Path) -> None:
    """Dense dump of every fixed matrix for debugging (numpy .npz)."""
    bp = build_beampattern_matrices(scenario)
    shifts = build_shift_operators(scenario)
    np.savez_compressed(
        path,
        psi_ml=bp.mainlobe,
        psi_sl=bp.sidelobe,
        shift_operators=shifts.matrices,
        lags=shifts.lags,
        channels=scenario.channels,
        symbols=scenario.symbols,
    )
