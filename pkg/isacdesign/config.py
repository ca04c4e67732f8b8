"""
Flat JSON configuration: scenario keys, solver keys and their defaults.

A configuration file is a single JSON object. Every key is optional; unknown
keys are rejected. Complex vectors (explicit `channels`, `symbols`) are given
as interleaved real/imaginary arrays, ``[re0, im0, re1, im1, ...]``.
"""

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from isacdesign.errors import ConfigurationError
from isacdesign.model import (
    Constellation,
    Scenario,
    draw_symbols,
    draw_user_channel,
    mainlobe_mask,
    ofdm_channels,
)

SCENARIO_DEFAULTS: Dict[str, Any] = {
    "num_antennas": 4,
    "num_samples": 16,
    "cp_length": 4,
    "element_spacing": 0.5,
    "angle_min": -90.0,
    "angle_max": 90.0,
    "angle_step": 1.0,
    # Explicit list; overrides angle_min/max/step
    "angle_grid": None,
    "mainlobe": [[-10.0, 10.0]],
    "target_angle": 0.0,
    "total_power": 1.0,
    "power_relaxation": 0.25,
    "peak_weight": 0.01,
    "sidelobe_weight": 1.0,
    # None -> 1e-3 * sidelobe_weight
    "proximal_weight": None,
    # None -> 1e-6 * trace(sidelobe part) / dimension
    "sidelobe_loading": None,
    "sinr_threshold": 10.0,
    "noise_power": 0.01,
    "constellation": "psk",
    "modulation_order": 4,
    "num_symbols": 16,
    # None -> subcarriers 0 .. num_symbols - 1
    "subcarriers": None,
    "channel_seed": 0,
    "symbol_seed": 1,
    "channels": None,
    "symbols": None,
}

SOLVER_DEFAULTS: Dict[str, Any] = {
    "ao_max_iter": 30,
    "ao_tol": 1e-5,
    "sca_max_iter": 50,
    "sca_tol": 1e-6,
    "adpm_max_iter": 500,
    "adpm_tol": 1e-5,
    "rho_init": 1.0,
    "rho_growth": 1.1,
    "rho_max": 1e6,
    "root_tol": 1e-10,
    "root_bracket_cap": 1e12,
    "monotone_slack": 1e-8,
    "feasibility_tol": 1e-6,
    "restoration_sweeps": 200,
    "dominance_samples": 1000,
    "subproblem_solver": "adpm",
    "interblock": True,
    "record_adpm": False,
    "seed": 0,
}

SUBPROBLEM_SOLVERS = ("adpm", "cvxpy")


@dataclass(frozen=True)
class SolverConfig:
    ao_max_iter: int = SOLVER_DEFAULTS["ao_max_iter"]
    ao_tol: float = SOLVER_DEFAULTS["ao_tol"]
    sca_max_iter: int = SOLVER_DEFAULTS["sca_max_iter"]
    sca_tol: float = SOLVER_DEFAULTS["sca_tol"]
    adpm_max_iter: int = SOLVER_DEFAULTS["adpm_max_iter"]
    adpm_tol: float = SOLVER_DEFAULTS["adpm_tol"]
    rho_init: float = SOLVER_DEFAULTS["rho_init"]
    rho_growth: float = SOLVER_DEFAULTS["rho_growth"]
    rho_max: float = SOLVER_DEFAULTS["rho_max"]
    root_tol: float = SOLVER_DEFAULTS["root_tol"]
    root_bracket_cap: float = SOLVER_DEFAULTS["root_bracket_cap"]
    monotone_slack: float = SOLVER_DEFAULTS["monotone_slack"]
    feasibility_tol: float = SOLVER_DEFAULTS["feasibility_tol"]
    restoration_sweeps: int = SOLVER_DEFAULTS["restoration_sweeps"]
    dominance_samples: int = SOLVER_DEFAULTS["dominance_samples"]
    subproblem_solver: str = SOLVER_DEFAULTS["subproblem_solver"]
    interblock: bool = SOLVER_DEFAULTS["interblock"]
    record_adpm: bool = SOLVER_DEFAULTS["record_adpm"]
    seed: int = SOLVER_DEFAULTS["seed"]

    def __post_init__(self):
        for name in ("ao_max_iter", "sca_max_iter", "adpm_max_iter"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        for name in (
            "ao_tol",
            "sca_tol",
            "adpm_tol",
            "rho_init",
            "rho_max",
            "root_tol",
            "root_bracket_cap",
            "monotone_slack",
            "feasibility_tol",
        ):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be > 0: {getattr(self, name)}")
        if self.rho_growth < 1:
            raise ConfigurationError(f"rho_growth must be >= 1: {self.rho_growth}")
        if self.rho_max < self.rho_init:
            raise ConfigurationError("rho_max must be >= rho_init")
        if self.restoration_sweeps < 1:
            raise ConfigurationError("restoration_sweeps must be >= 1")
        if self.dominance_samples < 0:
            raise ConfigurationError("dominance_samples must be >= 0")
        if self.subproblem_solver not in SUBPROBLEM_SOLVERS:
            raise ConfigurationError(
                f"subproblem_solver must be one of {SUBPROBLEM_SOLVERS}: "
                f"{self.subproblem_solver!r}"
            )

    def to_json(self) -> Dict[str, Any]:
        return asdict(self)


def interleaved_to_complex(values: List[float]) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or len(values) % 2:
        raise ConfigurationError("Interleaved complex arrays need an even length")
    return values[0::2] + 1j * values[1::2]


def complex_to_interleaved(values: np.ndarray) -> List[float]:
    values = np.asarray(values, dtype=complex).ravel()
    out = np.empty(2 * len(values))
    out[0::2] = values.real
    out[1::2] = values.imag
    return out.tolist()


def _angle_grid(conf: Dict[str, Any]) -> np.ndarray:
    if conf["angle_grid"] is not None:
        return np.asarray(conf["angle_grid"], dtype=float)
    step = float(conf["angle_step"])
    if step <= 0:
        raise ConfigurationError(f"angle_step must be > 0: {step}")
    count = int(np.floor((conf["angle_max"] - conf["angle_min"]) / step + 1e-9)) + 1
    return conf["angle_min"] + step * np.arange(count)


def scenario_from_dict(conf: Dict[str, Any]) -> Scenario:
    """Builds a Scenario from already merged (defaulted) scenario keys."""
    constellation = Constellation(
        kind=str(conf["constellation"]).lower(), order=int(conf["modulation_order"])
    )
    num_antennas = int(conf["num_antennas"])
    num_samples = int(conf["num_samples"])
    grid = _angle_grid(conf)
    mainlobe = tuple((float(lo), float(hi)) for lo, hi in conf["mainlobe"])

    if conf["symbols"] is not None:
        symbols = interleaved_to_complex(conf["symbols"])
        symbol_seed = None
    else:
        count = int(conf["num_symbols"])
        if count < 0:
            raise ConfigurationError(f"num_symbols must be >= 0: {count}")
        symbols = draw_symbols(constellation, count, int(conf["symbol_seed"]))
        symbol_seed = int(conf["symbol_seed"])

    if conf["channels"] is not None:
        flat = interleaved_to_complex(conf["channels"])
        n = num_antennas * num_samples
        if len(flat) != len(symbols) * n:
            raise ConfigurationError(
                f"channels must hold {len(symbols)} x {n} complex entries"
            )
        channels = flat.reshape(len(symbols), n)
    elif len(symbols) == 0:
        channels = np.zeros((0, num_antennas * num_samples), dtype=complex)
    else:
        subcarriers = conf["subcarriers"]
        if subcarriers is None:
            if len(symbols) > num_samples:
                raise ConfigurationError(
                    "num_symbols exceeds num_samples; give subcarriers or channels"
                )
            subcarriers = list(range(len(symbols)))
        if len(subcarriers) != len(symbols):
            raise ConfigurationError("subcarriers must list one entry per symbol")
        channels = ofdm_channels(
            num_antennas,
            num_samples,
            subcarriers,
            draw_user_channel(num_antennas, int(conf["channel_seed"])),
        )

    sidelobe_weight = float(conf["sidelobe_weight"])
    proximal_weight = conf["proximal_weight"]
    if proximal_weight is None:
        proximal_weight = 1e-3 * sidelobe_weight if sidelobe_weight > 0 else 1e-3
    loading = conf["sidelobe_loading"]
    if loading is None:
        # trace(I kron a a^H) / dimension is 1 per unit-weight angle
        loading = 1e-6 * max(int((~mainlobe_mask(grid, mainlobe)).sum()), 1)

    return Scenario(
        num_antennas=num_antennas,
        num_samples=num_samples,
        cp_length=int(conf["cp_length"]),
        element_spacing=float(conf["element_spacing"]),
        angle_grid=grid,
        mainlobe=mainlobe,
        target_angle=float(conf["target_angle"]),
        total_power=float(conf["total_power"]),
        power_relaxation=float(conf["power_relaxation"]),
        peak_weight=float(conf["peak_weight"]),
        sidelobe_weight=sidelobe_weight,
        proximal_weight=float(proximal_weight),
        sidelobe_loading=float(loading),
        sinr_threshold=float(conf["sinr_threshold"]),
        noise_power=float(conf["noise_power"]),
        constellation=constellation,
        channels=channels,
        symbols=symbols,
        symbol_seed=symbol_seed,
    )


def split_config(
    raw: Dict[str, Any]
) -> Tuple[Dict[str, Any], Dict[str, Any]]:
    """Separates scenario and solver keys, filling in the defaults."""
    if not isinstance(raw, dict):
        raise ConfigurationError("The configuration must be a JSON object")
    unknown = set(raw) - set(SCENARIO_DEFAULTS) - set(SOLVER_DEFAULTS)
    if unknown:
        raise ConfigurationError(f"Unknown configuration keys: {sorted(unknown)}")
    scenario_conf = {k: raw.get(k, v) for k, v in SCENARIO_DEFAULTS.items()}
    solver_conf = {k: raw.get(k, v) for k, v in SOLVER_DEFAULTS.items()}
    return scenario_conf, solver_conf


def parse_config(raw: Dict[str, Any]) -> Tuple[Scenario, SolverConfig]:
    scenario_conf, solver_conf = split_config(raw)
    try:
        return scenario_from_dict(scenario_conf), SolverConfig(**solver_conf)
    except (TypeError, KeyError) as e:
        raise ConfigurationError(f"Malformed configuration: {e}") from e


def read_config(
    path: Optional[Union[str, Path]], overrides: Optional[Dict[str, Any]] = None
) -> Dict[str, Any]:
    raw: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"Configuration file {path} does not exist")
        try:
            raw = json.load(path.open())
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"{path} is not valid JSON: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigurationError(f"{path} must hold a JSON object")
    if overrides:
        raw = {**raw, **overrides}
    return raw


def load_config(
    path: Optional[Union[str, Path]], overrides: Optional[Dict[str, Any]] = None
) -> Tuple[Scenario, SolverConfig]:
    return parse_config(read_config(path, overrides))


def parse_json_option(value: str, name: str, kind: type = dict) -> Any:
    """Decodes a JSON command line option such as --overrides or --snr-grid."""
    try:
        decoded = json.loads(value)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{name} should be valid JSON: {e}") from e
    if not isinstance(decoded, kind):
        raise ConfigurationError(f"{name} should be a JSON {kind.__name__}")
    return decoded


@dataclass(frozen=True)
class RunConfig:
    """Command level options shared by the runners."""

    config_path: Optional[Path]
    output_dir: Path
    num_blocks: int = 3
    seed: int = 0
    threads: int = 1
    snr_grid: Tuple[float, ...] = (0.0, 5.0, 10.0, 15.0, 20.0)
    trials: int = 10000
    # validate only
    suite_filter: str = "all"
    tolerance_scale: float = 1.0

    def __post_init__(self):
        if not self.tolerance_scale > 0:
            raise ConfigurationError(
                f"tolerance_scale must be > 0: {self.tolerance_scale}"
            )
        if self.config_path is not None and not Path(self.config_path).is_file():
            raise ConfigurationError(f"{self.config_path} does not exist")
        if self.num_blocks < 1:
            raise ConfigurationError(f"num_blocks must be >= 1: {self.num_blocks}")
        if self.threads < 1:
            raise ConfigurationError(f"threads must be >= 1: {self.threads}")
        if self.trials < 1:
            raise ConfigurationError(f"trials must be >= 1: {self.trials}")
