"""Multi-lap learning experiments, gain sweeps and result persistence.

An experiment runs M laps on either the nonlinear plant (continuous bicycle
model with brush tires) or the linear plant (the discrete closed-loop model
rolled sample by sample), applying the learning update between laps.  Lap 0
always runs with zero learned input.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Union

import numpy as np
from numpy.linalg import LinAlgError
import yaml

from . import ilc, lifted, track as track_mod, vehicle

FORMAT_VERSION = 1
GAMMA_MAX_N = 400  # larger laps skip the convergence factor (SVD cost)
DEFAULT_SEED = 0


class ConfigError(ValueError):
    """Raised for unusable experiment configuration."""


class LapDivergenceError(vehicle.DivergenceError):
    """Simulation divergence, annotated with the lap that blew up."""

    def __init__(self, lap: int, message: str):
        super().__init__(f"lap {lap}: {message}")
        self.lap = lap


@dataclass(frozen=True)
class PdLearner:
    k_p: float = 0.02
    k_d: float = 0.28
    cutoff_hz: Optional[float] = 0.5


@dataclass(frozen=True)
class QilcLearner:
    t: float = 1.0
    r: float = 1.0
    s: float = 100.0


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one multi-lap experiment."""

    track: str = "synthetic"  # file path or the bundled synthetic circuit
    accel: Optional[float] = 8.0  # m/s^2; None uses the track file's speeds
    v_max: float = 45.0
    plant: str = "nonlinear"  # nonlinear (brush-tire sim) | linear (discrete model)
    learner: Union[PdLearner, QilcLearner] = field(default_factory=PdLearner)
    laps: int = 10
    sample_time: float = 0.1
    noise_std: float = 0.0
    noise_seed: int = DEFAULT_SEED
    feedforward: bool = True

    def __post_init__(self):
        if self.laps < 1:
            raise ConfigError("laps must be at least 1")
        if self.accel is not None and self.accel <= 0.0:
            raise ConfigError("accel must be positive")
        if self.plant not in ("linear", "nonlinear"):
            raise ConfigError(f"unknown plant {self.plant!r}")
        if self.sample_time <= 0.0:
            raise ConfigError("sample_time must be positive")
        if self.noise_std < 0.0:
            raise ConfigError("noise_std must be nonnegative")


@dataclass(frozen=True)
class ExperimentResult:
    laps: list
    rms_by_lap: np.ndarray
    gamma: Optional[float]
    config: ExperimentConfig
    wall_time_s: float
    distances: np.ndarray  # sample-start s (m), shared by every lap


def rms(errors) -> float:
    errors = np.asarray(errors, dtype=float)
    if errors.size < 1:
        raise ValueError("rms needs at least one sample")
    return float(np.sqrt(np.mean(errors**2)))


# ---------------------------------------------------------------------------
# Config file layer (YAML key/value mirroring ExperimentConfig)

def config_to_dict(config: ExperimentConfig) -> dict:
    d = asdict(config)
    d["learner"] = {"kind": "pd" if isinstance(config.learner, PdLearner) else "qilc"}
    d["learner"].update(asdict(config.learner))
    d["format_version"] = FORMAT_VERSION
    return d


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    data = dict(data)
    version = data.pop("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise ConfigError(f"unsupported format_version {version!r}")
    learner_data = data.pop("learner", None)
    if not isinstance(learner_data, dict) or "kind" not in learner_data:
        raise ConfigError("config needs learner: {kind: pd|qilc, ...}")
    learner_data = dict(learner_data)
    kind = learner_data.pop("kind")
    try:
        if kind == "pd":
            learner = PdLearner(**learner_data)
        elif kind == "qilc":
            learner = QilcLearner(**learner_data)
        else:
            raise ConfigError(f"unknown learner kind {kind!r}")
        return ExperimentConfig(learner=learner, **data)
    except TypeError as exc:
        raise ConfigError(f"bad config field: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid config syntax: {exc}") from exc
    return config_from_dict(data)


# ---------------------------------------------------------------------------
# Experiment setup and execution

def load_profiles(config: ExperimentConfig):
    """Resolve the configured track and speed profile."""
    if config.track == "synthetic":
        profile = track_mod.synthetic_track()
        file_speed = None
    else:
        profile, file_speed = track_mod.load_track(config.track)
    if config.accel is not None:
        speed = track_mod.generate_speed_profile(profile, config.accel, config.v_max)
    elif file_speed is not None:
        speed = file_speed
    else:
        raise ConfigError("config has accel: null but the track file has no speeds")
    return profile, speed


@dataclass(frozen=True)
class ExperimentSetup:
    """Prebuilt geometry, model and operator shared by the laps of a run."""

    track: track_mod.TrackProfile
    speed: track_mod.SpeedProfile
    grid: track_mod.TimeGrid
    ltv: lifted.LtvMatrices
    system: lifted.LiftedSystem
    operator: ilc.LearningOperator
    params: vehicle.VehicleParams
    feedforward: np.ndarray  # per-sample steer fed to the linear plant


def _feedforward_samples(
    grid: track_mod.TimeGrid,
    profile: track_mod.TrackProfile,
    params: vehicle.VehicleParams,
) -> np.ndarray:
    # sampled at mid-sample points, matching where the discrete model holds
    # its matrices
    s_mid, u_mid = lifted._mid_sample_points(grid, profile)
    kappa = track_mod.sample_at_distance(profile, s_mid)
    return np.array(
        [vehicle.feedforward_steer(k, u, params) for k, u in zip(kappa, u_mid)]
    )


def build_setup(config: ExperimentConfig) -> ExperimentSetup:
    params = vehicle.default_params()
    profile, speed = load_profiles(config)
    grid = track_mod.build_time_grid(profile, speed, config.sample_time)
    ltv = lifted.build_ltv(grid, profile, params)
    system = lifted.build_lifted_from_ltv(ltv, grid)
    if isinstance(config.learner, PdLearner):
        operator = ilc.pd_operator(
            config.learner.k_p,
            config.learner.k_d,
            grid.n,
            config.learner.cutoff_hz,
            config.sample_time,
        )
    else:
        weights = ilc.Weights(t=config.learner.t, r=config.learner.r, s=config.learner.s)
        operator = ilc.qilc_operator(system, weights)
    feedforward = (
        _feedforward_samples(grid, profile, params)
        if config.feedforward
        else np.zeros(grid.n)
    )
    return ExperimentSetup(
        profile, speed, grid, ltv, system, operator, params, feedforward
    )


def _run_lap(setup: ExperimentSetup, config: ExperimentConfig, delta, j: int):
    if config.plant == "nonlinear":
        sim = vehicle.SimConfig(
            tire_model="fiala",
            include_feedforward=config.feedforward,
            sensor_noise_std=config.noise_std,
        )
        try:
            return vehicle.simulate_lap(
                setup.track,
                setup.speed,
                setup.grid,
                setup.params,
                sim,
                delta,
                iteration=j,
                noise_seed=config.noise_seed + j,
            )
        except vehicle.DivergenceError as exc:
            raise LapDivergenceError(j, str(exc)) from exc
    errors = lifted.rollout_errors(setup.ltv, delta + setup.feedforward)
    if config.noise_std > 0.0:
        rng = np.random.default_rng(config.noise_seed + j)
        errors = errors + rng.normal(0.0, config.noise_std, setup.grid.n)
    if np.max(np.abs(errors)) > vehicle.DIVERGENCE_LIMIT:
        raise LapDivergenceError(j, "linear rollout exceeded the blow-up guard")
    return vehicle.LapRecord.from_errors(errors, delta, j)


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run M laps, learning between laps; lap 0 uses zero learned input."""
    start = time.perf_counter()
    setup = build_setup(config)
    delta = np.zeros(setup.grid.n)
    records = []
    for j in range(config.laps):
        record = _run_lap(setup, config, delta, j)
        records.append(record)
        if j + 1 < config.laps:
            delta = ilc.update_input(setup.operator, delta, record.errors)
    gamma = None
    if setup.grid.n <= GAMMA_MAX_N:
        try:
            gamma = lifted.convergence_factor(
                setup.system.p, setup.operator.q, setup.operator.l
            )
        except LinAlgError:
            gamma = None
    return ExperimentResult(
        laps=records,
        rms_by_lap=np.array([r.rms_error for r in records]),
        gamma=gamma,
        config=config,
        wall_time_s=time.perf_counter() - start,
        distances=setup.grid.distances,
    )


def compare_plants(
    config: ExperimentConfig, plants: tuple[str, str] = ("linear", "nonlinear")
) -> tuple[ExperimentResult, ExperimentResult, np.ndarray]:
    """Run the same experiment on two plants; returns both results and the
    per-lap RMS differences (second minus first)."""
    first = run_experiment(replace(config, plant=plants[0]))
    second = run_experiment(replace(config, plant=plants[1]))
    return first, second, second.rms_by_lap - first.rms_by_lap


# ---------------------------------------------------------------------------
# Gamma sweep

@dataclass(frozen=True)
class SweepCell:
    k_p: float
    k_d: float
    gamma: float  # inf marks a singular build
    stable: bool


def gamma_sweep(
    kp_values,
    kd_values,
    *,
    filter_hz: Optional[float],
    system: lifted.LiftedSystem,
) -> list[SweepCell]:
    """Convergence factor of the PD law over a grid of gains.

    The filter matrix is built once (it does not depend on the gains); each
    cell computes gamma on the supplied lifted system, which may be a
    constant-speed window or a full varying-speed lap.
    """
    n = system.grid.n
    ts = system.grid.sample_time
    q = (
        np.eye(n)
        if filter_hz is None
        else ilc.zero_phase_filter(filter_hz, ts, n)
    )
    cells = []
    for kp in kp_values:
        for kd in kd_values:
            op_l = ilc.pd_operator(kp, kd, n, None, ts).l
            try:
                g = lifted.convergence_factor(system.p, q, op_l)
            except LinAlgError:
                g = float("inf")
            cells.append(SweepCell(float(kp), float(kd), g, bool(g < 1.0)))
    return cells


# ---------------------------------------------------------------------------
# Persistence

def _float_str(x: float) -> str:
    return repr(float(x))


def export_result(result: ExperimentResult, path, fmt: str = "csv") -> None:
    """Write an experiment result deterministically.

    csv: one row per (lap, sample) with columns lap,k,s_m,e_m,delta_L_rad.
    json: the full result including the config echo.  Wall time is not
    exported so identical runs produce identical bytes.
    """
    if fmt == "csv":
        with open(path, "w", newline="") as f:
            f.write(f"# format_version: {FORMAT_VERSION}\n")
            f.write("lap,k,s_m,e_m,delta_L_rad\n")
            for record in result.laps:
                for k in range(record.errors.size):
                    f.write(
                        f"{record.iteration},{k},{_float_str(result.distances[k])},"
                        f"{_float_str(record.errors[k])},{_float_str(record.inputs[k])}\n"
                    )
    elif fmt == "json":
        payload = {
            "format_version": FORMAT_VERSION,
            "config": config_to_dict(result.config),
            "gamma": result.gamma,
            "rms_by_lap": [float(v) for v in result.rms_by_lap],
            "laps": [
                {
                    "iteration": r.iteration,
                    "rms_error": float(r.rms_error),
                    "peak_error": float(r.peak_error),
                    "errors": [float(v) for v in r.errors],
                    "inputs": [float(v) for v in r.inputs],
                }
                for r in result.laps
            ],
        }
        with open(path, "w") as f:
            json.dump(payload, f, indent=1, sort_keys=True)
            f.write("\n")
    else:
        raise ValueError(f"unknown export format {fmt!r}")


def load_result_json(path) -> dict:
    with open(path) as f:
        data = json.load(f)
    if data.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format_version")
    return data


def write_sweep_csv(path, cells: list[SweepCell]) -> None:
    with open(path, "w", newline="") as f:
        f.write(f"# format_version: {FORMAT_VERSION}\n")
        f.write("kp,kd,gamma,stable\n")
        for cell in cells:
            f.write(
                f"{_float_str(cell.k_p)},{_float_str(cell.k_d)},"
                f"{_float_str(cell.gamma)},{int(cell.stable)}\n"
            )
