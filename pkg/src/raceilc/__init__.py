"""Iterative learning control for lap-by-lap path tracking of a race vehicle.

Subpackages: track (racing-line profiles and the learning time grid),
vehicle (bicycle-model dynamics and lap simulation), lifted (discrete
closed-loop model and its one-lap matrix map), ilc (learning update laws),
harness (multi-lap experiments and persistence), cli (command line).
"""

from .harness import (
    ExperimentConfig,
    ExperimentResult,
    PdLearner,
    QilcLearner,
    compare_plants,
    gamma_sweep,
    run_experiment,
)
from .ilc import LearningOperator, Weights, pd_operator, qilc_operator, update_input
from .lifted import LiftedSystem, build_lifted, convergence_factor
from .track import (
    SpeedProfile,
    TimeGrid,
    TrackProfile,
    build_time_grid,
    generate_speed_profile,
    load_track,
    scale_profile,
    synthetic_track,
)
from .vehicle import LapRecord, SimConfig, VehicleParams, default_params, simulate_lap

__all__ = [
    "ExperimentConfig",
    "ExperimentResult",
    "PdLearner",
    "QilcLearner",
    "compare_plants",
    "gamma_sweep",
    "run_experiment",
    "LearningOperator",
    "Weights",
    "pd_operator",
    "qilc_operator",
    "update_input",
    "LiftedSystem",
    "build_lifted",
    "convergence_factor",
    "SpeedProfile",
    "TimeGrid",
    "TrackProfile",
    "build_time_grid",
    "generate_speed_profile",
    "load_track",
    "scale_profile",
    "synthetic_track",
    "LapRecord",
    "SimConfig",
    "VehicleParams",
    "default_params",
    "simulate_lap",
]

__version__ = "0.1.0"
