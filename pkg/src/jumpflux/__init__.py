"""Pathwise-coupled Monte Carlo harness for sampled-data linear systems
perturbed by small Brownian and compensated-Poisson noise."""

__version__ = "0.1.0"

from .errors import (
    DegenerateFitError,
    GridMismatchError,
    JumpfluxError,
    SimulationConfigError,
    UnsupportedFamilyError,
    UnsupportedMeasureError,
)
from .linalg import Propagator, expm, mat_one_norm, one_norm, propagator
from .noise import (
    JumpTrain,
    LevyMeasureSpec,
    NoiseRecord,
    PathStreams,
    TimeGrid,
    build_grid,
    build_noise_record,
    compensator_mean,
    sample_brownian,
    sample_prm,
)
from .systems import (
    DiffusionFamily,
    JumpFamily,
    Model,
    PathBundle,
    RegimeSchedule,
    SystemSpec,
    default_step_limit,
    rescale_fluctuation,
    simulate_coupled_bundle,
    simulate_jump_diffusion,
    simulate_limit_fluctuation,
    solve_closed_loop,
    solve_sampled_hold,
)
from .analysis import (
    ExperimentPoint,
    HoldDecomposition,
    RateReport,
    decompose_held_gap,
    fit_loglog_rate,
    mc_moment,
    mc_points,
    monotone_within_ci,
    sampling_drift_path,
    sup_norm_gap,
)

__all__ = [name for name in dir() if not name.startswith("_")]
