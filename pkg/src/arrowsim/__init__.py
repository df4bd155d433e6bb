"""Exactly reversible 2D gas simulator and arrow-of-time experiments."""

from .config import ConfigError, SimConfig, load_config, parse_config
from .dynamics import (BoxGeometry, FixedPointOverflow, ForceField, IntegratorMode, PackingError,
                       ParticleState, Rect, evolve, init_state, reverse_velocities, step, step_back)
from .entropy import CoarseGrid, MacroState, coarse_grain, macroscopic_entropy, phase_volume_check
from .experiments import (ExperimentSeries, run_free_expansion, run_loschmidt, run_recurrence,
                          run_twin_divergence, run_two_vessel_sync)
from .perturbation import CouplingSpec, PerturbationSpec, coupled_step, divergence

__all__ = [
    "BoxGeometry", "CoarseGrid", "ConfigError", "CouplingSpec", "ExperimentSeries", "FixedPointOverflow",
    "ForceField", "IntegratorMode", "MacroState", "PackingError", "ParticleState", "PerturbationSpec",
    "Rect", "SimConfig", "coarse_grain", "coupled_step", "divergence", "evolve", "init_state",
    "load_config", "macroscopic_entropy", "parse_config", "phase_volume_check", "reverse_velocities",
    "run_free_expansion", "run_loschmidt", "run_recurrence", "run_twin_divergence", "run_two_vessel_sync",
    "step", "step_back",
]
