"""Variational finite element scheme for polyconvex elastodynamics on the 3-torus."""

from .energy import EnergyParams, PowerLawEnergy, check_hypotheses, default_model
from .entropy import EquilibriumReference, Interpolants, TranslationReference, identity_terms, relative_entropy
from .fe import Discretization, DiscreteState, constant_state, init_from_deformation
from .mesh import build_uniform
from .runner import RunConfig, parse_config, refinement_study, run_experiment
from .stepper import StepConfig, run, solve_step

__all__ = [
    "Discretization",
    "DiscreteState",
    "EnergyParams",
    "EquilibriumReference",
    "Interpolants",
    "PowerLawEnergy",
    "RunConfig",
    "StepConfig",
    "TranslationReference",
    "build_uniform",
    "check_hypotheses",
    "constant_state",
    "default_model",
    "identity_terms",
    "init_from_deformation",
    "parse_config",
    "refinement_study",
    "relative_entropy",
    "run",
    "run_experiment",
    "solve_step",
]
