"""Unsteady incompressible Stokes flow in a channel with Tresca or history-dependent Coulomb slip walls."""
from .coulomb import CoulombConfig, IterationTrace, solve_coulomb, update_threshold, window_length
from .errors import (
    ConfigurationError,
    DataError,
    FrictionStokesError,
    GeometryError,
    IncompatibleDataError,
    NonContractionError,
    ScenarioError,
    StepError,
    UsageError,
)
from .fem import WallData, assemble_operators, build_spaces
from .friction import ThresholdField, complementarity_residual, friction_energy, friction_force
from .functions import Builtin
from .io import parse_scenario, scenario_to_toml, write_outputs
from .mesh import BoundaryTag, DomainSpec, build_mesh
from .scenario import CoulombSpec, Scenario, VerifySettings
from .stepping import RunConfig, discretize, run_tresca
from .stress import Mollifier, regularized_normal_trace
from .verification import couette_oracle, energy_budget, eps_convergence_study, order_study

__all__ = [
    "BoundaryTag",
    "Builtin",
    "ConfigurationError",
    "CoulombConfig",
    "CoulombSpec",
    "DataError",
    "DomainSpec",
    "FrictionStokesError",
    "GeometryError",
    "IncompatibleDataError",
    "IterationTrace",
    "Mollifier",
    "NonContractionError",
    "RunConfig",
    "Scenario",
    "ScenarioError",
    "StepError",
    "ThresholdField",
    "UsageError",
    "VerifySettings",
    "WallData",
    "assemble_operators",
    "build_mesh",
    "build_spaces",
    "complementarity_residual",
    "couette_oracle",
    "discretize",
    "energy_budget",
    "eps_convergence_study",
    "friction_energy",
    "friction_force",
    "order_study",
    "parse_scenario",
    "regularized_normal_trace",
    "run_tresca",
    "scenario_to_toml",
    "solve_coulomb",
    "update_threshold",
    "window_length",
    "write_outputs",
]
