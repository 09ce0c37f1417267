"""Spectral Galerkin simulation of a stochastic two-phase Stefan problem with transport noise."""
from .basis import BasisSpec, SpectralBasis
from .enthalpy import EnthalpyModel, ModelRejected, PhysicalParams
from .galerkin import BlowUp, GalerkinSystem
from .noise import AssumptionRejected, NoiseModel, NoiseSpec, NoiseUnavailable
from .simulation import SimConfig, Trajectory, prepare, simulate, simulate_ensemble

__version__ = "0.1.0"

__all__ = [
    "AssumptionRejected", "BasisSpec", "BlowUp", "EnthalpyModel", "GalerkinSystem", "ModelRejected",
    "NoiseModel", "NoiseSpec", "NoiseUnavailable", "PhysicalParams", "SimConfig", "SpectralBasis",
    "Trajectory", "prepare", "simulate", "simulate_ensemble",
]
