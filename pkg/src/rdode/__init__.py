"""Stationary patterns, spectra and dynamics of reaction-diffusion-ODE systems on an interval."""
from .kinetics import DomainError, KineticModel, ParameterError, builtin, expression_model

__all__ = ["DomainError", "KineticModel", "ParameterError", "builtin", "expression_model"]
__version__ = "0.1.0"
