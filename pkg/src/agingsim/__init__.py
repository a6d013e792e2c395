"""Aging transitions in coupled active/inactive oscillators with a lossy atom."""

from .model import (
    ClassicalState,
    DensityMatrix,
    QuantumState,
    SystemParams,
    coherent_amplitude_to_fock,
    validate_params,
)

__version__ = "0.1.0"

__all__ = [
    "ClassicalState",
    "DensityMatrix",
    "QuantumState",
    "SystemParams",
    "coherent_amplitude_to_fock",
    "validate_params",
    "__version__",
]
