"""Shared domain types: physical parameters, classical and quantum state containers.

All rates are expressed in units of the two-boson damping rate, which is
therefore stored as 1.0. The oscillator Hilbert space is truncated at four
bosons (five Fock levels); density matrices are kept Hermitian structurally
by storing only the lower triangle and mirroring on read.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidFraction, NegativeRate, NonzeroDetuning, ParamsError

# Fock levels 0..4 for every oscillator mode in the quantum regime.
OSC_DIM = 5
ATOM_DIM = 2

# kappa/min(a,b) below this ratio counts as the classical regime.
CLASSICAL_CAPABLE_RATIO = 0.05


@dataclass(frozen=True)
class SystemParams:
    """Physical rates and counts, all in units of the two-boson damping rate.

    a, b   : linear gain (active) / loss (inactive) rate
    kappa  : two-boson damping rate, the unit scale (must stay 1.0)
    V      : dissipative inter-oscillator coupling
    g      : coherent atom-oscillator coupling
    J      : atom decay rate
    N      : total number of oscillators
    p      : inactive fraction N_i/N
    delta  : atom-oscillator detuning; the model works on resonance, so 0
    """

    a: float
    b: float
    V: float
    g: float
    J: float
    N: int
    p: float
    kappa: float = 1.0
    delta: float = 0.0

    @property
    def q(self) -> float:
        return 1.0 - self.p

    @property
    def classical_capable(self) -> bool:
        lo = min(self.a, self.b)
        return lo > 0.0 and self.kappa / lo < CLASSICAL_CAPABLE_RATIO

    def with_p(self, p: float) -> "SystemParams":
        return replace(self, p=p)


def validate_params(params: SystemParams) -> SystemParams:
    """Check all parameter invariants; returns the params unchanged if valid."""
    for name in ("a", "b", "kappa", "V", "g", "J"):
        if getattr(params, name) < 0.0:
            raise NegativeRate(f"{name} must be >= 0, got {getattr(params, name)}")
    if params.kappa != 1.0:
        raise ParamsError(
            "kappa is the unit scale and must be 1.0; express all rates in units of kappa"
        )
    if not isinstance(params.N, int) or params.N < 1:
        raise ParamsError(f"N must be a positive integer, got {params.N!r}")
    if not 0.0 <= params.p <= 1.0:
        raise InvalidFraction(f"p must lie in [0, 1], got {params.p}")
    if params.delta != 0.0:
        raise NonzeroDetuning("the model is formulated on resonance (delta = 0)")
    return params


@dataclass(frozen=True)
class ClassicalState:
    """Mean-field variables: atom coherence and population, group amplitudes."""

    sigma_minus: complex
    sigma_ee: float
    A: complex
    I: complex

    def bloch_excess(self) -> float:
        """How far the atom variables poke out of the Bloch ball (<=0 inside)."""
        return abs(self.sigma_minus) ** 2 - self.sigma_ee * (1.0 - self.sigma_ee)


def check_classical_state(state: ClassicalState, tol: float = 1e-4) -> None:
    if not -tol <= state.sigma_ee <= 1.0 + tol:
        raise ParamsError(f"sigma_ee outside [0, 1]: {state.sigma_ee}")
    if state.bloch_excess() > tol:
        raise ParamsError(
            f"Bloch consistency violated: |sigma_minus|^2 exceeds sigma_ee(1-sigma_ee) "
            f"by {state.bloch_excess():.3g}"
        )


def _tri_indices(dim: int) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = np.tril_indices(dim)
    return rows, cols


class DensityMatrix:
    """Hermitian, unit-trace matrix stored as its lower triangle.

    The stored representation is the packed lower triangle (diagonal kept
    real); the full matrix is reconstructed on read, so any matrix handed
    out is Hermitian by construction.
    """

    __slots__ = ("dim", "_packed")

    def __init__(self, dim: int, packed: np.ndarray):
        self.dim = dim
        self._packed = packed

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, herm_tol: float = 1e-12) -> "DensityMatrix":
        matrix = np.asarray(matrix, dtype=complex)
        dim = matrix.shape[0]
        if matrix.shape != (dim, dim):
            raise ParamsError(f"density matrix must be square, got {matrix.shape}")
        asym = np.max(np.abs(matrix - matrix.conj().T))
        if asym > herm_tol:
            raise ParamsError(f"matrix is not Hermitian within {herm_tol} (max dev {asym:.3g})")
        rows, cols = _tri_indices(dim)
        packed = matrix[rows, cols].copy()
        packed[rows == cols] = packed[rows == cols].real
        return cls(dim, packed)

    @classmethod
    def vacuum(cls, dim: int) -> "DensityMatrix":
        m = np.zeros((dim, dim), dtype=complex)
        m[0, 0] = 1.0
        return cls.from_matrix(m)

    @classmethod
    def fock(cls, dim: int, n: int) -> "DensityMatrix":
        m = np.zeros((dim, dim), dtype=complex)
        m[n, n] = 1.0
        return cls.from_matrix(m)

    @classmethod
    def atom(cls, excited: bool) -> "DensityMatrix":
        """Two-level atom state in the (ground, excited) basis."""
        m = np.zeros((2, 2), dtype=complex)
        m[1 if excited else 0, 1 if excited else 0] = 1.0
        return cls.from_matrix(m)

    @property
    def packed(self) -> np.ndarray:
        return self._packed

    @property
    def matrix(self) -> np.ndarray:
        rows, cols = _tri_indices(self.dim)
        full = np.zeros((self.dim, self.dim), dtype=complex)
        full[rows, cols] = self._packed
        off = rows != cols
        full[cols[off], rows[off]] = np.conj(self._packed[off])
        return full

    @property
    def trace(self) -> float:
        rows, cols = _tri_indices(self.dim)
        return float(np.sum(self._packed[rows == cols].real))

    @property
    def populations(self) -> np.ndarray:
        rows, cols = _tri_indices(self.dim)
        return self._packed[rows == cols].real.copy()

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])

    def check(self, trace_tol: float = 1e-8, psd_tol: float = -1e-8) -> None:
        if abs(self.trace - 1.0) > trace_tol:
            raise ParamsError(f"trace {self.trace} deviates from 1 beyond {trace_tol}")
        lo = self.min_eigenvalue()
        if lo < psd_tol:
            raise ParamsError(f"negative eigenvalue {lo} below tolerance {psd_tol}")

    def __repr__(self) -> str:
        return f"DensityMatrix(dim={self.dim}, populations={np.round(self.populations, 6)})"


@dataclass(frozen=True)
class QuantumState:
    """Factorized one-body states: the atom and one representative per group."""

    atom: DensityMatrix
    active: DensityMatrix
    inactive: DensityMatrix

    def check(self) -> None:
        for part in (self.atom, self.active, self.inactive):
            part.check()


def coherent_amplitude_to_fock(alpha: complex, dim: int = OSC_DIM) -> DensityMatrix:
    """Coherent state |alpha> projected onto the truncated Fock space.

    The truncated amplitude vector (proportional to alpha^n / sqrt(n!)) is
    renormalized, so the result is always a pure unit-trace state.
    """
    if abs(alpha) > 5.0:
        raise ParamsError(f"|alpha| must be <= 5 (got {abs(alpha)})")
    n = np.arange(dim)
    amps = np.asarray(
        [alpha**k / math.sqrt(math.factorial(k)) for k in n], dtype=complex
    )
    amps /= np.linalg.norm(amps)
    return DensityMatrix.from_matrix(np.outer(amps, amps.conj()))
