"""Quantum mean-field dynamics of the factorized atom-oscillator system.

One representative density matrix per oscillator group plus the atom,
coupled through self-consistent mean fields that are recomputed at every
integrator stage. Oscillator operators live in a hard-truncated Fock space:
raising out of the top level is annihilated, which keeps every dissipator
exactly trace preserving.

Density matrices are evolved in a packed lower-triangle representation
(diagonal kept exactly real), so Hermiticity is structural rather than
enforced by symmetrization. The integrator is batched over independent
parameter points, like the classical one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvariantViolation, NoConvergence, NoKnee, RegimeViolation
from .model import OSC_DIM, DensityMatrix, QuantumState, SystemParams, coherent_amplitude_to_fock

DT_DEFAULT = 5e-3
STEADY_TOL = 1e-9
STEADY_T_MAX = 2000.0
CHECK_EVERY = 100
TRACE_TOL = 1e-6
NEG_TOL = -1e-6
SAMPLES_PER_HORIZON = 500
ADIABATIC_MIN_J_OVER_G = 20.0


# ---------------------------------------------------------------------------
# operators and packing helpers (cached per dimension)


@lru_cache(maxsize=None)
def lowering_operator(dim: int) -> np.ndarray:
    a = np.zeros((dim, dim), dtype=complex)
    for j in range(dim - 1):
        a[j, j + 1] = math.sqrt(j + 1)
    a.setflags(write=False)
    return a


@lru_cache(maxsize=None)
def _pack_info(dim: int):
    rows, cols = np.tril_indices(dim)
    diag_pos = np.flatnonzero(rows == cols)
    off_pos = np.flatnonzero(rows != cols)
    sub1_pos = np.array([np.flatnonzero((rows == j + 1) & (cols == j))[0] for j in range(dim - 1)])
    sub1_weights = np.sqrt(np.arange(1, dim, dtype=float))
    level_weights = np.arange(dim, dtype=float)
    return rows, cols, diag_pos, off_pos, sub1_pos, sub1_weights, level_weights


def pack(full: np.ndarray) -> np.ndarray:
    """Lower triangle of a stack of matrices, diagonal forced exactly real."""
    dim = full.shape[-1]
    rows, cols, diag_pos, _, _, _, _ = _pack_info(dim)
    packed = full[..., rows, cols].copy()
    packed[..., diag_pos] = packed[..., diag_pos].real
    return packed


def unpack(packed: np.ndarray, dim: int) -> np.ndarray:
    """Full Hermitian matrices from packed lower triangles."""
    rows, cols, _, off_pos, _, _, _ = _pack_info(dim)
    shape = packed.shape[:-1] + (dim, dim)
    full = np.zeros(shape, dtype=complex)
    full[..., rows, cols] = packed
    full[..., cols[off_pos], rows[off_pos]] = np.conj(packed[..., off_pos])
    return full


def packed_size(dim: int) -> int:
    return dim * (dim + 1) // 2


def _superop_left(X: np.ndarray) -> np.ndarray:
    return np.kron(X, np.eye(X.shape[0]))


def _superop_right(X: np.ndarray) -> np.ndarray:
    return np.kron(np.eye(X.shape[0]), X.T)


def dissipator_superop(O: np.ndarray) -> np.ndarray:
    """Matrix of rho -> O rho O^dag - (O^dag O rho + rho O^dag O)/2 on vec(rho)."""
    OdO = O.conj().T @ O
    return (
        np.kron(O, O.conj())
        - 0.5 * _superop_left(OdO)
        - 0.5 * _superop_right(OdO)
    )


def commutator_superop(X: np.ndarray) -> np.ndarray:
    return _superop_left(X) - _superop_right(X)


@lru_cache(maxsize=None)
def _osc_superops(dim: int):
    a = lowering_operator(dim)
    ad = a.conj().T
    a2 = a @ a
    return (
        dissipator_superop(ad),
        dissipator_superop(a),
        dissipator_superop(a2),
        commutator_superop(ad),
        commutator_superop(a),
    )


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class MeanFields:
    M_total: complex
    M_A: complex
    M_I: complex


@dataclass(frozen=True)
class FockDistribution:
    populations: np.ndarray
    coherences_present: bool

    def check(self, sum_tol: float = 1e-8, neg_tol: float = -1e-10) -> None:
        if abs(self.populations.sum() - 1.0) > sum_tol:
            raise InvariantViolation(f"populations sum to {self.populations.sum()}")
        if self.populations.min() < neg_tol:
            raise InvariantViolation(f"negative population {self.populations.min()}")


def fock_distribution(rho: DensityMatrix, coh_tol: float = 1e-10) -> FockDistribution:
    full = rho.matrix
    off = full - np.diag(np.diag(full))
    return FockDistribution(
        populations=rho.populations,
        coherences_present=bool(np.max(np.abs(off)) > coh_tol),
    )


# ---------------------------------------------------------------------------
# mean fields and pointwise operations


def _trace_a_packed(packed: np.ndarray, dim: int) -> np.ndarray:
    """Tr(a rho) for a batch of packed matrices: weighted first subdiagonal."""
    _, _, _, _, sub1_pos, sub1_w, _ = _pack_info(dim)
    return packed[..., sub1_pos] @ sub1_w


def _number_packed(packed: np.ndarray, dim: int) -> np.ndarray:
    rows, cols, diag_pos, _, _, _, lvl = _pack_info(dim)
    return packed[..., diag_pos].real @ lvl


def mean_fields(state: QuantumState, params: SystemParams) -> MeanFields:
    """Self-consistent mean fields; the exclusion sums are exact differences."""
    tr_A = complex(_trace_a_packed(state.active.packed, state.active.dim))
    tr_I = complex(_trace_a_packed(state.inactive.packed, state.inactive.dim))
    N, p = params.N, params.p
    M_total = N * (1.0 - p) * tr_A + N * p * tr_I
    return MeanFields(M_total=M_total, M_A=M_total - tr_A, M_I=M_total - tr_I)


def atom_steady_expectations(
    M_total: complex, params: SystemParams
) -> tuple[complex, float]:
    """Atom coherence and population after adiabatic elimination of its dynamics."""
    g, J = params.g, params.J
    drive = 4.0 * g**2 * abs(M_total) ** 2
    if drive == 0.0:
        return 0.0 + 0.0j, 0.0
    sigma_ee = 1.0 / (2.0 + J**2 / drive)
    sigma_minus = (-2j * g / J) * M_total * (1.0 - 2.0 * sigma_ee)
    return complex(sigma_minus), float(sigma_ee)


def mean_boson_number(state: QuantumState, params: SystemParams) -> float:
    n_A = float(_number_packed(state.active.packed, state.active.dim))
    n_I = float(_number_packed(state.inactive.packed, state.inactive.dim))
    return (1.0 - params.p) * n_A + params.p * n_I


# ---------------------------------------------------------------------------
# batched right-hand sides


@dataclass(frozen=True)
class QuantumParamArrays:
    a: np.ndarray
    b: np.ndarray
    V: np.ndarray
    g: np.ndarray
    J: np.ndarray
    N: np.ndarray
    p: np.ndarray
    kappa: np.ndarray

    @classmethod
    def from_params(cls, params_list: list[SystemParams]) -> "QuantumParamArrays":
        def col(name):
            return np.array([float(getattr(pp, name)) for pp in params_list])

        return cls(
            a=col("a"), b=col("b"), V=col("V"), g=col("g"),
            J=col("J"), N=col("N"), p=col("p"), kappa=col("kappa"),
        )

    @property
    def gamma_v(self) -> np.ndarray:
        return 2.0 * self.V * (self.N - 1.0) / self.N


class _BatchRHS:
    """Precomputed generator pieces for one batch of parameter points."""

    def __init__(self, pb: QuantumParamArrays, dim: int, adiabatic: bool):
        self.pb = pb
        self.dim = dim
        self.P = packed_size(dim)
        self.adiabatic = adiabatic
        S_pump, S_down, S_two, self.C_up, self.C_dn = _osc_superops(dim)

        def combine(gain_op: np.ndarray, rate: np.ndarray) -> np.ndarray:
            # rate (K,) against shared (d^2, d^2) pieces; collapse to one
            # matrix when every point shares the same rates
            if np.ptp(rate) == 0 and np.ptp(pb.kappa) == 0 and np.ptp(self.pb.gamma_v) == 0:
                return (
                    rate[0] * gain_op + pb.kappa[0] * S_two + self.pb.gamma_v[0] * S_down
                )[None, :, :]
            return (
                rate[:, None, None] * gain_op
                + pb.kappa[:, None, None] * S_two
                + self.pb.gamma_v[:, None, None] * S_down
            )

        self.L0_A = combine(S_pump, pb.a)
        self.L0_I = combine(S_down, pb.b)
        if adiabatic:
            if np.any(pb.J <= ADIABATIC_MIN_J_OVER_G * pb.g):
                raise RegimeViolation(
                    "adiabatic elimination requires J > 20 g for every point"
                )
            self.G = -2.0 * pb.g**2 / pb.J
        self.drive_coeff = pb.V / pb.N

    def split(self, y: np.ndarray):
        P = self.P
        if self.adiabatic:
            return None, y[:, :P], y[:, P:]
        return y[:, :3], y[:, 3 : 3 + P], y[:, 3 + P :]

    def __call__(self, y: np.ndarray) -> np.ndarray:
        pb, dim, P = self.pb, self.dim, self.P
        atom, act_p, inact_p = self.split(y)
        act = unpack(act_p, dim)
        inact = unpack(inact_p, dim)
        vec_A = act.reshape(act.shape[0], dim * dim)
        vec_I = inact.reshape(inact.shape[0], dim * dim)

        tr_A = _trace_a_packed(act_p, dim)
        tr_I = _trace_a_packed(inact_p, dim)
        M = pb.N * (1.0 - pb.p) * tr_A + pb.N * pb.p * tr_I
        M_A = M - tr_A
        M_I = M - tr_I

        if self.adiabatic:
            mu_A = (self.drive_coeff + self.G) * M_A
            mu_I = (self.drive_coeff + self.G) * M_I
            d_atom = None
        else:
            rho_gg = atom[:, 0].real
            rho_eg = atom[:, 1]
            rho_ee = atom[:, 2].real
            pump = 2.0 * pb.g * (np.conj(M) * rho_eg).imag
            d_gg = pump + pb.J * rho_ee
            d_ee = -pump - pb.J * rho_ee
            d_eg = -1j * pb.g * M * (rho_gg - rho_ee) - 0.5 * pb.J * rho_eg
            d_atom = np.stack([d_gg.astype(complex), d_eg, d_ee.astype(complex)], axis=1)
            mu_A = self.drive_coeff * M_A - 1j * pb.g * rho_eg
            mu_I = self.drive_coeff * M_I - 1j * pb.g * rho_eg

        d_A = (
            np.matmul(self.L0_A, vec_A[:, :, None])[:, :, 0]
            + mu_A[:, None] * (vec_A @ self.C_up.T)
            - np.conj(mu_A)[:, None] * (vec_A @ self.C_dn.T)
        )
        d_I = (
            np.matmul(self.L0_I, vec_I[:, :, None])[:, :, 0]
            + mu_I[:, None] * (vec_I @ self.C_up.T)
            - np.conj(mu_I)[:, None] * (vec_I @ self.C_dn.T)
        )
        d_A_p = pack(d_A.reshape(-1, dim, dim))
        d_I_p = pack(d_I.reshape(-1, dim, dim))
        if self.adiabatic:
            return np.concatenate([d_A_p, d_I_p], axis=1)
        return np.concatenate([d_atom, d_A_p, d_I_p], axis=1)


def _atom_packed(rho: DensityMatrix) -> np.ndarray:
    m = rho.matrix
    return np.array([m[0, 0], m[1, 0], m[1, 1]], dtype=complex)


def state_to_packed(state: QuantumState) -> np.ndarray:
    return np.concatenate(
        [_atom_packed(state.atom), state.active.packed, state.inactive.packed]
    )


def packed_to_state(y: np.ndarray, dim: int) -> QuantumState:
    P = packed_size(dim)
    atom = np.array([[y[0].real, np.conj(y[1])], [y[1], y[2].real]], dtype=complex)
    return QuantumState(
        atom=DensityMatrix.from_matrix(atom),
        active=DensityMatrix(dim, y[3 : 3 + P].copy()),
        inactive=DensityMatrix(dim, y[3 + P :].copy()),
    )


def quantum_rhs(
    state: QuantumState, params: SystemParams
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Time derivatives (atom, active, inactive) as full matrices."""
    dim = state.active.dim
    rhs = _BatchRHS(QuantumParamArrays.from_params([params]), dim, adiabatic=False)
    d = rhs(state_to_packed(state)[None, :])[0]
    P = packed_size(dim)
    datom = np.array([[d[0], np.conj(d[1])], [d[1], d[2]]], dtype=complex)
    return datom, unpack(d[3 : 3 + P], dim), unpack(d[3 + P :], dim)


def adiabatic_rhs(
    oscillators: tuple[DensityMatrix, DensityMatrix], params: SystemParams
) -> tuple[np.ndarray, np.ndarray]:
    """Oscillator derivatives with the atom eliminated (mean-field coupling
    shifted by -2 g^2 / J)."""
    act, inact = oscillators
    dim = act.dim
    rhs = _BatchRHS(QuantumParamArrays.from_params([params]), dim, adiabatic=True)
    y = np.concatenate([act.packed, inact.packed])[None, :]
    d = rhs(y)[0]
    P = packed_size(dim)
    return unpack(d[:P], dim), unpack(d[P:], dim)


# ---------------------------------------------------------------------------
# integration


class QuantumBatchIntegrator:
    def __init__(
        self,
        y0: np.ndarray,
        pb: QuantumParamArrays,
        dim: int,
        dt: float,
        adiabatic: bool = False,
        check_invariants: bool = True,
    ):
        self.rhs = _BatchRHS(pb, dim, adiabatic)
        self.y = np.array(y0, dtype=complex)
        self.dim = dim
        self.dt = float(dt)
        self.t = 0.0
        self.step_count = 0
        self.check_invariants = check_invariants
        self.active_mask = np.ones(self.y.shape[0], dtype=bool)

    def _traces(self) -> dict[str, np.ndarray]:
        _, act_p, inact_p = self.rhs.split(self.y)
        dim = self.dim
        out = {
            "tr_a_A": _trace_a_packed(act_p, dim),
            "tr_a_I": _trace_a_packed(inact_p, dim),
            "n_A": _number_packed(act_p, dim),
            "n_I": _number_packed(inact_p, dim),
        }
        out["n_bar"] = (1.0 - self.rhs.pb.p) * out["n_A"] + self.rhs.pb.p * out["n_I"]
        if not self.rhs.adiabatic:
            out["rho_ee"] = self.y[:, 2].real.copy()
        return out

    def _invariant_check(self) -> None:
        _, _, diag_pos, _, _, _, _ = _pack_info(self.dim)
        _, act_p, inact_p = self.rhs.split(self.y)
        for name, packed in (("active", act_p), ("inactive", inact_p)):
            traces = packed[:, diag_pos].real.sum(axis=1)
            drift = np.max(np.abs(traces - 1.0))
            if drift > TRACE_TOL:
                raise InvariantViolation(
                    f"{name} trace drifted by {drift:.3g} at t={self.t:.4g}"
                )
            eigs = np.linalg.eigvalsh(unpack(packed, self.dim))
            if eigs.min() < NEG_TOL:
                raise InvariantViolation(
                    f"{name} eigenvalue {eigs.min():.3g} below {NEG_TOL} at t={self.t:.4g}"
                )
        if not self.rhs.adiabatic:
            atom_trace = (self.y[:, 0] + self.y[:, 2]).real
            if np.max(np.abs(atom_trace - 1.0)) > TRACE_TOL:
                raise InvariantViolation("atom trace drifted")

    def step_block(self, n_steps: int) -> None:
        dt = self.dt
        y = self.y
        mask = self.active_mask
        all_active = bool(mask.all())
        for _ in range(n_steps):
            k1 = self.rhs(y)
            k2 = self.rhs(y + (0.5 * dt) * k1)
            k3 = self.rhs(y + (0.5 * dt) * k2)
            k4 = self.rhs(y + dt * k3)
            y_new = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if all_active:
                y = y_new
            else:
                y = np.where(mask[:, None], y_new, y)
            self.step_count += 1
            self.t = self.step_count * dt
            if self.check_invariants and self.step_count % CHECK_EVERY == 0:
                self.y = y
                self._invariant_check()
        self.y = y

    def residuals(self) -> np.ndarray:
        return np.max(np.abs(self.rhs(self.y)), axis=1)


@dataclass
class EvolutionResult:
    times: np.ndarray
    series: dict[str, np.ndarray]
    final: QuantumState
    final_batch: np.ndarray
    params: SystemParams


def default_initial_state(
    alpha: complex = 1.0, atom_excited: bool = True, dim: int = OSC_DIM
) -> QuantumState:
    osc = coherent_amplitude_to_fock(alpha, dim)
    return QuantumState(
        atom=DensityMatrix.atom(excited=atom_excited),
        active=osc,
        inactive=DensityMatrix(dim, osc.packed.copy()),
    )


def evolve(
    initial: QuantumState,
    params: SystemParams,
    t_max: float,
    dt: float = DT_DEFAULT,
    stride: int | None = None,
) -> EvolutionResult:
    """Integrate the full model, recording coherences, boson numbers and the
    atom population along the way."""
    dim = initial.active.dim
    pb = QuantumParamArrays.from_params([params])
    integ = QuantumBatchIntegrator(state_to_packed(initial)[None, :], pb, dim, dt)
    n_steps = int(round(t_max / dt))
    if stride is None:
        stride = max(1, n_steps // SAMPLES_PER_HORIZON)
    times = [0.0]
    samples = [integ._traces()]
    done = 0
    while done < n_steps:
        block = min(stride, n_steps - done)
        integ.step_block(block)
        done += block
        times.append(integ.t)
        samples.append(integ._traces())
    series = {
        key: np.stack([s[key][0] if np.ndim(s[key]) else s[key] for s in samples])
        for key in samples[0]
    }
    return EvolutionResult(
        times=np.asarray(times),
        series={k: np.asarray(v).reshape(len(times)) for k, v in series.items()},
        final=packed_to_state(integ.y[0], dim),
        final_batch=integ.y.copy(),
        params=params,
    )


@dataclass
class SteadyStateResult:
    state: QuantumState
    converged: bool
    residual: float
    t_stop: float


def steady_state(
    initial: QuantumState,
    params: SystemParams,
    tol: float = STEADY_TOL,
    t_max: float = STEADY_T_MAX,
    dt: float = DT_DEFAULT,
    check_every: int = 200,
) -> SteadyStateResult:
    """Integrate until the generator output is below `tol` everywhere."""
    out = steady_state_batch(
        np.array([state_to_packed(initial)]),
        QuantumParamArrays.from_params([params]),
        initial.active.dim,
        tol=tol,
        t_max=t_max,
        dt=dt,
        check_every=check_every,
    )
    y, converged, residual, t_stop = out
    return SteadyStateResult(
        state=packed_to_state(y[0], initial.active.dim),
        converged=bool(converged[0]),
        residual=float(residual[0]),
        t_stop=float(t_stop[0]),
    )


def steady_state_batch(
    y0: np.ndarray,
    pb: QuantumParamArrays,
    dim: int,
    tol: float = STEADY_TOL,
    t_max: float = STEADY_T_MAX,
    dt: float = DT_DEFAULT,
    check_every: int = 200,
    adiabatic: bool = False,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Batched long-time limit: each point freezes at its own convergence
    checkpoint, so batch composition never changes any point's result."""
    integ = QuantumBatchIntegrator(y0, pb, dim, dt, adiabatic=adiabatic)
    K = y0.shape[0]
    t_stop = np.full(K, np.nan)
    residual = np.full(K, np.inf)
    n_total = int(round(t_max / dt))
    done = 0
    while done < n_total:
        block = min(check_every, n_total - done)
        integ.step_block(block)
        done += block
        res = integ.residuals()
        newly = integ.active_mask & (res < tol)
        residual[integ.active_mask] = res[integ.active_mask]
        t_stop[newly] = integ.t
        integ.active_mask = integ.active_mask & ~newly
        if not integ.active_mask.any():
            break
    t_stop[np.isnan(t_stop)] = integ.t
    converged = residual < tol
    return integ.y, converged, residual, t_stop


# ---------------------------------------------------------------------------
# collapsed-state Fock distribution (closed form)


def aging_fock_analytic(params: SystemParams) -> tuple[FockDistribution, FockDistribution]:
    """Stationary Fock populations once the mean fields have died out.

    The inactive group relaxes completely to the ground state. The active
    populations solve the five-level balance between single-boson pumping,
    two-boson damping and the global dissipative channel; the closed form
    below is that solution (all coherences vanish).
    """
    gam, kap, V, N = params.a, params.kappa, params.V, float(params.N)
    c1 = N**4
    c2 = (N - 1.0) * N**3 * V
    c3 = (N - 1.0) ** 2 * N**2 * V**2
    c4 = (N - 1.0) ** 3 * N * V**3
    c5 = (N - 1.0) ** 4 * V**4
    C = (
        gam * (gam**3 + 7.0 * gam**2 * kap + 27.0 * gam * kap**2 + 18.0 * kap**3) * c1
        + 2.0 * (gam**3 + 12.0 * gam**2 * kap + 34.0 * gam * kap**2 + 6.0 * kap**3) * c2
        + 4.0 * (gam**2 + 15.0 * gam * kap + 11.0 * kap**2) * c3
        + 8.0 * (gam + 6.0 * kap) * c4
        + 16.0 * c5
    )
    pops = np.array(
        [
            4.0 * gam * kap**2 * (2.0 * gam + 3.0 * kap) * c1
            + 2.0 * kap**2 * (23.0 * gam + 6.0 * kap) * c2
            + 4.0 * kap * (9.0 * gam + 11.0 * kap) * c3
            + 48.0 * kap * c4
            + 16.0 * c5,
            gam * kap * (6.0 * kap**2 + 13.0 * gam * kap) * c1
            + gam * kap * (22.0 * kap + 14.0 * gam) * c2
            + 24.0 * gam * kap * c3
            + 8.0 * gam * c4,
            2.0 * gam * kap * (2.0 * gam**2 + 3.0 * gam * kap) * c1
            + 10.0 * gam**2 * kap * c2
            + 4.0 * gam**2 * c3,
            3.0 * gam**3 * kap * c1 + 2.0 * gam**3 * c2,
            gam**4 * c1,
        ]
    ) / C
    active = FockDistribution(populations=pops, coherences_present=False)
    inactive = FockDistribution(
        populations=np.array([1.0, 0.0, 0.0, 0.0, 0.0]), coherences_present=False
    )
    return active, inactive


# ---------------------------------------------------------------------------
# knee detection


@dataclass(frozen=True)
class KneeResult:
    p_c: float
    confidence: float
    sse_two: float
    sse_one: float


def detect_knee(
    curve: list[tuple[float, float]] | np.ndarray,
    min_side: int = 10,
    min_improvement: float = 0.2,
) -> KneeResult:
    """Breakpoint of the best continuous two-segment linear fit to the curve.

    The candidate breakpoints are the grid points with at least `min_side`
    samples on each side; the confidence is the squared-residual improvement
    over a single straight line.
    """
    arr = np.asarray(curve, dtype=float)
    x, y = arr[:, 0], arr[:, 1]
    n = len(x)
    if n < 2 * min_side + 1:
        raise NoKnee(f"need at least {2 * min_side + 1} points, got {n}")

    def sse(design: np.ndarray) -> float:
        coef, res, rank, _ = np.linalg.lstsq(design, y, rcond=None)
        if res.size and rank == design.shape[1]:
            return float(res[0])
        return float(np.sum((design @ coef - y) ** 2))

    sse_one = sse(np.column_stack([np.ones(n), x]))
    best_k, best_sse = None, np.inf
    for k in range(min_side, n - min_side):
        hinge = np.maximum(x - x[k], 0.0)
        cur = sse(np.column_stack([np.ones(n), x - x[k], hinge]))
        if cur < best_sse - 1e-15 * max(1.0, best_sse):
            best_k, best_sse = k, cur
    if sse_one <= 1e-18:
        raise NoKnee("curve is already a straight line")
    confidence = 1.0 - best_sse / sse_one
    if confidence < min_improvement:
        raise NoKnee(
            f"two-segment fit improves residual by only {confidence:.1%} "
            f"(< {min_improvement:.0%})"
        )
    return KneeResult(
        p_c=float(x[best_k]), confidence=float(confidence),
        sse_two=float(best_sse), sse_one=float(sse_one),
    )


# ---------------------------------------------------------------------------
# step-size guidance


def stable_dt(
    params: SystemParams,
    dim: int = OSC_DIM,
    drive_scale: float = 0.0,
    safety: float = 0.8,
) -> float:
    """Largest RK4-stable step for this batch, from the generator's diagonal
    decay rates plus an optional bound on the coherent drive amplitude."""
    pb = QuantumParamArrays.from_params([params])
    rhs = _BatchRHS(pb, dim, adiabatic=False)
    lam = 0.0
    for L0 in (rhs.L0_A, rhs.L0_I):
        lam = max(lam, float(np.max(-np.diagonal(L0, axis1=1, axis2=2).real)))
    lam = max(lam, params.J)
    if drive_scale > 0.0:
        lam += 2.0 * drive_scale * math.sqrt(dim)
    return safety * 2.785 / lam
