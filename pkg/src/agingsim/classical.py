"""Classical mean-field dynamics of the coupled atom-oscillator system.

State variables are the atom coherence and excited population plus one
complex amplitude per oscillator group. The integrator is fixed-step RK4 and
operates on batches: a batch axis runs over independent parameter points so
whole sweeps integrate in one pass. Results are identical whether points are
run together or one at a time (all arithmetic is elementwise per point).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import optimize

from .errors import (
    BaselineDead,
    IntegratorDiverged,
    InvariantViolation,
    NoConvergence,
    ValidityViolated,
)
from .model import ClassicalState, SystemParams

DT_DEFAULT = 1e-4
T_MAX_DEFAULT = 10.0
EPS_AMP = 1e-6
MAX_DOUBLINGS = 3
WINDOW_FRACTION = 0.2
DRIFT_TOL = 0.05
SAMPLES_PER_HORIZON = 500
CHECK_EVERY = 100
BLOCH_TOL = 1e-4


class SteadyKind(Enum):
    AGING = "AgingState"
    OSCILLATORY = "OscillatoryState"
    UNRESOLVED = "Unresolved"


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: list[ClassicalState]
    params: SystemParams


@dataclass(frozen=True)
class SteadyOutcome:
    kind: SteadyKind
    final_state: ClassicalState
    R_magnitude: float


@dataclass(frozen=True)
class ParamArrays:
    """Per-point parameter vectors broadcastable against a batch of states."""

    a: np.ndarray
    b: np.ndarray
    V: np.ndarray
    g: np.ndarray
    J: np.ndarray
    N: np.ndarray
    p: np.ndarray
    kappa: np.ndarray

    @classmethod
    def from_params(cls, params_list: list[SystemParams]) -> "ParamArrays":
        def col(name):
            return np.array([float(getattr(pp, name)) for pp in params_list])

        return cls(
            a=col("a"),
            b=col("b"),
            V=col("V"),
            g=col("g"),
            J=col("J"),
            N=col("N"),
            p=col("p"),
            kappa=col("kappa"),
        )


def _rhs(y: np.ndarray, pb: ParamArrays) -> np.ndarray:
    """Time derivative of the packed state [sigma-, sigma_ee, A, I], batched.

    sigma_ee is carried in a complex slot; its derivative is exactly real
    whenever the current value is real, so realness is preserved bit-exactly.
    """
    s, w, A, I = y[..., 0], y[..., 1], y[..., 2], y[..., 3]
    p, q = pb.p, 1.0 - pb.p
    Z = pb.N * (q * A + p * I)
    ds = -1j * pb.g * Z * (1.0 - 2.0 * w) - 0.5 * pb.J * s
    u = Z * np.conj(s)
    dw = -1j * pb.g * (u - np.conj(u)) - pb.J * w
    abs_A2 = A.real**2 + A.imag**2
    abs_I2 = I.real**2 + I.imag**2
    dA = -1j * pb.g * s + (0.5 * pb.a - pb.V * p - pb.kappa * abs_A2) * A + pb.V * p * I
    dI = -1j * pb.g * s + (-0.5 * pb.b - pb.V * q - pb.kappa * abs_I2) * I + pb.V * q * A
    return np.stack([ds, dw, dA, dI], axis=-1)


def classical_rhs(state: ClassicalState, params: SystemParams) -> ClassicalState:
    """Single-point derivative; the returned object carries the derivatives."""
    y = np.array(
        [[state.sigma_minus, state.sigma_ee, state.A, state.I]], dtype=complex
    )
    pb = ParamArrays.from_params([params])
    d = _rhs(y, pb)[0]
    return ClassicalState(
        sigma_minus=complex(d[0]), sigma_ee=float(d[1].real), A=complex(d[2]), I=complex(d[3])
    )


def state_to_vector(state: ClassicalState) -> np.ndarray:
    return np.array([state.sigma_minus, state.sigma_ee, state.A, state.I], dtype=complex)


def vector_to_state(y: np.ndarray) -> ClassicalState:
    return ClassicalState(
        sigma_minus=complex(y[0]), sigma_ee=float(y[1].real), A=complex(y[2]), I=complex(y[3])
    )


class BatchIntegrator:
    """Fixed-step RK4 over a batch of classical states with shared dt.

    Keeps a sampled record of |A|, |I| and the mean amplitude R per point;
    invariants (Bloch consistency, divergence bound) are checked every
    CHECK_EVERY steps on the points listed in `watch`.
    """

    def __init__(
        self,
        y0: np.ndarray,
        pb: ParamArrays,
        dt: float,
        stride: int,
        divergence_factor: float = 10.0,
    ):
        self.y = np.array(y0, dtype=complex)
        self.pb = pb
        self.dt = float(dt)
        self.stride = int(stride)
        self.t = 0.0
        self.step_count = 0
        init_amp = np.maximum(np.abs(self.y[:, 2]), np.abs(self.y[:, 3]))
        cycle_amp = np.sqrt(np.maximum(pb.a, 0.0) / (2.0 * pb.kappa))
        self.bound = divergence_factor * np.maximum(1.0, np.maximum(init_amp, cycle_amp))
        self.watch = np.ones(self.y.shape[0], dtype=bool)
        self.diverged = np.zeros(self.y.shape[0], dtype=bool)
        self.times: list[float] = []
        self.samples_A: list[np.ndarray] = []
        self.samples_I: list[np.ndarray] = []
        self.samples_R: list[np.ndarray] = []
        self.full_states: list[np.ndarray] | None = None
        self._record()

    def keep_full_states(self) -> None:
        self.full_states = [self.y.copy()]

    def _record(self) -> None:
        self.times.append(self.t)
        A, I = self.y[:, 2], self.y[:, 3]
        self.samples_A.append(np.abs(A))
        self.samples_I.append(np.abs(I))
        p, q = self.pb.p, 1.0 - self.pb.p
        self.samples_R.append(q * A + p * I)
        if self.full_states is not None:
            self.full_states.append(self.y.copy())

    def _check_invariants(self) -> None:
        if not self.watch.any():
            return
        y = self.y[self.watch]
        w = y[:, 1]
        if np.max(np.abs(w.imag), initial=0.0) > 1e-12:
            raise InvariantViolation("atom population drifted off the real axis")
        excess = np.abs(y[:, 0]) ** 2 - w.real * (1.0 - w.real)
        if np.max(excess, initial=0.0) > BLOCH_TOL:
            raise InvariantViolation(
                f"Bloch consistency violated by {np.max(excess):.3g} (> {BLOCH_TOL})"
            )
        amp = np.maximum(np.abs(self.y[:, 2]), np.abs(self.y[:, 3]))
        over = self.watch & (amp > self.bound)
        if over.any():
            self.diverged |= over
            self.watch &= ~over
            # park diverged lanes at the invariant origin so they stay finite
            self.y[over] = 0.0

    def run_until(self, t_target: float) -> None:
        n_steps = int(round((t_target - self.t) / self.dt))
        dt = self.dt
        y = self.y
        pb = self.pb
        for _ in range(n_steps):
            k1 = _rhs(y, pb)
            k2 = _rhs(y + (0.5 * dt) * k1, pb)
            k3 = _rhs(y + (0.5 * dt) * k2, pb)
            k4 = _rhs(y + dt * k3, pb)
            y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            self.y = y
            self.step_count += 1
            self.t = self.step_count * dt
            if self.step_count % self.stride == 0:
                self._record()
            if self.step_count % CHECK_EVERY == 0:
                self._check_invariants()
                y = self.y  # diverged lanes may have been parked

    def sample_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return (
            np.asarray(self.times),
            np.stack(self.samples_A),
            np.stack(self.samples_I),
            np.stack(self.samples_R),
        )


def _classify_series(
    amp_A: np.ndarray,
    amp_I: np.ndarray,
    R: np.ndarray,
    eps_amp: float = EPS_AMP,
    window_fraction: float = WINDOW_FRACTION,
    drift_tol: float = DRIFT_TOL,
) -> tuple[SteadyKind, float]:
    """Classify one point's sampled history; returns (kind, mean terminal |R|)."""
    n = len(amp_A)
    w0 = max(0, n - max(2, int(round(n * window_fraction))))
    wA, wI, wR = amp_A[w0:], amp_I[w0:], np.abs(R[w0:])
    r_mean = float(wR.mean())
    if max(wA.max(), wI.max()) < eps_amp:
        return SteadyKind.AGING, r_mean
    half = len(wR) // 2
    if half >= 1 and r_mean >= eps_amp:
        drift = abs(float(wR[half:].mean()) - float(wR[:half].mean()))
        if drift < drift_tol * max(r_mean, eps_amp):
            return SteadyKind.OSCILLATORY, r_mean
    return SteadyKind.UNRESOLVED, r_mean


@dataclass
class ResolvedPoint:
    kind: SteadyKind
    r_magnitude: float
    amp_A: float
    amp_I: float
    final: np.ndarray
    t_resolved: float
    diverged: bool = False


def resolve_batch(
    y0: np.ndarray,
    pb: ParamArrays,
    t_max: float = T_MAX_DEFAULT,
    dt: float = DT_DEFAULT,
    max_doublings: int = MAX_DOUBLINGS,
    eps_amp: float = EPS_AMP,
) -> list[ResolvedPoint]:
    """Integrate a batch until each point classifies, doubling the horizon
    (up to `max_doublings` times) for points that stay unresolved."""
    K = y0.shape[0]
    stride = max(1, int(round(t_max / dt / SAMPLES_PER_HORIZON)))
    integ = BatchIntegrator(y0, pb, dt, stride)
    resolved: dict[int, ResolvedPoint] = {}
    horizon = t_max
    for attempt in range(max_doublings + 1):
        integ.run_until(horizon)
        _, amp_A, amp_I, R = integ.sample_arrays()
        for k in range(K):
            if k in resolved:
                continue
            if integ.diverged[k]:
                resolved[k] = ResolvedPoint(
                    SteadyKind.UNRESOLVED, float("nan"), float("nan"), float("nan"),
                    integ.y[k].copy(), integ.t, diverged=True,
                )
                continue
            kind, r_mean = _classify_series(amp_A[:, k], amp_I[:, k], R[:, k], eps_amp)
            if kind is not SteadyKind.UNRESOLVED or attempt == max_doublings:
                n = amp_A.shape[0]
                w0 = max(0, n - max(2, int(round(n * WINDOW_FRACTION))))
                resolved[k] = ResolvedPoint(
                    kind=kind,
                    r_magnitude=r_mean,
                    amp_A=float(amp_A[w0:, k].mean()),
                    amp_I=float(amp_I[w0:, k].mean()),
                    final=integ.y[k].copy(),
                    t_resolved=integ.t,
                )
        if len(resolved) == K:
            break
        horizon *= 2.0
    return [resolved[k] for k in range(K)]


def integrate(
    initial: ClassicalState,
    params: SystemParams,
    t_max: float = T_MAX_DEFAULT,
    dt: float = DT_DEFAULT,
    stride: int | None = None,
) -> Trajectory:
    """Integrate one trajectory, recording the full state every `stride` steps."""
    if dt <= 0 or t_max <= dt:
        raise ValueError("need dt > 0 and t_max > dt")
    y0 = state_to_vector(initial)[None, :]
    pb = ParamArrays.from_params([params])
    if stride is None:
        stride = max(1, int(round(t_max / dt / SAMPLES_PER_HORIZON)))
    integ = BatchIntegrator(y0, pb, dt, stride)
    integ.keep_full_states()
    integ.run_until(t_max)
    if integ.diverged[0]:
        raise IntegratorDiverged(
            f"amplitude exceeded {integ.bound[0]:.3g} before t={integ.t:.3g}"
        )
    states = [vector_to_state(y[0]) for y in integ.full_states]
    return Trajectory(times=np.asarray(integ.times), states=states, params=params)


def classify_steady(traj: Trajectory) -> SteadyOutcome:
    """Decide whether a trajectory ended in the collapsed state, a sustained
    oscillation, or neither (Unresolved)."""
    p = traj.params.p
    amp_A = np.array([abs(s.A) for s in traj.states])
    amp_I = np.array([abs(s.I) for s in traj.states])
    R = np.array([(1.0 - p) * s.A + p * s.I for s in traj.states])
    kind, r_mean = _classify_series(amp_A, amp_I, R)
    return SteadyOutcome(kind=kind, final_state=traj.states[-1], R_magnitude=r_mean)


DEFAULT_INITIAL = ClassicalState(sigma_minus=0.0, sigma_ee=1.0, A=1.0 + 0.0j, I=1.0 + 0.0j)


def order_parameter_Qc(
    params: SystemParams,
    initial: ClassicalState = DEFAULT_INITIAL,
    t_max: float = T_MAX_DEFAULT,
    dt: float = DT_DEFAULT,
) -> float:
    """Normalized order parameter: terminal mean |R| at this p over that at p=0."""
    y0 = np.stack([state_to_vector(initial)] * 2)
    pb = ParamArrays.from_params([params, params.with_p(0.0)])
    pts = resolve_batch(y0, pb, t_max=t_max, dt=dt)
    run_p, run_0 = pts
    if run_0.kind is SteadyKind.AGING:
        raise BaselineDead("the p=0 run collapsed; Q_c is undefined")
    if run_p.kind is SteadyKind.AGING:
        return 0.0
    return run_p.r_magnitude / run_0.r_magnitude


def _reduced_residual(x: np.ndarray, params: SystemParams, with_atom_term: bool) -> np.ndarray:
    a, b, V, J, N, p, kappa = (
        params.a, params.b, params.V, params.J, params.N, params.p, params.kappa,
    )
    q = 1.0 - p
    A, I = x
    Z = N * (q * A + p * I)
    atom = J / (4.0 * Z) if with_atom_term else 0.0
    f1 = (0.5 * a - V * p - kappa * A * A) * A + V * p * I - atom
    f2 = (-0.5 * b - V * q - kappa * I * I) * I + V * q * A - atom
    return np.array([f1, f2])


def reduced_steady_solve(
    params: SystemParams, max_iter: int = 10_000
) -> tuple[complex, complex]:
    """Steady oscillation amplitudes from the reduced fixed-point equations.

    The two coupled equations carry the atom backaction as J/(4 Z*) and are
    independent of g by construction; the solve is seeded from the solution
    with the backaction term dropped. The global phase is fixed by taking the
    amplitude sum Z real and positive, which makes both amplitudes real.
    """
    a, V, p, kappa = params.a, params.V, params.p, params.kappa
    q = 1.0 - p
    A0 = np.sqrt(max(a / (2.0 * kappa), 1e-6))
    I0 = V * q * A0 / (0.5 * params.b + V * q + 1e-12)
    seed = optimize.root(
        _reduced_residual, np.array([A0, I0]), args=(params, False),
        method="hybr", options={"maxfev": max_iter},
    )
    start = seed.x if seed.success else np.array([A0, I0])
    sol = optimize.root(
        _reduced_residual, start, args=(params, True),
        method="hybr", options={"maxfev": max_iter},
    )
    scale = max(1.0, abs(params.a))
    if not sol.success or np.max(np.abs(sol.fun)) > 1e-9 * scale:
        raise NoConvergence(
            f"reduced steady solve failed at p={params.p}: {sol.message} "
            f"(residual {np.max(np.abs(sol.fun)):.3g})"
        )
    A, I = sol.x
    if A < 0:  # gauge: amplitude sum positive
        A, I = -A, -I
    Z = params.N * (q * A + p * I)
    if params.J**2 / Z**2 >= 0.8 * params.g**2:
        raise ValidityViolated(
            f"J^2/|Z|^2 = {params.J**2 / Z**2:.4g} is not << 8 g^2 = {8 * params.g**2:.4g}"
        )
    return complex(A), complex(I)
