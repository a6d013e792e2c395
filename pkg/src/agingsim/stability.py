"""Linear stability of the collapsed (all-amplitudes-zero) state.

Builds the 4x4 deviation Jacobian, evaluates the closed-form coefficients of
its cubic characteristic factor, applies the Routh-Hurwitz criterion, and
exposes the analytic threshold for the inactive fraction above which the
collapsed state can be stable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import OutOfRange, RegimeViolation, SelfCheckFailed, UnexpectedRouthBranch
from .model import SystemParams

_DEG_DISC_TOL = 1e-12


def build_jacobian(params: SystemParams) -> np.ndarray:
    """Jacobian of the deviation system around sigma- = sigma_ee = A = I = 0."""
    a, b, V, g, J, N, p = (
        params.a,
        params.b,
        params.V,
        params.g,
        params.J,
        params.N,
        params.p,
    )
    q = 1.0 - p
    return np.array(
        [
            [-J / 2.0, 0.0, -1j * g * N * q, -1j * g * N * p],
            [0.0, -J, 0.0, 0.0],
            [-1j * g, 0.0, a / 2.0 - V * p, V * p],
            [-1j * g, 0.0, V * q, -b / 2.0 - V * q],
        ],
        dtype=complex,
    )


def _coefficients_closed_form(params: SystemParams) -> tuple[float, float, float]:
    a, b, V, g, J, N, p = (
        params.a,
        params.b,
        params.V,
        params.g,
        params.J,
        params.N,
        params.p,
    )
    c0 = 0.125 * (
        -4.0 * b * g**2 * N * (-1.0 + p)
        + 8.0 * g**2 * N * V
        + 2.0 * b * J * p * V
        - a * (b * J + 4.0 * g**2 * N * p - 2.0 * J * (-1.0 + p) * V)
    )
    c1 = 0.25 * (
        b * J
        + 4.0 * g**2 * N
        + 2.0 * (J + b * p) * V
        - a * (b + J + 2.0 * V - 2.0 * p * V)
    )
    c2 = 0.5 * (-a + b + J) + V
    return c0, c1, c2


def _char_poly_faddeev(matrix: np.ndarray) -> np.ndarray:
    """Monic characteristic polynomial coefficients via Faddeev-LeVerrier."""
    n = matrix.shape[0]
    coeffs = np.zeros(n + 1, dtype=complex)
    coeffs[0] = 1.0
    m = np.zeros_like(matrix)
    for k in range(1, n + 1):
        m = matrix @ m + coeffs[k - 1] * np.eye(n)
        coeffs[k] = -np.trace(matrix @ m) / k
    return coeffs


def characteristic_coefficients(params: SystemParams) -> tuple[float, float, float]:
    """Coefficients (c0, c1, c2) of the cubic stability factor.

    Evaluated from the closed forms and cross-checked against polynomial
    division of the full characteristic polynomial by the exact atom-population
    root at -J.
    """
    c0, c1, c2 = _coefficients_closed_form(params)

    # Independent route: char poly of the Jacobian, deflated by (lambda + J).
    quartic = _char_poly_faddeev(build_jacobian(params))
    div = np.empty(4, dtype=complex)
    carry = 0.0
    for i in range(4):
        div[i] = quartic[i] + carry
        carry = -params.J * div[i]
    remainder = quartic[4] + carry
    scale = max(1.0, abs(c0), abs(c1), abs(c2))
    checks = (
        abs(div[1] - c2),
        abs(div[2] - c1),
        abs(div[3] - c0),
        abs(remainder),
    )
    if max(checks) > 1e-9 * scale:
        raise SelfCheckFailed(
            f"closed-form coefficients disagree with polynomial division: "
            f"deviation {max(checks):.3g} at params {params}"
        )
    return c0, c1, c2


def routh_hurwitz_stable(c0: float, c1: float, c2: float) -> bool:
    """Stability of the monic cubic with these coefficients (all roots in Re<0)."""
    return c2 > 0.0 and c0 > 0.0 and c2 * c1 > c0


def _cubic_roots(c0: float, c1: float, c2: float) -> np.ndarray:
    """Roots of lambda^3 + c2 lambda^2 + c1 lambda + c0, closed form.

    Falls back to companion-matrix eigenvalues when the (normalized)
    discriminant of the depressed cubic is near zero.
    """
    # depressed cubic: x^3 + px + q with lambda = x - c2/3
    shift = c2 / 3.0
    p = c1 - c2 * c2 / 3.0
    q = 2.0 * c2**3 / 27.0 - c2 * c1 / 3.0 + c0
    scale = max(1.0, abs(p) ** 0.5, abs(q) ** (1.0 / 3.0))
    pn, qn = p / scale**2, q / scale**3
    disc = -4.0 * pn**3 - 27.0 * qn**2
    if abs(disc) < _DEG_DISC_TOL:
        companion = np.array(
            [[0.0, 0.0, -c0], [1.0, 0.0, -c1], [0.0, 1.0, -c2]], dtype=float
        )
        return np.linalg.eigvals(companion)
    if disc > 0.0:
        # three distinct real roots, trigonometric form
        r = 2.0 * np.sqrt(-p / 3.0)
        theta = np.arccos(np.clip(3.0 * q / (p * r), -1.0, 1.0))
        x = r * np.cos((theta - 2.0 * np.pi * np.arange(3)) / 3.0)
        return x - shift
    # one real root (Cardano), one conjugate pair
    h = np.sqrt(q * q / 4.0 + p**3 / 27.0)
    u = np.cbrt(-q / 2.0 + h)
    v = np.cbrt(-q / 2.0 - h)
    x1 = u + v
    re = -x1 / 2.0
    im = (u - v) * np.sqrt(3.0) / 2.0
    return np.array([x1 - shift, re - shift + 1j * im, re - shift - 1j * im])


_ROW_PATTERN_TOL = 0.0


def eigenvalues(matrix: np.ndarray) -> np.ndarray:
    """All four eigenvalues, sorted by descending real part.

    For matrices with the deviation-system block structure (second row zero
    except its diagonal), the diagonal entry is taken as one exact root and
    the remaining cubic is solved in closed form; any other matrix falls back
    to a general eigensolver.
    """
    matrix = np.asarray(matrix, dtype=complex)
    row = matrix[1]
    structured = (
        abs(row[0]) <= _ROW_PATTERN_TOL
        and abs(row[2]) <= _ROW_PATTERN_TOL
        and abs(row[3]) <= _ROW_PATTERN_TOL
    )
    if structured:
        exact = row[1]
        sub = matrix[np.ix_([0, 2, 3], [0, 2, 3])]
        quartic_free = _char_poly_faddeev(sub)  # monic cubic coefficients
        cs = quartic_free[1:]
        if np.max(np.abs(cs.imag)) < 1e-9 * max(1.0, np.max(np.abs(cs))):
            roots = _cubic_roots(cs[2].real, cs[1].real, cs[0].real)
        else:
            roots = np.roots(np.concatenate(([1.0 + 0j], cs)))
        vals = np.concatenate((roots, [exact]))
    else:
        vals = np.linalg.eigvals(matrix)
    order = np.argsort(-vals.real, kind="stable")
    return vals[order]


def p_cmin(params: SystemParams) -> float:
    """Smallest inactive fraction at which the collapsed state can be stable.

    Closed-form root of c0(p); requires 2 g^2 N < J V. Verifies that the
    constant coefficient is indeed the binding Routh-Hurwitz condition at the
    returned threshold.
    """
    a, b, V, g, J, N = params.a, params.b, params.V, params.g, params.J, params.N
    if 2.0 * g**2 * N >= J * V:
        raise RegimeViolation(
            f"requires 2 g^2 N < J V (got {2.0 * g**2 * N:.6g} >= {J * V:.6g})"
        )
    value = ((4.0 * g**2 * N - a * J) * (b + 2.0 * V)) / (
        2.0 * (2.0 * g**2 * N - J * V) * (a + b)
    )
    if not 0.0 < value <= 1.0:
        raise OutOfRange(f"threshold formula yields p = {value:.6g} outside (0, 1]")

    # Confirm c0 is the condition that flips at the threshold.
    delta = 1e-6
    for sign in (-1.0, 1.0):
        p_test = value + sign * delta
        if not 0.0 <= p_test <= 1.0:
            continue
        c0, c1, c2 = _coefficients_closed_form(params.with_p(p_test))
        if c2 <= 0.0 or c2 * c1 <= c0:
            raise UnexpectedRouthBranch(
                f"a condition other than c0 > 0 binds near p = {value:.6g} "
                f"(c0={c0:.3g}, c1={c1:.3g}, c2={c2:.3g} at p={p_test:.6g})"
            )
        if (c0 > 0.0) != (sign > 0.0):
            raise UnexpectedRouthBranch(
                f"c0 does not change sign at the threshold p = {value:.6g}"
            )
    return value


@dataclass(frozen=True)
class StabilityReport:
    """Everything the linear analysis says about one parameter point."""

    jacobian: np.ndarray
    coefficients: tuple[float, float, float]
    eigenvalues: np.ndarray
    max_real_part: float
    stable: bool
    routh_hurwitz_stable: bool
    marginal: bool


def stability_report(params: SystemParams, margin: float = 1e-10) -> StabilityReport:
    jac = build_jacobian(params)
    coeffs = characteristic_coefficients(params)
    vals = eigenvalues(jac)
    max_re = float(vals.real.max())
    return StabilityReport(
        jacobian=jac,
        coefficients=coeffs,
        eigenvalues=vals,
        max_real_part=max_re,
        stable=max_re < 0.0,
        routh_hurwitz_stable=routh_hurwitz_stable(*coeffs),
        marginal=abs(max_re) < margin,
    )
