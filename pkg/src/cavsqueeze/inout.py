"""Closed-form input-output theory of the driven two-mode parametric cavity.

The cavity is driven by the engineered pair-creation interaction plus
classical drives on both modes; each mode decays into its own vacuum input.
Everything here is closed-form frequency-domain algebra: steady
displacements, Bogoliubov transfer matrices between input and output
operators, output quadrature variances, the noise-reduction parameter and
the displaced-squeezed-state description of the output.

Convention adapter: the parametric coupling enters the Langevin drift as
Omega/2 with Omega real; relative to the complex coefficient Omega_eff of
the intracavity Hamiltonian this is Omega = 2 |Omega_eff|, the phase being
absorbed into the definition of the mode operators.
:meth:`DriveParams.from_effective` is the single place that conversion
happens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CriticalPointError
from .squeeze import pull_displacements_through

#: relative tolerance deciding whether Omega^2 = kappa_a kappa_b
CRITICAL_RTOL = 1e-12


@dataclass(frozen=True)
class DriveParams:
    """Real parametric coupling, decay rates and classical drive strengths."""

    Omega: float
    kappa_a: float
    kappa_b: float
    eps_a: complex = 0.0
    eps_b: complex = 0.0

    def __post_init__(self):
        if self.kappa_a <= 0 or self.kappa_b <= 0:
            raise ValueError("cavity decay rates must be positive")
        if self.Omega < 0:
            raise ValueError("Omega is the real coupling magnitude; must be >= 0")

    @classmethod
    def from_effective(cls, omega_eff: complex, kappa_a: float, kappa_b: float,
                       eps_a: complex = 0.0, eps_b: complex = 0.0) -> "DriveParams":
        """Adapt the complex Hamiltonian coefficient to the Langevin form.

        The drift term Omega/2 corresponds to a Hamiltonian coefficient of
        magnitude Omega/2, so Omega = 2 |omega_eff|; the coupling phase is
        absorbed into the mode definitions and does not affect any variance.
        """
        return cls(Omega=2 * abs(omega_eff), kappa_a=kappa_a, kappa_b=kappa_b,
                   eps_a=eps_a, eps_b=eps_b)

    @property
    def kappa_geo(self) -> float:
        return math.sqrt(self.kappa_a * self.kappa_b)

    @property
    def is_critical(self) -> bool:
        prod = self.kappa_a * self.kappa_b
        return abs(self.Omega**2 - prod) <= CRITICAL_RTOL * prod


def _denominator(drive: DriveParams) -> float:
    return drive.Omega**2 - drive.kappa_a * drive.kappa_b


def steady_displacements(drive: DriveParams) -> tuple[complex, complex]:
    """Steady intracavity displacements removing the classical drives."""
    if drive.is_critical:
        raise CriticalPointError(
            "steady displacements diverge at the perfect-squeezing point "
            "Omega^2 = kappa_a kappa_b"
        )
    den = _denominator(drive)
    alpha0 = 2j * (drive.kappa_b * np.conj(drive.eps_a) - drive.Omega * drive.eps_b) / den
    beta0 = 2j * (drive.kappa_a * np.conj(drive.eps_b) - drive.Omega * drive.eps_a) / den
    return complex(alpha0), complex(beta0)


def _alpha_beta(drive: DriveParams, omega: float) -> tuple[complex, complex]:
    return drive.kappa_a - 2j * omega, drive.kappa_b - 2j * omega


def _pole_guard(drive: DriveParams, omega: float) -> tuple[complex, complex, complex]:
    alpha, beta = _alpha_beta(drive, omega)
    den = drive.Omega**2 - alpha * beta
    scale = max(drive.Omega**2, abs(alpha * beta))
    if abs(den) <= 1e-12 * scale:
        raise CriticalPointError(
            f"transfer pole at sideband frequency {omega!r}: "
            f"Omega^2 = alpha beta"
        )
    return alpha, beta, den


def intracavity_transfer(drive: DriveParams, omega: float) -> np.ndarray:
    """2x2 matrix mapping (c_in(w), d_in+(-w)) to (a'(w), b'+(-w))."""
    alpha, beta, den = _pole_guard(drive, omega)
    sqa, sqb = math.sqrt(drive.kappa_a), math.sqrt(drive.kappa_b)
    row_a = (2 * sqa * beta / den, 2 * sqb * drive.Omega / den)
    # conjugate-mode row: coefficients of b'(w) conjugated at -w
    row_bdag = (np.conj(2 * sqa * drive.Omega / den), np.conj(2 * sqb * alpha / den))
    return np.array([row_a, row_bdag], dtype=complex)


@dataclass(frozen=True)
class TransferMatrix:
    """Input-output Bogoliubov map at one sideband frequency.

    Maps (c_in(w), d_in+(-w)) to (c_out(w), d_out+(-w)); the delta-function
    displacement terms are carried separately by
    :func:`effective_displacements`, never as numeric spikes on a grid.
    """

    omega: float
    M: np.ndarray
    alpha: complex
    beta: complex

    def __post_init__(self):
        m = np.asarray(self.M, dtype=complex)
        object.__setattr__(self, "M", m)
        bogoliubov = abs(m[0, 0]) ** 2 - abs(m[0, 1]) ** 2
        if abs(bogoliubov - 1.0) > 1e-10:
            raise CriticalPointError(
                f"transfer matrix violates Bogoliubov normalization: "
                f"|M11|^2 - |M12|^2 = {bogoliubov!r}"
            )


def output_transfer(drive: DriveParams, omega: float) -> TransferMatrix:
    """Output fields as a function of the input fields at sideband w."""
    alpha, beta, den = _pole_guard(drive, omega)
    m11 = (drive.Omega**2 + np.conj(alpha) * beta) / den
    m12 = 2 * drive.Omega * drive.kappa_geo / den
    # second row: d_out+(-w) coefficients, conjugated from the d_out equation
    m22 = np.conj((drive.Omega**2 + alpha * np.conj(beta)) / den)
    m21 = np.conj(m12)
    return TransferMatrix(omega=omega, M=np.array([[m11, m12], [m21, m22]]),
                          alpha=alpha, beta=beta)


def _variances_from_transfer(drive: DriveParams, omega: float) -> tuple[float, float]:
    """Quadrature variances assembled from the transfer coefficients with
    vacuum inputs (the independent route used to cross-check the closed
    forms and to build spectra)."""
    alpha, beta, den = _pole_guard(drive, omega)
    a_coef = (drive.Omega**2 + np.conj(alpha) * beta) / den
    a_prime = (drive.Omega**2 + alpha * np.conj(beta)) / den
    b_coef = 2 * drive.Omega * drive.kappa_geo / den
    s = abs(a_coef) ** 2 + abs(a_prime) ** 2 + 2 * abs(b_coef) ** 2
    p = (a_coef * b_coef).real + (a_prime * b_coef).real
    var_x = (s + 2 * p) / 8.0
    var_y = (s - 2 * p) / 8.0
    return var_x, var_y


def output_variances(drive: DriveParams) -> tuple[float, float]:
    """Resonant output quadrature variances.

    Returns the closed forms; they are verified on every call against the
    independent transfer-matrix assembly to 1e-10.  At the critical point
    the antisqueezed variance is infinite (returned as math.inf) and the
    squeezed one vanishes.
    """
    k = drive.kappa_geo
    if drive.is_critical:
        return math.inf, 0.0
    var_x = 0.25 * ((drive.Omega + k) / (drive.Omega - k)) ** 2
    var_y = 0.25 * ((drive.Omega - k) / (drive.Omega + k)) ** 2
    vx2, vy2 = _variances_from_transfer(drive, 0.0)
    if abs(vx2 - var_x) > 1e-10 * max(var_x, 1.0) or abs(vy2 - var_y) > 1e-10:
        raise CriticalPointError(
            f"closed-form variances disagree with the transfer assembly: "
            f"({var_x!r}, {var_y!r}) vs ({vx2!r}, {vy2!r})"
        )
    return var_x, var_y


def reduction_parameter(drive: DriveParams) -> float:
    """Noise-reduction exponent r with e^{-r}/4 the squeezed variance.

    Infinite (math.inf) at the perfect-squeezing point.
    """
    if drive.is_critical:
        return math.inf
    k = drive.kappa_geo
    return -2.0 * math.log(abs((drive.Omega - k) / (drive.Omega + k)))


def effective_displacements(drive: DriveParams) -> tuple[complex, complex]:
    """Classical displacement amplitudes carried by the output fields."""
    alpha0, beta0 = steady_displacements(drive)
    return (math.sqrt(drive.kappa_a) * alpha0, math.sqrt(drive.kappa_b) * beta0)


@dataclass(frozen=True)
class OutputStateDescription:
    """Displaced two-mode squeezed description of the resonant output.

    ``displacements_before`` are the amplitudes with the squeeze applied
    last, S D_a D_b |0>; ``displacements_after`` the converted amplitudes
    with the squeeze applied first, D_a D_b S |0>.  The conversion is the
    Bogoliubov pull-through of :func:`squeeze.pull_displacements_through`
    and is verified numerically at desk scale in the tests.  ``squeeze`` is
    real negative so the squeezed quadrature is Y, matching the variance
    conventions used throughout.
    """

    squeeze: complex
    displacements_before: tuple[complex, complex]
    displacements_after: tuple[complex, complex]


def output_state_description(drive: DriveParams) -> OutputStateDescription:
    if drive.is_critical:
        raise CriticalPointError(
            "output displacements diverge at the perfect-squeezing point"
        )
    r = reduction_parameter(drive)
    xi_eff = -r / 2.0
    alpha_eff, beta_eff = effective_displacements(drive)
    alpha_p, beta_p = pull_displacements_through(xi_eff, alpha_eff, beta_eff)
    return OutputStateDescription(
        squeeze=xi_eff,
        displacements_before=(alpha_eff, beta_eff),
        displacements_after=(alpha_p, beta_p),
    )


def variance_spectrum(drive: DriveParams, omega_grid) -> np.ndarray:
    """(w, var_X_out, var_Y_out) rows over a sideband-frequency grid.

    Assembled from the transfer coefficients with vacuum inputs; at w = 0 it
    reproduces the resonant closed forms exactly, and far sidebands recover
    the vacuum level 1/4.
    """
    rows = []
    for w in np.asarray(omega_grid, dtype=float):
        vx, vy = _variances_from_transfer(drive, float(w))
        rows.append((float(w), vx, vy))
    return np.array(rows, dtype=float)


@dataclass(frozen=True)
class IntracavityMoments:
    """Steady second moments of the intracavity fluctuation modes."""

    n_a: float
    n_b: float
    pair: complex  # <a'b'>


def intracavity_moments(drive: DriveParams) -> IntracavityMoments:
    """Closed-form steady moments implied by the frequency-domain solution.

    Valid below threshold (Omega < sqrt(kappa_a kappa_b)); the frequency
    integrals of the intracavity transfer coefficients evaluate to the
    rational forms used here (cross-checked numerically in the tests).
    """
    prod = drive.kappa_a * drive.kappa_b
    if drive.Omega**2 >= prod:
        raise CriticalPointError(
            "steady intracavity moments exist only below threshold"
        )
    den = (prod - drive.Omega**2) * (drive.kappa_a + drive.kappa_b)
    n_a = drive.kappa_b * drive.Omega**2 / den
    n_b = drive.kappa_a * drive.Omega**2 / den
    pair = prod * drive.Omega / den
    return IntracavityMoments(n_a=n_a, n_b=n_b, pair=complex(pair))


@dataclass(frozen=True)
class IOResult:
    """Bundle of all resonant input-output observables for reporting."""

    drive: DriveParams
    is_critical: bool
    alpha_0: complex | None
    beta_0: complex | None
    var_X_out: float
    var_Y_out: float
    r: float
    alpha_eff: complex | None
    beta_eff: complex | None
    description: OutputStateDescription | None

    def __post_init__(self):
        if not self.is_critical:
            prod = self.var_X_out * self.var_Y_out
            if abs(prod - 1.0 / 16.0) > 1e-12:
                raise CriticalPointError(
                    f"minimum-uncertainty identity violated: product {prod!r}"
                )
            if not (self.var_Y_out <= 0.25 <= self.var_X_out):
                raise CriticalPointError(
                    f"variances out of range: ({self.var_X_out}, {self.var_Y_out})"
                )


def compute_io_result(drive: DriveParams) -> IOResult:
    """Assemble every resonant observable, with explicit critical markers."""
    var_x, var_y = output_variances(drive)
    r = reduction_parameter(drive)
    if drive.is_critical:
        return IOResult(drive=drive, is_critical=True,
                        alpha_0=None, beta_0=None,
                        var_X_out=var_x, var_Y_out=var_y, r=r,
                        alpha_eff=None, beta_eff=None, description=None)
    alpha0, beta0 = steady_displacements(drive)
    alpha_eff, beta_eff = effective_displacements(drive)
    return IOResult(drive=drive, is_critical=False,
                    alpha_0=alpha0, beta_0=beta0,
                    var_X_out=var_x, var_Y_out=var_y, r=r,
                    alpha_eff=alpha_eff, beta_eff=beta_eff,
                    description=output_state_description(drive))
