"""Physical parameters, mode geometry, and derived effective quantities.

Unit conventions
----------------
Frequencies, couplings and decay rates are dimensionless ratios in units of a
reference coupling g; times are in units of 1/g.  Geometry lengths are in
meters and the laser frequencies fed to :func:`coherence_report` are angular
(rad/s); the ordinary-frequency variant of the mode-overlap ratio is reported
alongside, since either convention appears in practice.
"""

from __future__ import annotations

import cmath
import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .errors import SolverError

C_LIGHT = 299_792_458.0  # m/s


@dataclass(frozen=True)
class PhysicalParams:
    """All bare frequencies, couplings, detunings, decay rates and the
    interaction time.

    Detunings are stored redundantly alongside the bare frequencies:
    ``Delta_i`` are the Raman detunings, ``DeltaTilde_i`` the cavity
    detunings and ``delta_i = Delta_i - DeltaTilde_i`` the two-photon
    detunings.  Construction verifies every stored relation to 1e-12
    relative, so downstream code may use whichever form is convenient.
    """

    g_a: complex
    g_b: complex
    Omega_1: complex
    Omega_2: complex
    omega_a: float
    omega_b: float
    omega_0: float
    omega_1: float
    omega_2: float
    nu_1: float
    nu_2: float
    Delta_1: float
    Delta_2: float
    DeltaTilde_1: float
    DeltaTilde_2: float
    delta_1: float
    delta_2: float
    kappa_a: float = 0.0
    kappa_b: float = 0.0
    Gamma: float = 0.0
    tau: float = 1.0

    def __post_init__(self):
        for name in ("Delta_1", "Delta_2", "DeltaTilde_1", "DeltaTilde_2"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v!r}")
            if v == 0.0:
                raise ValueError(f"{name} must be nonzero")
        for name in ("omega_a", "omega_b", "omega_0", "omega_1", "omega_2",
                     "nu_1", "nu_2", "delta_1", "delta_2",
                     "kappa_a", "kappa_b", "Gamma", "tau"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        # tolerances are relative to the largest operand in each relation:
        # delta_i is a near-cancellation of two much larger detunings, so it
        # cannot be recovered to its own relative precision in float64
        _check_relation(self.delta_1, self.Delta_1 - self.DeltaTilde_1,
                        "delta_1 = Delta_1 - DeltaTilde_1",
                        max(abs(self.Delta_1), abs(self.DeltaTilde_1)))
        _check_relation(self.delta_2, self.Delta_2 - self.DeltaTilde_2,
                        "delta_2 = Delta_2 - DeltaTilde_2",
                        max(abs(self.Delta_2), abs(self.DeltaTilde_2)))
        _check_relation(self.Delta_1, self.omega_1 - self.omega_0 + self.nu_1,
                        "Delta_1 = omega_1 - omega_0 + nu_1",
                        max(abs(self.omega_1), abs(self.omega_0), abs(self.nu_1)))
        _check_relation(self.Delta_2, self.omega_2 - self.omega_0 + self.nu_2,
                        "Delta_2 = omega_2 - omega_0 + nu_2",
                        max(abs(self.omega_2), abs(self.omega_0), abs(self.nu_2)))
        _check_relation(self.DeltaTilde_1, self.omega_2 - self.omega_0 + self.omega_a,
                        "DeltaTilde_1 = omega_2 - omega_0 + omega_a",
                        max(abs(self.omega_2), abs(self.omega_0), abs(self.omega_a)))
        _check_relation(self.DeltaTilde_2, self.omega_1 - self.omega_0 + self.omega_b,
                        "DeltaTilde_2 = omega_1 - omega_0 + omega_b",
                        max(abs(self.omega_1), abs(self.omega_0), abs(self.omega_b)))

    @property
    def delta_tilde(self) -> float:
        """Common-mode two-photon detuning (delta_1 + delta_2) / 2."""
        return 0.5 * (self.delta_1 + self.delta_2)

    @classmethod
    def from_detunings(
        cls,
        *,
        g_a: complex,
        g_b: complex,
        Omega_1: complex,
        Omega_2: complex,
        Delta_1: float,
        Delta_2: float,
        delta_1: float,
        delta_2: float,
        kappa_a: float = 0.0,
        kappa_b: float = 0.0,
        Gamma: float = 0.0,
        tau: float = 1.0,
        omega_0: float = 0.0,
        nu_1: float = 0.0,
        nu_2: float = 0.0,
    ) -> "PhysicalParams":
        """Build a consistent parameter set from the detunings alone.

        The bare frequencies are filled in the gauge (omega_0, nu_1, nu_2
        given, default 0), which fixes omega_1, omega_2 and the cavity
        frequencies uniquely.  Only detuning differences enter any computed
        quantity, so the gauge choice is immaterial.
        """
        dt1 = Delta_1 - delta_1
        dt2 = Delta_2 - delta_2
        omega_1 = Delta_1 - nu_1 + omega_0
        omega_2 = Delta_2 - nu_2 + omega_0
        return cls(
            g_a=g_a, g_b=g_b, Omega_1=Omega_1, Omega_2=Omega_2,
            omega_a=dt1 - (omega_2 - omega_0),
            omega_b=dt2 - (omega_1 - omega_0),
            omega_0=omega_0, omega_1=omega_1, omega_2=omega_2,
            nu_1=nu_1, nu_2=nu_2,
            Delta_1=Delta_1, Delta_2=Delta_2,
            DeltaTilde_1=dt1, DeltaTilde_2=dt2,
            delta_1=delta_1, delta_2=delta_2,
            kappa_a=kappa_a, kappa_b=kappa_b, Gamma=Gamma, tau=tau,
        )

    def with_updates(self, **kwargs) -> "PhysicalParams":
        """Replace fields, re-deriving the redundant detuning relations.

        Supported direct knobs: any coupling, ``Delta_2`` (retunes nu_2 and
        DeltaTilde_2 consistently), ``delta_1``/``delta_2`` (retune the cavity
        detunings), decay rates, Gamma and tau.
        """
        f = {k.name: getattr(self, k.name) for k in dataclasses.fields(self)}
        if "Delta_2" in kwargs:
            new = kwargs.pop("Delta_2")
            f["nu_2"] = f["nu_2"] + (new - f["Delta_2"])
            f["DeltaTilde_2"] = new - f["delta_2"]
            f["omega_b"] = f["DeltaTilde_2"] - (f["omega_1"] - f["omega_0"])
            f["Delta_2"] = new
        if "delta_1" in kwargs:
            new = kwargs.pop("delta_1")
            f["DeltaTilde_1"] = f["Delta_1"] - new
            f["omega_a"] = f["DeltaTilde_1"] - (f["omega_2"] - f["omega_0"])
            f["delta_1"] = new
        if "delta_2" in kwargs:
            new = kwargs.pop("delta_2")
            f["DeltaTilde_2"] = f["Delta_2"] - new
            f["omega_b"] = f["DeltaTilde_2"] - (f["omega_1"] - f["omega_0"])
            f["delta_2"] = new
        for key, val in kwargs.items():
            if key not in f:
                raise ValueError(f"unknown parameter field {key!r}")
            f[key] = val
        return PhysicalParams(**f)


def _check_relation(stored: float, derived: float, label: str,
                    scale: float = 0.0) -> None:
    scale = max(abs(stored), abs(derived), scale, 1e-300)
    if abs(stored - derived) > 1e-12 * scale:
        raise ValueError(
            f"inconsistent parameter set: {label} violated "
            f"(stored {stored!r}, derived {derived!r})"
        )


@dataclass(frozen=True)
class ModeGeometry:
    """Cylindrical cavity-mode geometry and laser beam profile."""

    q_a: float
    q_b: float
    m: int = 0
    waist: float = 35e-6
    beam_width: float = 50e-6
    radial_profile: str = "gaussian"
    laser_profile: str = "uniform"
    c: float = C_LIGHT

    def __post_init__(self):
        if self.waist <= 0:
            raise ValueError("waist must be positive")
        if self.beam_width <= 0:
            raise ValueError("beam_width must be positive")
        if self.radial_profile not in ("gaussian", "uniform"):
            raise ValueError(f"unknown radial_profile {self.radial_profile!r}")
        if self.laser_profile not in ("gaussian", "uniform"):
            raise ValueError(f"unknown laser_profile {self.laser_profile!r}")


@dataclass(frozen=True)
class AtomSite:
    """Position of one atom and the mode values evaluated there."""

    position: tuple[float, float, float]  # (z, rho, phi)
    u_a: complex = 1.0
    u_b: complex = 1.0
    v_1: complex = 1.0
    v_2: complex = 1.0

    def __post_init__(self):
        for name in ("u_a", "u_b", "v_1", "v_2"):
            if abs(getattr(self, name)) > 1.0 + 1e-12:
                raise ValueError(f"|{name}| exceeds 1 (normalized mode values)")


def mode_amplitude(geometry: ModeGeometry, position: tuple[float, float, float],
                   which_mode: str) -> complex:
    """Normalized mode value at a cylindrical position (z, rho, phi).

    Cavity modes carry the standing-wave axial factor and opposite azimuthal
    phases; the counterpropagating lasers are homogeneous by default with a
    Gaussian axial profile as an option.
    """
    z, rho, phi = position
    if which_mode in ("a", "b"):
        q = geometry.q_a if which_mode == "a" else geometry.q_b
        sign = 1 if which_mode == "a" else -1
        radial = math.exp(-(rho / geometry.waist) ** 2) \
            if geometry.radial_profile == "gaussian" else 1.0
        return math.sin(q * z) * radial * cmath.exp(1j * sign * geometry.m * phi)
    if which_mode in ("laser1", "laser2"):
        if geometry.laser_profile == "gaussian":
            return complex(math.exp(-(z / geometry.beam_width) ** 2))
        return 1.0 + 0.0j
    raise ValueError(f"unknown mode {which_mode!r}")


@dataclass(frozen=True)
class CoherenceReport:
    """Dimensionless mode-overlap criteria for coherent ensemble coupling."""

    ratio_axial: float           # d |q_a - q_b|
    ratio_laser: float           # w |nu_1 - nu_2| / c, angular frequencies
    ratio_laser_ordinary: float  # same with ordinary frequencies
    threshold: float
    ok: bool


def coherence_report(geometry: ModeGeometry, nu_1: float, nu_2: float,
                     threshold: float = 0.1) -> CoherenceReport:
    """Evaluate both smallness criteria for coherent collective coupling.

    ``nu_1`` and ``nu_2`` are angular laser frequencies in rad/s.  The
    laser-splitting ratio is the phase mismatch w*|nu_1-nu_2|/c across the
    waist; its ordinary-frequency variant (divide by 2*pi) is reported too.
    """
    ratio_axial = geometry.beam_width * abs(geometry.q_a - geometry.q_b)
    ratio_laser = geometry.waist * abs(nu_1 - nu_2) / geometry.c
    ok = ratio_axial < threshold and ratio_laser < threshold
    return CoherenceReport(ratio_axial, ratio_laser, ratio_laser / (2 * math.pi),
                           threshold, ok)


# ---------------------------------------------------------------------------
# site generation
# ---------------------------------------------------------------------------

def uniform_sites(n: int) -> list[AtomSite]:
    """n sites with all mode values exactly 1 (idealized uniform coupling)."""
    return [AtomSite(position=(0.0, 0.0, 0.0)) for _ in range(n)]


def random_sites(geometry: ModeGeometry, n: int, seed: int) -> list[AtomSite]:
    """n atoms uniformly distributed in a cylinder of radius w and length d.

    The cylinder is centered on an antinode of mode a.  Draw order per site:
    (z, radial area fraction, phi), from a single seeded generator, so a fixed
    seed reproduces the ensemble exactly.
    """
    rng = np.random.default_rng(seed)
    z0 = math.pi / (2 * geometry.q_a) if geometry.q_a != 0 else 0.0
    sites = []
    for _ in range(n):
        z = z0 + geometry.beam_width * (rng.random() - 0.5)
        rho = geometry.waist * math.sqrt(rng.random())
        phi = 2 * math.pi * rng.random()
        pos = (z, rho, phi)
        sites.append(AtomSite(
            position=pos,
            u_a=mode_amplitude(geometry, pos, "a"),
            u_b=mode_amplitude(geometry, pos, "b"),
            v_1=mode_amplitude(geometry, pos, "laser1"),
            v_2=mode_amplitude(geometry, pos, "laser2"),
        ))
    return sites


# ---------------------------------------------------------------------------
# derived effective quantities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PerAtom:
    """Per-atom couplings and detunings (vectorized over sites)."""

    Omega_k1: np.ndarray
    Omega_k2: np.ndarray
    g_ka: np.ndarray
    g_kb: np.ndarray
    delta_k: np.ndarray
    OmegaTilde_ka: np.ndarray
    OmegaTilde_kb: np.ndarray


def per_atom_quantities(params: PhysicalParams, sites: list[AtomSite]) -> PerAtom:
    u_a = np.array([s.u_a for s in sites], dtype=np.complex128)
    u_b = np.array([s.u_b for s in sites], dtype=np.complex128)
    v_1 = np.array([s.v_1 for s in sites], dtype=np.complex128)
    v_2 = np.array([s.v_2 for s in sites], dtype=np.complex128)
    Ok1 = params.Omega_1 * v_1
    Ok2 = params.Omega_2 * v_2
    gka = params.g_a * u_a
    gkb = params.g_b * u_b
    delta_k = (
        0.5 * (params.delta_2 - params.delta_1)
        + np.abs(Ok2) ** 2 / params.Delta_2
        - np.abs(Ok1) ** 2 / params.Delta_1
    )
    zero = np.flatnonzero(delta_k == 0.0)
    if zero.size:
        raise SolverError(
            f"shifted two-photon detuning delta_k vanishes for atom(s) "
            f"{(zero + 1).tolist()}: time-averaging collapses"
        )
    return PerAtom(
        Omega_k1=Ok1, Omega_k2=Ok2, g_ka=gka, g_kb=gkb, delta_k=delta_k,
        OmegaTilde_ka=np.conj(Ok1) * gka / params.Delta_1,
        OmegaTilde_kb=np.conj(Ok2) * gkb / params.Delta_2,
    )


@dataclass(frozen=True)
class EffectiveModel:
    """Derived effective interaction: detunings, couplings and gauges."""

    delta_k: np.ndarray
    OmegaTilde_ka: np.ndarray
    OmegaTilde_kb: np.ndarray
    delta_tilde: float
    Omega_eff: complex
    xi: complex
    condition_lhs: float
    condition_rhs: float
    condition_residual: float
    regime_margins: list[tuple[str, float]]

    @property
    def n_atoms(self) -> int:
        return len(self.delta_k)


def condition_sides(params: PhysicalParams, sites: list[AtomSite],
                    per_atom: PerAtom | None = None) -> tuple[float, float]:
    """Both sides of the balance condition that cancels the residual
    mode-frequency pulls (each should equal the stored delta_tilde)."""
    pa = per_atom if per_atom is not None else per_atom_quantities(params, sites)
    lhs = float(np.sum(np.abs(pa.OmegaTilde_ka) ** 2 / pa.delta_k
                       + np.abs(pa.g_ka) ** 2 / params.DeltaTilde_1))
    rhs = float(np.sum(np.abs(pa.OmegaTilde_kb) ** 2 / pa.delta_k))
    return lhs, rhs


def condition_residual(params: PhysicalParams, sites: list[AtomSite]) -> float:
    """LHS - RHS of the balance condition (angular frequency, units of g)."""
    lhs, rhs = condition_sides(params, sites)
    return lhs - rhs


def squeeze_parameter(params: PhysicalParams, sites: list[AtomSite],
                      tau: float) -> complex:
    """Squeeze parameter accumulated over an interaction time tau.

    Equals Omega_eff * tau for real detunings.  The dynamical amplitude that
    enters the engineered squeeze operator is i * Omega_eff * tau; see
    :func:`cavsqueeze.squeeze.from_parametric_coupling` for that convention.
    """
    pa = per_atom_quantities(params, sites)
    return tau * complex(np.sum(
        pa.Omega_k1 * pa.Omega_k2 * np.conj(pa.g_ka) * np.conj(pa.g_kb)
        / (pa.delta_k * params.Delta_1 * params.Delta_2)
    ))


def derive_effective(params: PhysicalParams, sites: list[AtomSite],
                     regime_margin: float = 10.0) -> EffectiveModel:
    """Populate every derived effective quantity for a parameter set."""
    pa = per_atom_quantities(params, sites)
    omega_eff = complex(np.sum(
        np.conj(pa.OmegaTilde_ka) * np.conj(pa.OmegaTilde_kb) / pa.delta_k
    ))
    xi = params.tau * complex(np.sum(
        pa.Omega_k1 * pa.Omega_k2 * np.conj(pa.g_ka) * np.conj(pa.g_kb)
        / (pa.delta_k * params.Delta_1 * params.Delta_2)
    ))
    lhs, rhs = condition_sides(params, sites, pa)
    margins = [(e.name, e.actual) for e in
               regime_report(params, sites, params.tau, margin=regime_margin)]
    return EffectiveModel(
        delta_k=pa.delta_k,
        OmegaTilde_ka=pa.OmegaTilde_ka,
        OmegaTilde_kb=pa.OmegaTilde_kb,
        delta_tilde=params.delta_tilde,
        Omega_eff=omega_eff,
        xi=xi,
        condition_lhs=lhs,
        condition_rhs=rhs,
        condition_residual=lhs - rhs,
        regime_margins=margins,
    )


# ---------------------------------------------------------------------------
# regime validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegimeEntry:
    name: str
    required: float
    actual: float
    ok: bool


def regime_report(params: PhysicalParams, sites: list[AtomSite], t: float,
                  margin: float = 10.0) -> list[RegimeEntry]:
    """Every inequality of the two detuning hierarchies as (name, ratio) rows.

    The first hierarchy compares all dispersive detunings against every bare
    coupling and two-photon detuning; the second compares the shifted
    two-photon detunings delta_k against the effective couplings, cavity Stark
    pulls and the frame shift, plus the secularity requirement |delta_k| t.
    Ratios are worst case over atoms.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    pa = per_atom_quantities(params, sites)
    entries: list[RegimeEntry] = []

    large = {
        "|Delta_1|": abs(params.Delta_1),
        "|Delta_2|": abs(params.Delta_2),
        "|DeltaTilde_1|": abs(params.DeltaTilde_1),
        "|DeltaTilde_2|": abs(params.DeltaTilde_2),
        "|Delta_1-Delta_2|": abs(params.Delta_1 - params.Delta_2),
        "|DeltaTilde_1-DeltaTilde_2|": abs(params.DeltaTilde_1 - params.DeltaTilde_2),
        "|DeltaTilde_1-Delta_2|": abs(params.DeltaTilde_1 - params.Delta_2),
        "|DeltaTilde_2-Delta_1|": abs(params.DeltaTilde_2 - params.Delta_1),
    }
    small = {
        "|delta_1|": abs(params.delta_1),
        "|delta_2|": abs(params.delta_2),
        "|g_ka|": float(np.max(np.abs(pa.g_ka))) if sites else 0.0,
        "|g_kb|": float(np.max(np.abs(pa.g_kb))) if sites else 0.0,
        "|Omega_k1|": float(np.max(np.abs(pa.Omega_k1))) if sites else 0.0,
        "|Omega_k2|": float(np.max(np.abs(pa.Omega_k2))) if sites else 0.0,
    }
    for lname, lval in large.items():
        for sname, sval in small.items():
            ratio = lval / sval if sval > 0 else math.inf
            entries.append(RegimeEntry(f"{lname}/{sname}", margin, ratio,
                                       ratio >= margin))

    abs_dk = np.abs(pa.delta_k)
    entries.append(RegimeEntry("|delta_k|*t", margin,
                               float(abs_dk.min() * t) if sites else math.inf,
                               (not sites) or abs_dk.min() * t >= margin))
    comparisons = {
        "|OmegaTilde_ka|": np.abs(pa.OmegaTilde_ka),
        "|OmegaTilde_kb|": np.abs(pa.OmegaTilde_kb),
        "|g_ka|^2/|DeltaTilde_1|": np.abs(pa.g_ka) ** 2 / abs(params.DeltaTilde_1),
        "|g_kb|^2/|DeltaTilde_2|": np.abs(pa.g_kb) ** 2 / abs(params.DeltaTilde_2),
        "|deltaTilde|": np.full(len(sites), abs(params.delta_tilde)) if sites else np.array([]),
    }
    for name, vals in comparisons.items():
        if sites and np.any(vals > 0):
            with np.errstate(divide="ignore"):
                ratio = float(np.min(np.where(vals > 0, abs_dk / np.maximum(vals, 1e-300), math.inf)))
        else:
            ratio = math.inf
        entries.append(RegimeEntry(f"|delta_k|/{name}", margin, ratio,
                                   ratio >= margin))
    return entries


# ---------------------------------------------------------------------------
# balance-condition solver
# ---------------------------------------------------------------------------

def solve_condition(params: PhysicalParams, sites: list[AtomSite],
                    free_parameter: str = "Omega_2",
                    rel_tol: float = 1e-6,
                    max_expand: int = 200) -> PhysicalParams:
    """Retune one knob until the balance-condition residual vanishes.

    ``free_parameter`` is ``"Omega_2"`` (classical field strength ratio) or
    ``"Delta_2"`` (detuning ratio); the knob is scaled multiplicatively and
    found by bisection after geometric bracket expansion.  All other fields
    are untouched.  Tolerance is relative to |delta_tilde| (or to the
    condition sides when delta_tilde is zero).
    """
    if free_parameter not in ("Omega_2", "Delta_2"):
        raise SolverError(f"unsupported free parameter {free_parameter!r}")

    def rescaled(scale: float) -> PhysicalParams:
        if free_parameter == "Omega_2":
            return params.with_updates(Omega_2=params.Omega_2 * scale)
        return params.with_updates(Delta_2=params.Delta_2 * scale)

    lhs0, rhs0 = condition_sides(params, sites)
    scale_ref = abs(params.delta_tilde)
    if scale_ref == 0.0:
        scale_ref = max(abs(lhs0), abs(rhs0), 1e-30)
    target = rel_tol * scale_ref

    def residual(scale: float) -> float | None:
        # None marks a pole of the residual (some delta_k crosses zero there)
        try:
            return condition_residual(rescaled(scale), sites)
        except SolverError:
            return None

    f1 = lhs0 - rhs0
    if abs(f1) <= target:
        return params

    def bisect(a: float, b: float, fa: float) -> float | None:
        mid = 0.5 * (a + b)
        for _ in range(200):
            mid = 0.5 * (a + b)
            if (b - a) <= 1e-14 * abs(b):
                break
            fm = residual(mid)
            if fm == 0.0:
                break
            if fm is not None and (fm < 0) == (fa < 0):
                a, fa = mid, fm
            else:
                b = mid
        final = residual(mid)
        # a sign change across a pole converges to the pole, not a root;
        # reject it and let the bracket search continue outwards
        if final is None or abs(final) > target:
            return None
        return mid

    # walk a geometric ladder outwards from scale = 1 in both directions,
    # bisecting every candidate sign change until a genuine root is found
    factor = 1.05
    tried: list[tuple[float, float]] = []
    for direction in (factor, 1.0 / factor):
        prev_s, prev_f = 1.0, f1
        s = 1.0
        for _ in range(max_expand):
            s *= direction
            f = residual(s)
            if f is None:
                prev_f = None
                continue
            if prev_f is not None and (f < 0) != (prev_f < 0):
                lo_s, hi_s = min(prev_s, s), max(prev_s, s)
                f_lo = prev_f if prev_s < s else f
                root = bisect(lo_s, hi_s, f_lo)
                if root is not None:
                    return rescaled(root)
                tried.append((lo_s, hi_s))
            prev_s, prev_f = s, f
    raise SolverError(
        f"no root of the condition residual for {free_parameter} scales in "
        f"[{factor**-max_expand:.3g}, {factor**max_expand:.3g}]; "
        f"rejected sign changes (poles) at {tried!r}" if tried else
        f"no sign change of the condition residual for {free_parameter} "
        f"scales in [{factor**-max_expand:.3g}, {factor**max_expand:.3g}]"
    )


def balance_condition(params: PhysicalParams, sites: list[AtomSite],
                      free_parameter: str = "Omega_2",
                      rel_tol: float = 1e-6,
                      max_rounds: int = 12) -> PhysicalParams:
    """Enforce the full balance condition: LHS = RHS = stored delta_tilde.

    Alternates :func:`solve_condition` (which equalizes the two sides by
    retuning ``free_parameter``) with recentering the two-photon detunings so
    their mean matches the common side.  Recentering shifts delta_1 and
    delta_2 by the same amount, which preserves every delta_k and perturbs
    the cavity detunings only at second order, so the loop converges in a
    few rounds.
    """
    p = params
    for _ in range(max_rounds):
        p = solve_condition(p, sites, free_parameter, rel_tol)
        lhs, rhs = condition_sides(p, sites)
        scale = max(abs(lhs), abs(rhs), 1e-30)
        shift = 0.5 * (lhs + rhs) - p.delta_tilde
        if abs(shift) <= rel_tol * scale and abs(lhs - rhs) <= rel_tol * scale:
            return p
        p = p.with_updates(delta_1=p.delta_1 + shift, delta_2=p.delta_2 + shift)
    raise SolverError(
        "balance_condition failed to converge; the delta recentering keeps "
        "moving the condition sides"
    )


# ---------------------------------------------------------------------------
# dissipation and self-consistent squeezing estimates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseEstimate:
    """Photon-number, dissipation-time and spontaneous-emission estimates.

    ``tau_diss`` and ``N_Gamma`` are ``None`` when the squeeze parameter is
    zero (no photons, dissipation time unbounded).
    """

    n_bar: float
    tau_diss: float | None
    N_Gamma: float | None
    xi_max: float

    @property
    def unbounded(self) -> bool:
        return self.tau_diss is None

    def __post_init__(self):
        if self.n_bar < 0 or self.xi_max < 0:
            raise ValueError("noise estimates must be nonnegative")
        if self.tau_diss is not None and self.tau_diss < 0:
            raise ValueError("tau_diss must be nonnegative")
        if self.N_Gamma is not None and self.N_Gamma < 0:
            raise ValueError("N_Gamma must be nonnegative")


@dataclass(frozen=True)
class MaxSqueeze:
    """Fixed point of the squeezing-vs-dissipation balance."""

    xi_max: float
    squeezing_fraction: float
    residual: float


def max_squeeze(params: PhysicalParams | None = None,
                sites: list[AtomSite] | None = None, *,
                coupling_ratio: float | None = None,
                rel_tol: float = 1e-10) -> MaxSqueeze:
    """Solve x * sinh^2(2x) = |Omega_eff| / kappa for the maximal squeeze
    parameter reachable before cavity decay wins.

    The ratio may be passed directly via ``coupling_ratio``; otherwise it is
    derived from the parameter set (kappa = sqrt(kappa_a * kappa_b)).  The
    left-hand side is strictly increasing, so bisection with bracket doubling
    always converges; the defining-equation residual is returned for
    self-verification.
    """
    if coupling_ratio is None:
        if params is None or sites is None:
            raise SolverError("need either coupling_ratio or (params, sites)")
        kappa = math.sqrt(params.kappa_a * params.kappa_b)
        if kappa <= 0:
            raise SolverError("kappa must be positive for the dissipation balance")
        model = derive_effective(params, sites)
        coupling_ratio = abs(model.Omega_eff) / kappa
    if coupling_ratio < 0:
        raise SolverError("coupling ratio must be nonnegative")
    if coupling_ratio == 0.0:
        return MaxSqueeze(0.0, 0.0, 0.0)

    def f(x: float) -> float:
        return x * math.sinh(2 * x) ** 2 - coupling_ratio

    hi = 1.0
    for _ in range(200):
        if f(hi) > 0:
            break
        hi *= 2.0
    else:
        raise SolverError("failed to bracket the squeezing fixed point")
    lo = 0.0
    for _ in range(500):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= rel_tol * hi:
            break
    else:
        raise SolverError("squeezing fixed-point bisection did not converge")
    x = 0.5 * (lo + hi)
    return MaxSqueeze(x, 1.0 - math.exp(-2 * x), f(x))


def dissipation_estimate(params: PhysicalParams, sites: list[AtomSite],
                         xi: complex) -> NoiseEstimate:
    """Mean photon number, dissipation time and spontaneous-emission count.

    Uses the two-mode convention n_bar = sinh^2(2|xi|) for the dissipation
    time (the per-mode photon number sinh^2(|xi|) is available from
    :func:`cavsqueeze.squeeze.squeezed_vacuum_analytics` for comparison).
    The emitted-photon estimate takes the worst per-atom drive-to-detuning
    ratio over the ensemble.
    """
    kappa = math.sqrt(params.kappa_a * params.kappa_b)
    if kappa <= 0:
        raise SolverError("kappa must be positive for dissipation estimates")
    pa = per_atom_quantities(params, sites)
    ratio_sq = float(np.max(np.abs(pa.Omega_k1) ** 2)) / params.Delta_1 ** 2 \
        if sites else 0.0
    model_omega = complex(np.sum(
        np.conj(pa.OmegaTilde_ka) * np.conj(pa.OmegaTilde_kb) / pa.delta_k
    ))
    xi_max = max_squeeze(coupling_ratio=abs(model_omega) / kappa).xi_max

    n_bar = math.sinh(2 * abs(xi)) ** 2
    if n_bar == 0.0:
        return NoiseEstimate(n_bar=0.0, tau_diss=None, N_Gamma=None, xi_max=xi_max)
    tau_diss = 1.0 / (kappa * n_bar)
    n_gamma = len(sites) * params.Gamma * ratio_sq * tau_diss
    return NoiseEstimate(n_bar=n_bar, tau_diss=tau_diss, N_Gamma=n_gamma,
                         xi_max=xi_max)


# ---------------------------------------------------------------------------
# canonical parameter sets
# ---------------------------------------------------------------------------

def reference_set(n_atoms: int = 39_900, tau: float = 1.0,
                  kappa: float = 0.2, Gamma: float = 0.0) -> tuple[PhysicalParams, list[AtomSite]]:
    """Canonical rubidium-ensemble example used in the docs and tests.

    Drive 100g on the first Raman leg, 10g on the second, dispersive ratio
    100, detuning ratio 2, uniform coupling.  With the default N = 39900 the
    balance condition holds exactly and the effective parametric coupling is
    exactly -g/5; N = 40000 is the commonly quoted round number and changes
    the coupling by 0.25%.
    """
    p = PhysicalParams.from_detunings(
        g_a=1.0, g_b=1.0, Omega_1=100.0, Omega_2=10.0,
        Delta_1=1e4, Delta_2=2e4,
        delta_1=-3.0 / 400.0, delta_2=-1.0 / 80.0,
        kappa_a=kappa, kappa_b=kappa, Gamma=Gamma, tau=tau,
    )
    return p, uniform_sites(n_atoms)


@dataclass(frozen=True)
class FamilyResult:
    params: PhysicalParams
    sites: list[AtomSite]
    tau: float            # interaction time reaching the target |xi|
    margin: float


def dispersive_family(margin: float, n_atoms: int = 1,
                      xi_target: float = 0.1,
                      kappa: float = 0.2) -> FamilyResult:
    """Parameter family with both detuning hierarchies at a common margin.

    The family is homothetic to :func:`reference_set`: drive margin*g,
    second leg margin/10*g, dispersive detuning margin^2*g.  The two-photon
    detunings are then placed so that BOTH equalities of the balance
    condition hold exactly for uniform sites (iterating the weak dependence
    of the cavity detuning on delta_1 to convergence), and the interaction
    time is set so the accumulated squeeze parameter is ``xi_target``.
    """
    if margin <= 1:
        raise ValueError("margin must exceed 1")
    g = 1.0
    Omega_1 = margin * g
    Omega_2 = margin * g / 10.0
    Delta_1 = margin**2 * g
    Delta_2 = 2 * margin**2 * g

    delta_1 = 0.0
    delta_k = delta_2 = 0.0
    for _ in range(6):
        Dt1 = Delta_1 - delta_1
        r_a = Omega_1 / Delta_1
        r_b = Omega_2 / Delta_2
        delta_k = -(r_a**2 - r_b**2) * Dt1 / g**2
        delta_tilde = n_atoms * r_b**2 / delta_k
        stark = Omega_2**2 / Delta_2 - Omega_1**2 / Delta_1
        half = delta_k - stark
        delta_1 = delta_tilde - half
        delta_2 = delta_tilde + half

    sites = uniform_sites(n_atoms)
    p = PhysicalParams.from_detunings(
        g_a=g, g_b=g, Omega_1=Omega_1, Omega_2=Omega_2,
        Delta_1=Delta_1, Delta_2=Delta_2,
        delta_1=delta_1, delta_2=delta_2,
        kappa_a=kappa, kappa_b=kappa, tau=1.0,
    )
    omega_eff = derive_effective(p, sites).Omega_eff
    tau = xi_target / abs(omega_eff)
    p = p.with_updates(tau=tau)
    return FamilyResult(params=p, sites=sites, tau=tau, margin=margin)
