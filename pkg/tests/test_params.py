import math
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from cavsqueeze import params as pm
from cavsqueeze.errors import SolverError


@pytest.fixture(scope="module")
def reference():
    return pm.reference_set(n_atoms=39_900, tau=1.0)


def exact_reference_quantities(n_atoms):
    """Independent exact-fraction evaluation of the reference parameter set."""
    O1, O2, D1, D2 = F(100), F(10), F(10**4), F(2 * 10**4)
    d1, d2 = F(-3, 400), F(-1, 80)
    dk = (d2 - d1) / 2 + O2**2 / D2 - O1**2 / D1
    dtilde = (d1 + d2) / 2
    oka = O1 / D1
    okb = O2 / D2
    omega = n_atoms * oka * okb / dk
    lhs = n_atoms * (oka**2 / dk + F(1) / (D1 - d1))
    rhs = n_atoms * okb**2 / dk
    return dk, dtilde, omega, lhs - rhs


def test_reference_set_exact_values(reference):
    p, sites = reference
    model = pm.derive_effective(p, sites)
    dk, dtilde, omega, residual = exact_reference_quantities(39_900)
    assert dk == -(1 - F(1, 400))
    assert dtilde == F(-1, 100)
    assert omega == F(-1, 5)

    assert np.allclose(model.delta_k, float(dk), rtol=1e-14)
    assert abs(model.delta_tilde - float(dtilde)) < 1e-14
    assert abs(model.Omega_eff - float(omega)) < 1e-12 * abs(float(omega))
    # the residual is a near-cancellation of the two condition sides, so the
    # float evaluation matches the exact fraction to 1e-12 of the sides
    assert abs(model.condition_residual - float(residual)) < 1e-12 * abs(float(dtilde))
    assert abs(model.condition_residual) / abs(model.delta_tilde) < 1e-3


def test_rounded_ensemble_size_shifts_coupling():
    # with the rounded N = 40000 the coupling is exactly -80/399, not -1/5
    p, sites = pm.reference_set(n_atoms=40_000)
    model = pm.derive_effective(p, sites)
    _, _, omega, _ = exact_reference_quantities(40_000)
    assert omega == F(-80, 399)
    assert abs(model.Omega_eff - float(omega)) < 1e-12 * abs(float(omega))
    assert abs(model.Omega_eff - (-0.2)) / 0.2 < 3e-3  # the quoted round value


def test_single_atom_effective_coupling():
    p, sites = pm.reference_set(n_atoms=1)
    model = pm.derive_effective(p, sites)
    # oracle: exact fraction (1/100)(1/2000)/(-399/400) = -1/199500
    expected = F(1, 100) * F(1, 2000) / (-(1 - F(1, 400)))
    assert expected == F(-1, 199_500)
    assert abs(model.Omega_eff - float(expected)) < 1e-12 * abs(float(expected))


def test_zero_drive_kills_coupling():
    p, sites = pm.reference_set(n_atoms=10)
    p0 = p.with_updates(Omega_1=0.0)
    model = pm.derive_effective(p0, sites)
    assert model.Omega_eff == 0.0
    assert model.xi == 0.0


def test_detuning_relation_validation():
    p, _ = pm.reference_set(n_atoms=1)
    with pytest.raises(ValueError):
        pm.PhysicalParams(
            **{**{f.name: getattr(p, f.name) for f in p.__dataclass_fields__.values()},
               "delta_1": p.delta_1 + 1.0}
        )


def test_mode_amplitude_values():
    geo = pm.ModeGeometry(q_a=2 * math.pi / 780e-9, q_b=2 * math.pi / 780e-9, m=1)
    antinode = math.pi / (2 * geo.q_a)
    assert abs(pm.mode_amplitude(geo, (antinode, 0.0, 0.0), "a") - 1.0) < 1e-12
    assert pm.mode_amplitude(geo, (0.0, 0.0, 0.0), "a") == 0.0
    val = pm.mode_amplitude(geo, (antinode, 0.0, math.pi / 2), "a")
    assert abs(val - 1j) < 1e-12
    # mode b rotates the opposite way
    val_b = pm.mode_amplitude(geo, (antinode, 0.0, math.pi / 2), "b")
    assert abs(val_b + 1j) < 1e-12


def test_coherence_report_values():
    q = 2 * math.pi / 780e-9
    geo = pm.ModeGeometry(q_a=q, q_b=q, waist=35e-6, beam_width=50e-6)
    nu1 = 0.0
    nu2 = 2 * math.pi * 3e9
    rep = pm.coherence_report(geo, nu1, nu2)
    assert rep.ratio_axial == 0.0
    # oracle: direct arithmetic 35e-6 * 2*pi*3e9 / c
    expected = 35e-6 * 2 * math.pi * 3e9 / pm.C_LIGHT
    assert abs(rep.ratio_laser - expected) < 1e-15
    assert abs(expected - 2.2e-3) < 1e-5  # ~2.2e-3 for a 3 GHz splitting
    assert abs(rep.ratio_laser_ordinary - expected / (2 * math.pi)) < 1e-18
    assert rep.ok  # 2.2e-3 is comfortably below the 0.1 threshold

    geo2 = pm.ModeGeometry(q_a=q, q_b=q - 1e4, waist=35e-6, beam_width=50e-6)
    rep2 = pm.coherence_report(geo2, nu1, nu2)
    assert abs(rep2.ratio_axial - 0.5) < 1e-12
    assert not rep2.ok  # axial splitting ratio 0.5 fails the 0.1 threshold

    geo3 = pm.ModeGeometry(q_a=q, q_b=q - 1e3, waist=35e-6, beam_width=50e-6)
    rep3 = pm.coherence_report(geo3, nu1, nu2)
    assert abs(rep3.ratio_axial - 0.05) < 1e-12
    assert rep3.ok


def test_random_sites_deterministic_and_bounded():
    q = 2 * math.pi / 780e-9
    geo = pm.ModeGeometry(q_a=q, q_b=0.999 * q, m=1)
    s1 = pm.random_sites(geo, 25, seed=42)
    s2 = pm.random_sites(geo, 25, seed=42)
    assert all(a == b for a, b in zip(s1, s2))
    assert all(abs(s.u_a) <= 1 + 1e-12 for s in s1)
    s3 = pm.random_sites(geo, 25, seed=43)
    assert any(a != b for a, b in zip(s1, s3))


def test_condition_residual_zero_couplings():
    p, sites = pm.reference_set(n_atoms=3)
    p0 = p.with_updates(Omega_1=0.0, Omega_2=0.0, g_a=0.0, g_b=0.0)
    assert pm.condition_residual(p0, sites) == 0.0


def test_condition_residual_site_permutation_invariant():
    q = 2 * math.pi / 780e-9
    geo = pm.ModeGeometry(q_a=q, q_b=0.98 * q)
    p, _ = pm.reference_set(n_atoms=1)
    sites = pm.random_sites(geo, 12, seed=5)
    r1 = pm.condition_residual(p, sites)
    r2 = pm.condition_residual(p, list(reversed(sites)))
    assert abs(r1 - r2) < 1e-15 * max(1.0, abs(r1))


def test_solve_condition_recovers_after_perturbation(reference):
    p, sites = reference
    sites = sites[:200]  # smaller ensemble keeps the scan oracle cheap
    broken = p.with_updates(Omega_2=p.Omega_2 * 1.1)
    assert abs(pm.condition_residual(broken, sites)) > 0

    fixed = pm.solve_condition(broken, sites, "Omega_2")
    res = pm.condition_residual(fixed, sites)
    assert abs(res) <= 1e-6 * abs(fixed.delta_tilde)

    # oracle: root of the same residual via brentq on the scale factor
    def f(s):
        return pm.condition_residual(broken.with_updates(Omega_2=broken.Omega_2 * s), sites)

    root = brentq(f, 0.5, 1.5, xtol=1e-14)
    assert abs(abs(fixed.Omega_2) - abs(broken.Omega_2) * root) < 1e-9 * abs(broken.Omega_2)


def test_solve_condition_fixed_point():
    fam = pm.dispersive_family(30.0, n_atoms=2)
    out = pm.solve_condition(fam.params, fam.sites, "Omega_2")
    assert out is fam.params  # already satisfied, returned unchanged


def test_solve_condition_delta_knob(reference):
    p, sites = reference
    broken = p.with_updates(Omega_2=p.Omega_2 * 1.05)
    fixed = pm.solve_condition(broken, sites, "Delta_2")
    assert abs(pm.condition_residual(fixed, sites)) <= 1e-6 * abs(fixed.delta_tilde)
    assert fixed.Omega_2 == broken.Omega_2


def test_regime_report_reference_margins(reference):
    p, sites = reference
    rows = pm.regime_report(p, sites, t=1.0, margin=10.0)
    first = {r.name: r for r in rows if not r.name.startswith("|delta_k|")}
    row = first["|Delta_1|/|Omega_k1|"]
    assert abs(row.actual - 100.0) < 1e-12
    assert row.ok
    # the dispersive ratio 100 is the binding first-hierarchy constraint
    # (|DeltaTilde_1 - Delta_2| is smaller than Delta_1 by the tiny delta_1)
    worst = min(first.values(), key=lambda r: r.actual)
    assert abs(worst.actual - 100.0) < 1e-4 * 100.0

    second = {r.name: r for r in rows if r.name.startswith("|delta_k|")}
    ratio = second["|delta_k|/|OmegaTilde_ka|"].actual
    assert abs(ratio - (399 / 400) / (1 / 100)) < 1e-9  # ~99.75


def test_regime_report_flags_nondispersive():
    p, sites = pm.reference_set(n_atoms=1)
    bad = p.with_updates(g_a=p.Delta_1)
    rows = pm.regime_report(bad, sites, t=1.0)
    row = next(r for r in rows if r.name == "|Delta_1|/|g_ka|")
    assert abs(row.actual - 1.0) < 1e-12
    assert not row.ok


def test_squeeze_parameter_linearity(reference):
    p, sites = reference
    assert pm.squeeze_parameter(p, sites, 0.0) == 0.0
    xi1 = pm.squeeze_parameter(p, sites, 1.0)
    xi2 = pm.squeeze_parameter(p, sites + sites, 1.0)
    assert abs(xi2 - 2 * xi1) < 1e-12 * abs(xi1)
    # |xi| = |Omega| tau and the stored convention xi = Omega_eff * tau
    model = pm.derive_effective(p, sites)
    assert abs(abs(xi1) - 0.2) < 1e-12
    assert abs(xi1 - model.Omega_eff * 1.0) < 1e-14


def test_dissipation_estimate_values(reference):
    p, sites = reference
    est = pm.dissipation_estimate(p, sites, xi=0.5)
    assert abs(est.n_bar - math.sinh(1.0) ** 2) < 1e-14
    # oracle: 1 / (0.2 * sinh^2(1))
    assert abs(est.tau_diss - 1.0 / (0.2 * math.sinh(1.0) ** 2)) < 1e-12
    assert abs(est.tau_diss - 3.6203083) < 1e-6
    assert est.N_Gamma == 0.0  # Gamma defaults to zero

    p2 = p.with_updates(Gamma=0.1)
    est2 = pm.dissipation_estimate(p2, sites, xi=0.5)
    expected = 39_900 * 0.1 * (100.0 / 1e4) ** 2 * est.tau_diss
    assert abs(est2.N_Gamma - expected) < 1e-12

    est0 = pm.dissipation_estimate(p, sites, xi=0.0)
    assert est0.unbounded and est0.tau_diss is None and est0.N_Gamma is None


def test_max_squeeze_against_independent_oracle():
    res = pm.max_squeeze(coupling_ratio=1.0)
    oracle = brentq(lambda x: x * np.sinh(2 * x) ** 2 - 1.0, 1e-12, 5.0,
                    xtol=1e-15, rtol=8.9e-16)
    assert abs(res.xi_max - oracle) < 1e-9
    assert abs(res.residual) < 1e-10
    assert abs(res.squeezing_fraction - 0.67) < 0.01

    res8 = pm.max_squeeze(coupling_ratio=8.0)
    assert abs(res8.xi_max * math.sinh(2 * res8.xi_max) ** 2 - 8.0) < 1e-9

    res0 = pm.max_squeeze(coupling_ratio=0.0)
    assert res0.xi_max == 0.0 and res0.squeezing_fraction == 0.0


def test_max_squeeze_from_params(reference):
    p, sites = reference
    res = pm.max_squeeze(p, sites)  # |Omega| = g/5, kappa = g/5 -> ratio 1
    assert abs(res.squeezing_fraction - 0.669) < 0.01


def test_uniform_scaling_with_atom_number():
    p, _ = pm.reference_set(n_atoms=1)
    m1 = pm.derive_effective(p, pm.uniform_sites(1))
    m7 = pm.derive_effective(p, pm.uniform_sites(7))
    assert abs(m7.Omega_eff - 7 * m1.Omega_eff) < 1e-14
    assert abs(m7.xi - 7 * m1.xi) < 1e-14


@settings(max_examples=20, deadline=None)
@given(lam=st.floats(min_value=0.1, max_value=10.0, allow_nan=False))
def test_common_rescaling_property(lam):
    p, sites = pm.reference_set(n_atoms=3)
    scaled = pm.PhysicalParams.from_detunings(
        g_a=p.g_a * lam, g_b=p.g_b * lam,
        Omega_1=p.Omega_1 * lam, Omega_2=p.Omega_2 * lam,
        Delta_1=p.Delta_1 * lam, Delta_2=p.Delta_2 * lam,
        delta_1=p.delta_1 * lam, delta_2=p.delta_2 * lam,
        kappa_a=p.kappa_a, kappa_b=p.kappa_b, tau=p.tau,
    )
    m0 = pm.derive_effective(p, sites)
    m1 = pm.derive_effective(scaled, sites)
    assert np.allclose(m1.delta_k, lam * m0.delta_k, rtol=1e-12)
    assert abs(m1.delta_tilde - lam * m0.delta_tilde) < 1e-12 * abs(lam * m0.delta_tilde)
    assert abs(m1.Omega_eff - lam * m0.Omega_eff) < 1e-12 * abs(lam * m0.Omega_eff)
    r0 = {e.name: e.actual for e in pm.regime_report(p, sites, t=1.0)}
    r1 = {e.name: e.actual for e in pm.regime_report(scaled, sites, t=1.0 / lam)}
    for name, val in r0.items():
        if math.isfinite(val):
            assert abs(r1[name] - val) < 1e-9 * abs(val)


@pytest.mark.parametrize("margin", [10.0, 30.0, 100.0])
def test_dispersive_family_balance(margin):
    fam = pm.dispersive_family(margin, n_atoms=2, xi_target=0.1)
    model = pm.derive_effective(fam.params, fam.sites)
    scale = abs(model.delta_tilde)
    assert abs(model.condition_residual) <= 1e-9 * scale
    assert abs(model.condition_lhs - model.delta_tilde) <= 1e-9 * scale
    assert abs(model.condition_rhs - model.delta_tilde) <= 1e-9 * scale
    assert abs(abs(model.Omega_eff) * fam.tau - 0.1) < 1e-12

    rows = pm.regime_report(fam.params, fam.sites, t=fam.tau, margin=margin / 2.5)
    assert all(r.ok for r in rows)


def test_delta_k_zero_reports_atom():
    p, _ = pm.reference_set(n_atoms=2)
    # engineer the shift terms to cancel exactly: delta_2 - delta_1 = 2*(S1 - S2)
    s1 = abs(p.Omega_1) ** 2 / p.Delta_1
    s2 = abs(p.Omega_2) ** 2 / p.Delta_2
    bad = p.with_updates(delta_1=0.0, delta_2=2 * (s1 - s2))
    with pytest.raises(SolverError, match=r"atom"):
        pm.per_atom_quantities(bad, pm.uniform_sites(2))
