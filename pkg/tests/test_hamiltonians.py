import math

import numpy as np
import pytest

from cavsqueeze import fockcore as fc
from cavsqueeze import hamiltonians as ham
from cavsqueeze import params as pm
from cavsqueeze.errors import ConditionGateError, LayoutError
from cavsqueeze.hamiltonians import HamiltonianSpec, Level


def small_layout(n_atoms=1, n_max=2):
    return fc.HilbertLayout(n_max_a=n_max, n_max_b=n_max, n_atoms=n_atoms)


def random_params(rng):
    return pm.PhysicalParams.from_detunings(
        g_a=rng.normal() + 1j * rng.normal(),
        g_b=rng.normal() + 1j * rng.normal(),
        Omega_1=3 * (rng.normal() + 1j * rng.normal()),
        Omega_2=3 * (rng.normal() + 1j * rng.normal()),
        Delta_1=rng.uniform(40.0, 80.0),
        Delta_2=rng.uniform(90.0, 160.0),
        delta_1=rng.normal() * 0.2,
        delta_2=rng.normal() * 0.2,
        tau=1.0,
    )


def random_sites(rng, n):
    out = []
    for _ in range(n):
        vals = rng.uniform(0.2, 1.0, size=4) * np.exp(1j * rng.uniform(0, 2 * np.pi, size=4))
        out.append(pm.AtomSite(position=(0.0, 0.0, 0.0),
                               u_a=vals[0], u_b=vals[1], v_1=vals[2], v_2=vals[3]))
    return out


def test_parametric_level_matches_coupling():
    fam = pm.dispersive_family(30.0, n_atoms=1)
    lay = small_layout(n_atoms=1, n_max=3)
    spec = HamiltonianSpec(Level.PARAMETRIC, fam.params, fam.sites, lay)
    h = ham.build(spec, 0.0)

    model = pm.derive_effective(fam.params, fam.sites)
    a = fc.annihilation(lay, "a").entries
    b = fc.annihilation(lay, "b").entries
    omega = model.Omega_eff
    expected = omega * (a.getH() @ b.getH()) + np.conj(omega) * (b @ a)
    assert abs((h.entries - expected).toarray()).max() < 1e-14


def test_zero_couplings_build_zero_interaction():
    p, _ = pm.reference_set(n_atoms=1)
    p0 = p.with_updates(Omega_1=0.0, Omega_2=0.0, g_a=0.0, g_b=0.0)
    lay = small_layout()
    h = ham.build(HamiltonianSpec(Level.INTERACTION, p0, pm.uniform_sites(1), lay), 0.37)
    assert h.entries.nnz == 0


@pytest.mark.parametrize("level", list(Level))
@pytest.mark.parametrize("t", [0.0, 0.37, 5.0])
def test_hermiticity_random_draws(level, t):
    rng = np.random.default_rng(hash((level.value, t)) % 2**32)
    for _ in range(3):
        if level == Level.PARAMETRIC:
            # the reduced form gates on the balance condition, so draw from
            # the balanced family instead of raw random parameters
            fam = pm.dispersive_family(rng.uniform(10.0, 40.0), n_atoms=2)
            p, sites = fam.params, fam.sites
        else:
            p = random_params(rng)
            sites = random_sites(rng, 2)
        lay = small_layout(n_atoms=2)
        h = ham.build(HamiltonianSpec(level, p, sites, lay), t)
        assert fc.herm_deviation(h.entries) <= 1e-12 * max(
            1.0, abs(h.entries.data).max() if h.entries.nnz else 1.0)


def test_frame_generator_reference_coefficient():
    p, sites = pm.reference_set(n_atoms=1)
    lay = small_layout()
    a_gen = ham.frame_generator_A(p, sites[:1], lay)
    assert a_gen.is_diagonal()
    # field part carries delta_tilde = -1/100 per photon
    one_a = lay.basis_index(1, 0, (2,))
    zero = lay.basis_index(0, 0, (2,))
    diag = a_gen.diagonal().real
    assert abs((diag[one_a] - diag[zero]) - (-0.01)) < 1e-15


def test_frame_generator_zero_case():
    p, _ = pm.reference_set(n_atoms=1)
    p0 = p.with_updates(Omega_1=0.0, Omega_2=0.0, delta_1=-p.delta_2)  # delta_tilde = 0
    lay = small_layout()
    a_gen = ham.frame_generator_A(p0, pm.uniform_sites(1), lay)
    assert a_gen.entries.nnz == 0


def test_H0_tilde_diagonal_entries():
    rng = np.random.default_rng(11)
    p = random_params(rng)
    sites = pm.uniform_sites(1)
    lay = small_layout(n_atoms=1)
    h0t = ham.frame_H0_tilde(p, sites, lay)
    assert h0t.is_diagonal()

    # assembled by hand: |1_a, 0_b, atom 2>
    idx = lay.basis_index(1, 0, (2,))
    expected = (p.omega_a + p.delta_tilde) + p.omega_2 + abs(p.Omega_2) ** 2 / p.Delta_2
    assert abs(h0t.diagonal()[idx].real - expected) < 1e-12 * max(1.0, abs(expected))

    # reduces to the bare H0 when the frame generator vanishes
    p0 = p.with_updates(Omega_1=0.0, Omega_2=0.0, delta_1=-p.delta_2)
    h0 = ham.bare_H0(p0, lay)
    h0t0 = ham.frame_H0_tilde(p0, sites, lay)
    assert abs((h0t0.entries - h0.entries).toarray()).max() < 1e-14


def test_transform_frame_identities():
    rng = np.random.default_rng(3)
    p = random_params(rng)
    sites = random_sites(rng, 1)
    lay = small_layout(n_atoms=1)
    h2 = ham.build(HamiltonianSpec(Level.ADIABATIC, p, sites, lay), 0.7)
    zero = fc.OperatorMatrix(lay, 0.0 * fc.identity(lay).entries, hermitian_hint=True)
    # A = 0 leaves the generator unchanged
    out = ham.transform_frame(h2, zero, 0.7)
    assert abs((out.entries - h2.entries).toarray()).max() < 1e-14
    # t = 0 gives H - A
    a_gen = ham.frame_generator_A(p, sites, lay)
    out0 = ham.transform_frame(h2, a_gen, 0.0)
    assert abs((out0.entries - (h2.entries - a_gen.entries)).toarray()).max() < 1e-14


@pytest.mark.parametrize("t", [0.0, 0.31, 2.7])
def test_rotating_frame_reproduces_rotated_level(t):
    # core cross-validation: conjugating the Raman level by the frame
    # generator must reproduce the rotated level entrywise
    rng = np.random.default_rng(17)
    for _ in range(4):
        p = random_params(rng)
        sites = random_sites(rng, 2)
        lay = small_layout(n_atoms=2)
        h2 = ham.build(HamiltonianSpec(Level.ADIABATIC, p, sites, lay), t)
        a_gen = ham.frame_generator_A(p, sites, lay)
        h3_direct = ham.build(HamiltonianSpec(Level.ROTATED, p, sites, lay), t)
        h3_from_frame = ham.transform_frame(h2, a_gen, t)
        dev = abs((h3_direct.entries - h3_from_frame.entries).toarray()).max()
        assert dev < 1e-10


def test_interaction_static_pair_identity():
    rng = np.random.default_rng(23)
    p = random_params(rng)
    sites = random_sites(rng, 1)
    lay = small_layout(n_atoms=1)
    d_op, hc = ham.interaction_static_pair(p, sites, lay)
    assert d_op.is_diagonal()
    combined = fc.OperatorMatrix(lay, hc.entries + d_op.entries, hermitian_hint=True)
    for t in (0.0, 0.13, 1.9):
        built = ham.build(HamiltonianSpec(Level.INTERACTION, p, sites, lay), t)
        rotated = ham.transform_frame(combined, d_op, t)
        assert abs((built.entries - rotated.entries).toarray()).max() < 1e-10


def test_time_averaged_field_block_is_shifted_parametric():
    # with all atoms pinned in level 2 and the balance condition satisfied,
    # the quartic level acts on the field as the parametric level plus a
    # multiple of the identity
    fam = pm.dispersive_family(20.0, n_atoms=2)
    lay = fc.HilbertLayout(n_max_a=3, n_max_b=3, n_atoms=2)
    h4 = ham.build(HamiltonianSpec(Level.TIME_AVERAGED, fam.params, fam.sites, lay), 0.0)
    hred = ham.build(HamiltonianSpec(Level.PARAMETRIC, fam.params, fam.sites, lay), 0.0)

    # indices of the atoms-in-|2,2> block, ordered by field labels
    idx = [lay.basis_index(na, nb, (2, 2))
           for na in range(lay.dim_a) for nb in range(lay.dim_b)]
    block4 = h4.dense()[np.ix_(idx, idx)]
    blockr = hred.dense()[np.ix_(idx, idx)]
    diff = block4 - blockr
    shift = diff[0, 0]
    assert abs(diff - shift * np.eye(len(idx))).max() < 1e-12
    # the shift is the common atomic energy offset, delta_tilde per atom pair
    assert abs(shift.real - fam.params.delta_tilde) < 1e-9 * abs(fam.params.delta_tilde)


def test_interaction_superposition_in_each_coupling():
    rng = np.random.default_rng(5)
    p = random_params(rng)
    sites = pm.uniform_sites(1)
    lay = small_layout(n_atoms=1)
    t = 0.42
    for name in ("g_a", "g_b", "Omega_1", "Omega_2"):
        x, y = 0.7 - 0.2j, -0.3 + 1.1j
        hx = ham.build(HamiltonianSpec(Level.INTERACTION, p.with_updates(**{name: x}), sites, lay), t)
        hy = ham.build(HamiltonianSpec(Level.INTERACTION, p.with_updates(**{name: y}), sites, lay), t)
        h0 = ham.build(HamiltonianSpec(Level.INTERACTION, p.with_updates(**{name: 0.0}), sites, lay), t)
        hxy = ham.build(HamiltonianSpec(Level.INTERACTION, p.with_updates(**{name: x + y}), sites, lay), t)
        resid = (hx.entries + hy.entries - h0.entries - hxy.entries).toarray()
        assert abs(resid).max() < 1e-12


@pytest.mark.parametrize("n_atoms", [1])
def test_ladder_adiabatic_consistency(n_atoms):
    # propagating under the bare interaction generator and under the
    # adiabatically reduced one must agree better and better as the
    # dispersive margin grows; initial state holds an atomic superposition
    # so both Raman legs are exercised
    from cavsqueeze import evolution as ev

    infids = []
    for margin in (10.0, 30.0, 100.0):
        fam = pm.dispersive_family(margin, n_atoms=n_atoms)
        lay = fc.HilbertLayout(n_max_a=4, n_max_b=4, n_atoms=n_atoms)
        tau = 2.0 * margin  # fixed Raman rotation angle across margins

        amp = np.zeros(lay.dim, dtype=complex)
        amp[lay.basis_index(0, 0, (1,) * n_atoms)] = 1 / math.sqrt(2)
        amp[lay.basis_index(0, 0, (2,) * n_atoms)] = 1 / math.sqrt(2)
        psi0 = fc.StateVector(lay, amp)

        d_op, hc = ham.interaction_static_pair(fam.params, fam.sites, lay)
        vals, vecs = np.linalg.eigh((d_op.entries + hc.entries).toarray())
        coeff = vecs.conj().T @ psi0.amplitudes
        psi_full = np.exp(1j * d_op.diagonal().real * tau) * (
            vecs @ (np.exp(-1j * vals * tau) * coeff))

        gen2 = ham.generator(HamiltonianSpec(Level.ADIABATIC, fam.params,
                                             fam.sites, lay))
        ctrl = ev.StepControl(rtol=1e-10, atol=1e-13)  # long horizon at margin 100
        res = ev.propagate_unitary(psi0, gen2, tau, ctrl)
        overlap = np.vdot(res.final_state.amplitudes, psi_full)
        infids.append(1.0 - abs(overlap) ** 2)
    assert infids[0] > infids[1] > infids[2]
    assert infids[0] < 0.1


def test_parametric_gate_rejects_unbalanced_params():
    fam = pm.dispersive_family(20.0, n_atoms=2)
    broken = fam.params.with_updates(Omega_2=fam.params.Omega_2 * 2.0)
    lay = small_layout(n_atoms=2, n_max=1)
    with pytest.raises(ConditionGateError):
        HamiltonianSpec(Level.PARAMETRIC, broken, fam.sites, lay)
    # and with a frame shift the sides no longer match
    shifted = fam.params.with_updates(delta_1=fam.params.delta_1 + 0.1,
                                      delta_2=fam.params.delta_2 + 0.1)
    with pytest.raises(ConditionGateError):
        HamiltonianSpec(Level.PARAMETRIC, shifted, fam.sites, lay)
    # the balanced family itself passes the gate
    HamiltonianSpec(Level.PARAMETRIC, fam.params, fam.sites, lay)


def test_balance_condition_full_equalization():
    fam = pm.dispersive_family(25.0, n_atoms=2)
    dt = fam.params.delta_tilde
    broken = fam.params.with_updates(
        Omega_2=fam.params.Omega_2 * 1.25,
        delta_1=fam.params.delta_1 + 0.3 * abs(dt),
        delta_2=fam.params.delta_2 + 0.3 * abs(dt),
    )
    fixed = pm.balance_condition(broken, fam.sites, "Omega_2")
    lhs, rhs = pm.condition_sides(fixed, fam.sites)
    scale = max(abs(lhs), abs(rhs))
    assert abs(lhs - rhs) <= 1e-6 * scale
    assert abs(lhs - fixed.delta_tilde) <= 2e-6 * scale
    # good enough to build the reduced parametric form
    HamiltonianSpec(Level.PARAMETRIC, fixed, fam.sites,
                    small_layout(n_atoms=2), condition_gate=1e-5)


def test_site_count_must_match_layout():
    p, sites = pm.reference_set(n_atoms=2)
    with pytest.raises(LayoutError):
        HamiltonianSpec(Level.INTERACTION, p, sites, small_layout(n_atoms=1))
