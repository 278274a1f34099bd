import numpy as np
import pytest

from fluxrg import fock
from fluxrg.errors import InconsistentTransform, NonHermitian, TooLarge
from fluxrg.fock import (
    FockSpace,
    build_hamiltonian,
    check_conditions,
    conjugate,
    diagonalize,
    free_log_z,
    gauge_unitary,
    mode_permutation_unitary,
    multiband_relabel,
    normal_order_check,
    normal_order_sides,
    one_band_free,
    particle_hole_residual,
    particle_hole_unitary,
    thermal_covariance_ed,
    thermal_covariance_one_particle,
    thermodynamics,
)
from fluxrg.lattice import LatticeConfig, chessboard_phase, find_gauge

PRESET_U = {
    "on-site": [0.8],
    "density-density": [0.4],
    "spin-spin": [0.3, -0.2, 0.5],
    "reflection-positive-combo": [1.0, 0.3, 0.2, 0.0, 0.1],
}


def test_anticommutation():
    fs = FockSpace(6)
    I = np.eye(fs.dim)
    for a in range(fs.m):
        for b in range(fs.m):
            ca, cb = fs.c[a].toarray(), fs.c[b].toarray()
            cdb = fs.cdag[b].toarray()
            assert np.allclose(ca @ cdb + cdb @ ca, (a == b) * I)
            assert np.allclose(ca @ cb + cb @ ca, 0)


def test_dense_cap():
    with pytest.raises(TooLarge):
        FockSpace(17)
    with pytest.raises(TooLarge):
        build_hamiltonian(LatticeConfig.default(2, 2))


def test_free_trace_product_formula(cfg2):
    H0, _, fs = build_hamiltonian(cfg2, form="multi-band")
    logz = diagonalize(H0, fs).log_z(cfg2.beta)
    want = 8 * np.log(1 + np.exp(-np.sqrt(2))) / 2 + 8 * np.log(1 + np.exp(np.sqrt(2))) / 2
    assert np.isclose(logz, want, rtol=1e-12)
    from fluxrg.hopping import multiband_hopping

    assert np.isclose(free_log_z(multiband_hopping(cfg2), cfg2.beta), logz, rtol=1e-10)


def test_zero_coupling_gives_free(cfg2):
    H, H0, _ = build_hamiltonian(cfg2, fock.onsite_family(2, 1), [0.0])
    assert abs(H - H0).max() < 1e-15


def test_zero_operator_thermodynamics(cfg2):
    fs = FockSpace(8)
    th = thermodynamics(0 * fs.identity(), cfg2, fs)
    assert np.isclose(th.log_z, 8 * np.log(2))
    assert np.allclose(th.densities, 0.5)


@pytest.mark.parametrize("tag", list(PRESET_U))
@pytest.mark.parametrize("beta", [0.5, 1.0, 2.0])
def test_half_filling_presets(tag, beta, cfg2):
    fam = fock.PRESETS[tag](2, 1)
    H, _, fs = build_hamiltonian(cfg2, fam, PRESET_U[tag])
    th = thermodynamics(H, cfg2, fs, beta=beta)
    assert np.max(np.abs(th.densities - 0.5)) <= 1e-10


def test_multiband_equivalence(cfg2, rng):
    fam = fock.reflection_positive_family(2, 1)
    for _ in range(5):
        U = rng.normal(size=5)
        H1, _, fs = build_hamiltonian(cfg2, fam, U, form="one-band")
        H2, _, _ = build_hamiltonian(cfg2, fam, U, form="multi-band")
        a, b = diagonalize(H1, fs).log_z(1.0), diagonalize(H2, fs).log_z(1.0)
        assert abs(np.expm1(a - b)) <= 1e-10


def test_interleaving_unitary(cfg2):
    fam = fock.reflection_positive_family(2, 1)
    U = [0.7, 0.2, 0.1, 0.3, -0.4]
    H1, _, fs = build_hamiltonian(cfg2, fam, U, form="one-band")
    H2, _, _ = build_hamiltonian(cfg2, fam, U, form="multi-band")
    W = mode_permutation_unitary(fs, multiband_relabel(cfg2))
    conjugate(W, H1, expected=H2)


def test_particle_hole_free(cfg2):
    fs = FockSpace(8)
    A = particle_hole_unitary(fs, 2, 1)
    assert np.allclose(A @ A.conj().T, np.eye(fs.dim))
    for theta in (np.pi, 0.7):
        c = cfg2.replace(theta=(theta,))
        H0, _ = one_band_free(c, fs=fs)
        Hm, _ = one_band_free(c.replace(theta=(-theta,)), fs=fs)
        conjugate(A, H0, expected=Hm)


def test_particle_hole_interaction_real_couplings(cfg2):
    fs = FockSpace(8)
    A = particle_hole_unitary(fs, 2, 1)
    fam = fock.reflection_positive_family(2, 1)
    U = [0.7, 0.2, 0.1, 0.3, -0.4]
    H, H0, _ = build_hamiltonian(cfg2.replace(theta=(0.0,)), fam, U)
    V = (H - H0).toarray()
    conjugate(A, V, expected=V)
    w1 = np.linalg.eigvalsh(H.toarray())
    w2 = np.linalg.eigvalsh(conjugate(A, H))
    assert np.allclose(w1, w2)


def test_conjugate_raises():
    fs = FockSpace(2)
    with pytest.raises(InconsistentTransform):
        conjugate(np.eye(fs.dim), fs.n(0), expected=fs.n(1))


def test_gauge_unitary_trace(rng):
    cfg = LatticeConfig.default(2, 1)
    fam = fock.reflection_positive_family(2, 1)
    U = [1.0, 0.3, 0.2, 0.0, 0.1]
    phi2 = chessboard_phase(cfg)
    phi1 = phi2.gauge_shift(rng.uniform(-np.pi, np.pi, size=4))
    theta = find_gauge(phi1, phi2)
    H1, _, fs = build_hamiltonian(cfg, fam, U, phase=phi1)
    H2, _, _ = build_hamiltonian(cfg, fam, U, phase=phi2)
    conjugate(gauge_unitary(fs, theta), H2, expected=H1)
    assert abs(np.expm1(diagonalize(H1, fs).log_z(1.0) - diagonalize(H2, fs).log_z(1.0))) < 1e-10


@pytest.mark.parametrize("tag", list(PRESET_U))
def test_preset_conditions(tag, rng):
    for L in (1, 2):
        conds = check_conditions(fock.PRESETS[tag](2, L), rng=rng)
        assert all(conds.values()), conds


def test_parity_class_onsite_conditions(rng):
    fam = fock.onsite_family(2, 1, parity_classes=True)
    assert all(check_conditions(fam, [0.3, 0.5, 0.5, 0.3], rng=rng).values())


def test_particle_hole_sum_literal():
    fam = fock.reflection_positive_family(2, 1)
    assert particle_hole_residual(fam, [1.0, 0.3, 0.2, 0.0, 0.1]) <= 1e-12


def test_custom_family_detects_violations(rng):
    fam = fock.onsite_family(2, 1)
    bad = fock.InteractionKernelFamily(2, 1, ["c"], np.zeros(1), {1: [{(0, 2): 1.0, (2, 0): 1.0}]}, "custom")
    conds = check_conditions(bad, rng=rng)
    assert not conds["translation"] or not conds["particle_hole"]
    cplx = fock.InteractionKernelFamily(2, 1, ["c"], np.zeros(1), {1: [{(0, 2): 1.0j, (2, 0): 1.0j}]}, "custom")
    with pytest.raises(NonHermitian):
        build_hamiltonian(LatticeConfig.default(2, 1), cplx, [1.0])
    assert fam.n_v == 1


def test_covariance_two_ways():
    cfg = LatticeConfig.default(2, 1, h=4.0)
    a, b = thermal_covariance_ed(cfg), thermal_covariance_one_particle(cfg)
    assert np.abs(a - b).max() <= 1e-10
    # (band, site, spin, time) ordering: equal point diagonal and spin blocks
    C = a.reshape(4, 2, 4, 4, 2, 4)
    assert np.allclose(np.einsum("aitait->ait", C), 0.5)
    assert np.allclose(C[:, 0, :, :, 1, :], 0) and np.allclose(C[:, 1, :, :, 0, :], 0)


def test_reordering_m1_closed_form():
    n = 3
    f = np.arange(n * n, dtype=complex).reshape(n, n)
    lhs, rhs = normal_order_sides(f, 1, n)
    assert np.allclose(lhs, rhs)


@pytest.mark.parametrize("m,n", [(1, 5), (2, 4), (2, 5), (3, 4), (3, 5)])
def test_reordering_identity(m, n, rng):
    assert normal_order_check(m, n, count=3 if n == 5 else 10, rng=rng) <= 1e-12


def test_reordering_zero_kernel():
    lhs, rhs = normal_order_sides(np.zeros((3,) * 4), 2, 3)
    assert np.allclose(lhs, 0) and np.allclose(rhs, 0)


def test_reordering_rejects_non_antisymmetric():
    f = np.zeros((3,) * 4, dtype=complex)
    f[0, 1, 0, 1] = 1.0
    from fluxrg.errors import IdentityViolation

    with pytest.raises(IdentityViolation):
        normal_order_check(2, 3, f=f)
