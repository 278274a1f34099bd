import numpy as np
import pytest

from fluxrg import fluxphase as F
from fluxrg.errors import InvarianceViolation, NonQuadratic
from fluxrg.fock import InteractionKernelFamily, onsite_family, reflection_positive_family
from fluxrg.lattice import LatticeConfig, chessboard_phase

COMBO = (1.0, 0.3, 0.2, 0.0, 0.1)


def test_free_scan_prefers_pi():
    cfg = LatticeConfig.default(2, 2)
    res = F.flux_scan(F.FluxScanSpec(cfg, F.flux_grid(16)))
    assert res.pi_is_min and np.isclose(res.argmin, np.pi)
    assert res.monotone_in_distance
    assert len(res.rows) == 16


def test_interacting_scan_prefers_pi():
    cfg = LatticeConfig.default(2, 1)
    fam = reflection_positive_family(2, 1)
    res = F.flux_scan(F.FluxScanSpec(cfg, F.flux_grid(8), fam, COMBO, "ED"))
    assert res.pi_is_min


def test_scan_rejects_negative_couplings():
    cfg = LatticeConfig.default(2, 1)
    fam = reflection_positive_family(2, 1)
    with pytest.raises(ValueError):
        F.flux_scan(F.FluxScanSpec(cfg, F.flux_grid(4), fam, (1.0, -0.3, 0, 0, 0), "ED"))


def test_grid_contains_pi():
    assert np.pi in F.flux_grid(8)
    assert np.isclose(F.flux_grid(8)[1], np.pi / 4)


def test_quadratic_matches_ed_at_zero_coupling():
    cfg = LatticeConfig.default(2, 1)
    fam = reflection_positive_family(2, 1)
    for th in (0.0, 1.0, np.pi):
        ph = F.uniform_phase(cfg, th)
        a = F.flux_free_energy(ph, cfg, method="quadratic")
        b = F.flux_free_energy(ph, cfg, fam, np.zeros(5), method="ED")
        assert abs(a - b) <= 1e-10 * abs(a)


def test_quadratic_refuses_interaction():
    cfg = LatticeConfig.default(2, 1)
    with pytest.raises(NonQuadratic):
        F.flux_log_z(chessboard_phase(cfg), cfg, onsite_family(2, 1), [1.0], "quadratic")


def test_density_normalisation():
    cfg = LatticeConfig.default(2, 2)
    ph = chessboard_phase(cfg)
    assert np.isclose(F.flux_free_energy(ph, cfg, density=True) * 16, F.flux_free_energy(ph, cfg))


def test_gauge_invariance_full_preset():
    cfg = LatticeConfig.default(2, 1)
    rep = F.gauge_invariance_check(cfg, reflection_positive_family(2, 1), COMBO, trials=20)
    assert rep.ok and rep.max_rel_error <= 1e-10


def test_gauge_invariance_free_random_phase(rng):
    cfg = LatticeConfig.default(2, 2)
    ph = F.random_phase(2, 2, rng)
    assert F.gauge_invariance_check(cfg, trials=20, rng=rng, phase=ph).ok


def test_gauge_breaking_interaction_detected():
    cfg = LatticeConfig.default(2, 1)
    # c^dagger_0 c_1 + h.c. on spin up couples two sites without the bond phase
    fam = InteractionKernelFamily(2, 1, ["hop"], np.zeros(1), {1: [{(0, 2): 1.0, (2, 0): 1.0}]})
    with pytest.raises(InvarianceViolation):
        F.gauge_invariance_check(cfg, fam, [1.0], trials=5)


def test_random_phase_antisymmetric(rng):
    for L in (1, 2):
        T = F.random_phase(2, L, rng).hopping_matrix([1.0, 1.0])
        assert np.allclose(T, T.conj().T)


def test_equal_flux_pairs():
    assert F.equal_flux_pairs(LatticeConfig.default(2, 2), pairs=20) <= 1e-10
    cfg = LatticeConfig.default(2, 1)
    assert F.equal_flux_pairs(cfg, pairs=5, family=reflection_positive_family(2, 1), U=COMBO) <= 1e-10


def test_high_temperature_flat():
    cfg = LatticeConfig.default(2, 2, beta=0.01)
    res = F.flux_scan(F.FluxScanSpec(cfg, F.flux_grid(8)))
    spread = res.free_energy.max() - res.free_energy.min()
    assert spread / abs(res.free_energy.mean()) < 1e-3
    assert res.pi_is_min
