import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fluxrg.errors import AntisymmetryViolation, DimensionMismatch, FluxMismatch
from fluxrg.lattice import (
    BondPhase,
    LatticeConfig,
    Torus,
    angles_equal,
    canonical_angle,
    chessboard_phase,
    find_gauge,
    flux_margin,
    flux_report,
    index_maps,
    path_sum,
    random_closed_path,
)


def test_band_bits_d2():
    maps = index_maps(LatticeConfig.default(2, 1))
    assert [tuple(maps.b[r - 1]) for r in (1, 2, 3, 4)] == [(0, 0), (1, 0), (0, 1), (1, 1)]


def test_nu_example():
    maps = index_maps(LatticeConfig.default(2, 2))
    assert tuple(maps.nu(3, (1, 0))) == (2, 1)


@pytest.mark.parametrize("d,L", [(2, 2), (3, 1), (2, 3)])
def test_nu_round_trip(d, L):
    maps = index_maps(LatticeConfig.default(d, L))
    seen = set()
    for rho in range(1, 2**d + 1):
        for x in Torus(d, L).coords:
            y = maps.nu(rho, x)
            r2, x2 = maps.nu_inv(y)
            assert r2 == rho and np.array_equal(x2, x)
            seen.add(tuple(y))
    assert len(seen) == (2 * L) ** d


def test_config_validation():
    with pytest.raises(ValueError):
        LatticeConfig.default(2, 1, beta=1.0, h=3.0).n_time
    with pytest.raises(ValueError):
        LatticeConfig.default(2, 1, t=(1.0, -1.0))
    with pytest.raises(DimensionMismatch):
        LatticeConfig(d=2, L=1, t=(1.0,), theta=(np.pi,), eps=(0, 0))
    with pytest.raises(ValueError):
        LatticeConfig(d=2, L=1, eps=(1, 0))


def test_canonical_angle_range():
    a = canonical_angle(np.array([np.pi, -np.pi, 3 * np.pi, 0.0]))
    assert np.allclose(a, [np.pi, np.pi, np.pi, 0.0])


def test_zero_phase_fluxes():
    cfg = LatticeConfig.default(2, 2)
    rep = flux_report(BondPhase.zero(2, 2), cfg)
    assert np.allclose(rep.plaquette, 0) and np.allclose(rep.circle, 0)


def test_chessboard_pi_flux_everywhere():
    cfg = LatticeConfig.default(2, 1, eps=(0, 0))
    rep = flux_report(chessboard_phase(cfg), cfg)
    assert angles_equal(rep.plaquette, np.pi)
    assert abs(rep.margin) < 1e-15 and rep.margin_ok


def test_chessboard_zero_is_zero():
    cfg = LatticeConfig.default(2, 2, theta=(0.0,), eps=(0, 0))
    assert np.allclose(chessboard_phase(cfg).values, 0)


def test_chessboard_d3_circle_flux():
    cfg = LatticeConfig.default(3, 2, theta=(np.pi,) * 3, eps=(1, 1, 1))
    rep = flux_report(chessboard_phase(cfg), cfg)
    assert angles_equal(rep.circle, np.pi)


@settings(max_examples=25, deadline=None)
@given(
    st.lists(st.floats(-np.pi, np.pi), min_size=3, max_size=3),
    st.lists(st.integers(0, 1), min_size=3, max_size=3),
)
def test_chessboard_closed_forms_d3(theta, eps):
    cfg = LatticeConfig.default(3, 2, theta=theta, eps=eps)
    rep = flux_report(chessboard_phase(cfg), cfg)
    T = Torus(3, 4)
    p = 0
    for k in range(3):
        for j in range(k):
            want = (-1.0) ** (T.coords[:, j] + T.coords[:, k]) * cfg.theta_jk(j, k)
            assert angles_equal(rep.plaquette[p], want)
            p += 1
    assert angles_equal(rep.circle, np.pi * np.asarray(eps, dtype=float)[:, None])


def test_margin_examples():
    assert abs(flux_margin((np.pi,), 2)) < 1e-15
    assert np.isclose(flux_margin((np.pi / 2,), 2), np.sqrt(2) / 2)


def test_antisymmetry_enforced_on_side_two():
    vals = np.zeros((2, 4))
    vals[0, 0] = 0.3
    with pytest.raises(AntisymmetryViolation):
        BondPhase(2, 1, vals)


def test_find_gauge_identity():
    cfg = LatticeConfig.default(2, 2)
    phi = chessboard_phase(cfg)
    assert np.allclose(find_gauge(phi, phi), 0)


@pytest.mark.parametrize("d", [2, 3])
def test_find_gauge_round_trip(d, rng):
    cfg = LatticeConfig.default(d, 2)
    phi2 = chessboard_phase(cfg)
    trials = 100 if d == 2 else 10
    for _ in range(trials):
        theta0 = rng.uniform(-np.pi, np.pi, size=phi2.torus.nsites)
        phi1 = phi2.gauge_shift(theta0)
        theta = find_gauge(phi1, phi2)
        T = phi2.torus
        assert angles_equal(phi1.values, phi2.values + theta[T.forward] - theta[None, :])
        assert angles_equal(theta - theta[0], theta0 - theta0[0])


def test_find_gauge_flux_mismatch():
    cfg = LatticeConfig.default(2, 2)
    with pytest.raises(FluxMismatch):
        find_gauge(chessboard_phase(cfg), BondPhase.zero(2, 2))


@pytest.mark.parametrize("d", [2, 3])
def test_circuit_property(d, rng):
    cfg = LatticeConfig.default(d, 2)
    phi2 = chessboard_phase(cfg)
    T = phi2.torus
    phi1 = phi2.gauge_shift(rng.uniform(-np.pi, np.pi, size=T.nsites))
    for _ in range(50):
        path = random_closed_path(T, 12, rng, start=int(rng.integers(T.nsites)))
        assert len(path) - 1 <= 12 and path[0] == path[-1]
        assert angles_equal(path_sum(phi1, path) - path_sum(phi2, path), 0.0)


def test_circuit_detects_flux_change(rng):
    T = Torus(2, 4)
    phi = chessboard_phase(LatticeConfig.default(2, 2))
    zero = BondPhase.zero(2, 2)
    square = [0, T.forward[0, 0], T.forward[1, T.forward[0, 0]], T.forward[1, 0], 0]
    assert not angles_equal(path_sum(phi, square) - path_sum(zero, square), 0.0)
