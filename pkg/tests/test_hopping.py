import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fluxrg.errors import DimensionMismatch
from fluxrg.hopping import (
    build_M,
    build_M_U,
    build_U,
    closed_form_M,
    dispersion,
    dispersion_batch,
    dispersion_general,
    f_t,
    lower_bound,
    min_singular,
    opnorm,
    position_hopping,
    spectral_report,
    squared_block_check,
)
from fluxrg.lattice import LatticeConfig, chessboard_phase


def test_U1_pi():
    assert np.allclose(build_U([np.pi]), np.diag([1, -1]))


def test_M1_eigenvalues():
    a = 0.3 - 1.2j
    assert np.allclose(np.linalg.eigvalsh(build_M([a], [])), [-abs(a), abs(a)])


def test_M2_top_right_block():
    a, g = np.array([0.7 + 0.1j, -0.4 + 0.9j]), 0.8
    M = build_M(a, [g])
    assert np.allclose(M[:2, 2:], a[1] * np.diag([1, np.exp(1j * g)]))
    assert np.isclose(M[1, 3], a[1] * np.exp(1j * g))


def test_length_mismatch():
    with pytest.raises(DimensionMismatch):
        build_M([1, 1], [0.1, 0.2])
    with pytest.raises(DimensionMismatch):
        build_M_U([1, 1], [0.1], [0.0])


def test_recursive_vs_closed_form(rng):
    for _ in range(200):
        n = int(rng.integers(1, 6))
        a = rng.normal(size=n) + 1j * rng.normal(size=n)
        g = rng.uniform(-np.pi, np.pi, size=n * (n - 1) // 2)
        res = build_M_U(a, g, rng.uniform(-np.pi, np.pi, size=n))
        assert res.max_diff <= 1e-12 and res.U_diag_ok
        assert np.allclose(res.M, res.M.conj().T, atol=1e-12)


def test_squared_block_identity(rng):
    for n in (1, 2, 3):
        for _ in range(20):
            a = rng.normal(size=n + 1) + 1j * rng.normal(size=n + 1)
            g = rng.uniform(-np.pi, np.pi, size=(n + 1) * n // 2)
            assert squared_block_check(a, g) < 1e-12


def test_pi_flux_at_zero_momentum():
    cfg = LatticeConfig.default(2, 1, eps=(0, 0))
    E = dispersion(cfg, np.zeros(2))
    assert np.allclose(E, build_M([1, 1], [-np.pi]))
    assert np.allclose(E @ E, 2 * np.eye(4))
    assert np.allclose(np.linalg.svd(E, compute_uv=False), np.sqrt(2))


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(0.1, 2.0), min_size=3, max_size=3),
    st.lists(st.floats(-np.pi, np.pi), min_size=3, max_size=3),
    st.lists(st.floats(0, 2 * np.pi), min_size=3, max_size=3),
    st.lists(st.integers(0, 1), min_size=3, max_size=3),
    st.integers(1, 3),
)
def test_dispersion_properties(t, gamma, k, eps, L):
    eps = eps if L > 1 else [0, 0, 0]
    E = dispersion_general(t, L, eps, gamma, k)
    assert np.allclose(E, E.conj().T, atol=1e-12)
    assert opnorm(E) <= 2 * sum(t) * (1 + 1e-12)
    Upi = build_U(np.full(3, np.pi))
    assert np.allclose(Upi @ E @ Upi.conj().T, -E, atol=1e-12)
    Ue, Uk = build_U(-np.pi * np.asarray(eps) / L), build_U(k)
    Em = dispersion_general(t, L, eps, gamma, -np.asarray(k) + 2 * np.pi * np.asarray(eps) / L)
    assert np.allclose(Ue @ Uk @ Em @ Uk.conj().T @ Ue.conj().T, E, atol=1e-12)
    assert min_singular(E) >= lower_bound(t, L, eps, gamma, k) * (1 - 1e-9) - 1e-12


def test_dispersion_batch_matches(rng):
    ks = rng.uniform(0, 2 * np.pi, size=(30, 3))
    t, g, e = (1.0, 0.5, 2.0), (0.3, -1.0, 2.0), (1, 0, 1)
    batch = dispersion_batch(t, 2, e, g, ks)
    for k, B in zip(ks, batch):
        assert np.allclose(B, dispersion_general(t, 2, e, g, k), atol=1e-14)


def test_f_t_examples():
    assert np.isclose(f_t(LatticeConfig.default(2, 1)), 0.25)
    ft = f_t(LatticeConfig.default(2, 1, theta=(np.pi / 2,)))
    assert np.isclose(ft, 0.25 * (1 - np.sqrt(2) / 2)) and abs(ft - 0.0732) < 1e-4


def test_lower_bound_vanishes_at_node():
    # 1 + e^{-ik} = 0 on every axis at k = (pi, pi)
    assert lower_bound((1.0, 1.0), 1, (0, 0), (np.pi,), np.array([np.pi, np.pi])) < 1e-15


@pytest.mark.parametrize("theta", [np.pi, np.pi / 2, 2.5])
def test_spectral_report_clean(theta, rng):
    cfg = LatticeConfig.default(2, 2, theta=(theta,))
    rep = spectral_report(cfg, 200, rng=rng, random_flux=True)
    assert rep.ok, rep.witnesses[:3]
    assert rep.max_norm_ratio <= 1


def test_spectral_report_d3(rng):
    rep = spectral_report(LatticeConfig.default(3, 1, t=(1.0, 0.7, 0.4)), 100, rng=rng, random_flux=True)
    assert rep.ok


@pytest.mark.parametrize("d,L", [(2, 1), (2, 2), (2, 3), (3, 1), (3, 2)])
def test_position_hopping_is_chessboard(d, L):
    cfg = LatticeConfig.default(d, L, t=tuple(np.linspace(1.0, 0.5, d)))
    G = position_hopping(cfg).G
    T = chessboard_phase(cfg).hopping_matrix(cfg.t)
    assert np.allclose(G, T, atol=1e-12)
