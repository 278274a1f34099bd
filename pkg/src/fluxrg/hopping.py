"""Multi-band hopping matrices: the diagonal unitaries U_n, the hermitian
matrices M_n, the momentum-space dispersion and its position-space kernels."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BoundViolation, DimensionMismatch
from .lattice import LatticeConfig, Torus, band_bits, chessboard_phase, flux_margin, index_maps, pair_index


def build_U(xi) -> np.ndarray:
    """U_1 = diag(1, e^{i xi_1}); U_{m+1} = blockdiag(U_m, e^{i xi_{m+1}} U_m)."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    U = np.diag([1.0, np.exp(1j * xi[0])])
    for m in range(1, len(xi)):
        Z = np.zeros_like(U)
        U = np.block([[U, Z], [Z, np.exp(1j * xi[m]) * U]])
    return U


def _check_lengths(a, gamma):
    n = len(a)
    if n < 1:
        raise DimensionMismatch("need n >= 1")
    if len(gamma) != n * (n - 1) // 2:
        raise DimensionMismatch(f"gamma needs length {n * (n - 1) // 2}, got {len(gamma)}")


def build_M(a, gamma) -> np.ndarray:
    """Recursive block construction of M_n((a_j), (gamma_{j,k}))."""
    a = np.asarray(a, dtype=complex)
    gamma = np.asarray(gamma, dtype=float)
    _check_lengths(a, gamma)
    M = np.array([[0, a[0]], [np.conj(a[0]), 0]], dtype=complex)
    for m in range(1, len(a)):
        U = build_U([gamma[pair_index(j, m)] for j in range(m)])
        M = np.block([[M, a[m] * U], [np.conj(a[m]) * U.conj().T, M]])
    return M


def closed_form_M(a, gamma) -> np.ndarray:
    """Entry-wise characterization: nonzero only between bands differing in one bit j,
    with phase e^{+-i sum_{l<j} b(.)_l gamma_{l,j}}."""
    a = np.asarray(a, dtype=complex)
    gamma = np.asarray(gamma, dtype=float)
    _check_lengths(a, gamma)
    n = len(a)
    b = band_bits(n)
    M = np.zeros((2**n, 2**n), dtype=complex)
    for r in range(2**n):
        for j in range(n):
            e = r ^ (1 << j)
            if b[r, j] < b[e, j]:
                ph = sum(b[r, l] * gamma[pair_index(l, j)] for l in range(j))
                M[r, e] = np.exp(1j * ph) * a[j]
            else:
                ph = sum(b[e, l] * gamma[pair_index(l, j)] for l in range(j))
                M[r, e] = np.exp(-1j * ph) * np.conj(a[j])
    return M


@dataclass
class BuildResult:
    M: np.ndarray
    U: np.ndarray
    closed: np.ndarray
    max_diff: float
    U_diag_ok: bool


def build_M_U(a, gamma, xi) -> BuildResult:
    a, gamma, xi = (np.atleast_1d(np.asarray(v)) for v in (a, gamma, xi))
    if len(xi) != len(a):
        raise DimensionMismatch("xi and a must have the same length")
    M = build_M(a, gamma)
    C = closed_form_M(a, gamma)
    U = build_U(xi)
    b = band_bits(len(a))
    expected = np.diag(np.exp(1j * (b @ xi.astype(float))))
    return BuildResult(M, U, C, float(np.max(np.abs(M - C))), bool(np.allclose(U, expected, atol=1e-12, rtol=0)))


def hopping_coefficients(t, L: int, eps, k) -> np.ndarray:
    """a_j = t_j (1 + e^{i pi eps_j / L - i k_j}), halved when L = 1."""
    t = np.asarray(t, dtype=float)
    a = t * (1 + np.exp(1j * np.pi * np.asarray(eps, dtype=float) / L - 1j * np.asarray(k, dtype=float)))
    return a * 0.5 if L == 1 else a


def dispersion_general(t, L: int, eps, gamma, k) -> np.ndarray:
    """E(eps, gamma)(k) = M_d(a(k), -gamma)."""
    return build_M(hopping_coefficients(t, L, eps, k), -np.asarray(gamma, dtype=float))


def dispersion(config: LatticeConfig, k) -> np.ndarray:
    """Physical dispersion E(eps^L, theta)(k)."""
    return dispersion_general(config.t, config.L, config.eps, config.theta, k)


def dispersion_batch(t, L: int, eps, gamma, ks) -> np.ndarray:
    """E(eps, gamma)(k) for an array of momenta, shape (n, 2^d, 2^d), using real-linearity in a."""
    ks = np.atleast_2d(np.asarray(ks, dtype=float))
    d = ks.shape[1]
    g = -np.asarray(gamma, dtype=float)
    basis_re = np.array([build_M(np.eye(d)[j], g) for j in range(d)])
    basis_im = np.array([build_M(1j * np.eye(d)[j], g) for j in range(d)])
    t = np.asarray(t, dtype=float)
    a = t * (1 + np.exp(1j * np.pi * np.asarray(eps, dtype=float) / L - 1j * ks))
    if L == 1:
        a = 0.5 * a
    return np.einsum("nj,jab->nab", a.real, basis_re) + np.einsum("nj,jab->nab", a.imag, basis_im)


def script_dispersion(config: LatticeConfig, k) -> np.ndarray:
    """The matrix E(-eps^L, -theta)(k) that enters the covariances."""
    return dispersion_general(config.t, config.L, -np.asarray(config.eps), -np.asarray(config.theta), k)


def momenta(L: int, d: int) -> np.ndarray:
    """Gamma(L)* = (2 pi / L){0..L-1}^d, ordered like the sites of Torus(d, L)."""
    return 2 * np.pi / L * Torus(d, L).coords


@dataclass
class PositionHopping:
    F: np.ndarray = field(repr=False)  # indexed by (band, coarse site) with band major
    G: np.ndarray = field(repr=False)  # indexed by fine sites


def position_hopping(config: LatticeConfig) -> PositionHopping:
    """F((rho,x),(eta,y)) = L^-d sum_k e^{i<x-y,k>} E(k)(rho,eta) and G = F after nu."""
    d, L = config.d, config.L
    coarse = Torus(d, L)
    ks = momenta(L, d)
    nb, ns = 2**d, coarse.nsites
    Ek = np.array([dispersion(config, k) for k in ks])  # (nk, nb, nb)
    phase = np.exp(1j * coarse.coords @ ks.T)  # (ns, nk): e^{i<x,k>}
    # F[r, x, e, y] = L^-d sum_k e^{i<x,k>} e^{-i<y,k>} E_k[r, e]
    F = np.einsum("xk,yk,kre->rxey", phase, phase.conj(), Ek) / L**d
    F = F.reshape(nb * ns, nb * ns)
    maps = index_maps(config)
    nu = maps.nu_table.reshape(-1)  # (band, coarse) -> fine
    G = np.zeros_like(F)
    G[np.ix_(nu, nu)] = F
    return PositionHopping(F=F, G=G)


def multiband_hopping(config: LatticeConfig) -> np.ndarray:
    return position_hopping(config).F


def chessboard_hopping(config: LatticeConfig) -> np.ndarray:
    return chessboard_phase(config).hopping_matrix(config.t)


def finite_difference(f, x: float, order: int, step: float = 1e-3):
    """Fourth-order central difference for derivative orders 1..3."""
    h = step
    if order == 1:
        return (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h)
    if order == 2:
        return (-f(x + 2 * h) + 16 * f(x + h) - 30 * f(x) + 16 * f(x - h) - f(x - 2 * h)) / (12 * h**2)
    if order == 3:
        return (
            -f(x + 3 * h) + 8 * f(x + 2 * h) - 13 * f(x + h) + 13 * f(x - h) - 8 * f(x - 2 * h) + f(x - 3 * h)
        ) / (8 * h**3)
    raise ValueError("order must be 1, 2 or 3")


_STENCIL_WEIGHT = {1: 18 / 12, 2: 64 / 12, 3: 44 / 8}


def stencil_noise(order: int, scale: float, step: float = 1e-3) -> float:
    """Rounding-error floor of the difference stencil for a function of size ``scale``."""
    return 4 * np.finfo(float).eps * _STENCIL_WEIGHT[order] * scale / step**order


def opnorm(A) -> float:
    return float(np.linalg.norm(A, 2))


def min_singular(A) -> float:
    """Smallest singular value from the eigenvalues of A* A."""
    w = np.linalg.eigvalsh(A.conj().T @ A)
    return float(np.sqrt(max(w[0], 0.0)))


def lower_bound(t, L: int, eps, gamma, k) -> float:
    d = len(t)
    margin = flux_margin(gamma, d)
    s = np.sum(np.abs(1 + np.exp(1j * np.pi * np.asarray(eps) / L - 1j * np.asarray(k))) ** 2)
    return float(np.sqrt(max(1 - margin, 0.0)) * 0.5 * min(t) * np.sqrt(s))


def f_t(config: LatticeConfig) -> float:
    return 0.25 * min(config.t) ** 2 * (1 - config.margin)


@dataclass
class BoundsReport:
    samples: int
    norm_violations: int = 0
    derivative_violations: int = 0
    lower_violations: int = 0
    symmetry_violations: int = 0
    max_norm_ratio: float = 0.0
    max_derivative_ratio: float = 0.0
    min_lower_ratio: float = np.inf
    f_t: float = 0.0
    f_t_ok: bool = True
    witnesses: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.norm_violations or self.derivative_violations or self.lower_violations or self.symmetry_violations)


def sample_momenta(d: int, count: int, rng: np.random.Generator) -> np.ndarray:
    corners = np.pi * Torus(d, 2).coords
    rand = rng.uniform(0, 2 * np.pi, size=(max(count - len(corners), 0), d))
    return np.vstack([corners, rand])[:count] if count >= len(corners) else corners[:count]


def spectral_report(
    config: LatticeConfig,
    sample_count: int,
    rng: np.random.Generator | None = None,
    random_flux: bool = False,
    rel_tol: float = 1e-6,
    raise_on_violation: bool = False,
) -> BoundsReport:
    """Check the norm, derivative and lower bounds of the dispersion on sampled momenta.

    With random_flux the circle fluxes and gamma are drawn per sample as well.
    """
    rng = rng or np.random.default_rng(0)
    d, L, t = config.d, config.L, np.asarray(config.t)
    rep = BoundsReport(samples=sample_count, f_t=f_t(config))
    rep.f_t_ok = (max(t) != 1.0) or rep.f_t <= 0.25 + 1e-15
    ks = sample_momenta(d, sample_count, rng)
    Upi = build_U(np.full(d, np.pi))
    for k in ks:
        if random_flux:
            eps = rng.integers(0, 2, size=d) if L > 1 else np.zeros(d, dtype=int)
            gamma = rng.uniform(-np.pi, np.pi, size=d * (d - 1) // 2)
        else:
            eps, gamma = np.asarray(config.eps), np.asarray(config.theta)
        E = dispersion_general(t, L, eps, gamma, k)
        n = opnorm(E)
        bound = 2 * t.sum()
        rep.max_norm_ratio = max(rep.max_norm_ratio, n / bound)
        if n > bound * (1 + rel_tol):
            rep.norm_violations += 1
            rep.witnesses.append(("norm", k.tolist()))
        for j in range(d):
            def Ej(x, j=j):
                kk = k.astype(float).copy()
                kk[j] = x
                return dispersion_general(t, L, eps, gamma, kk)

            for order in (1, 2, 3):
                dn = opnorm(finite_difference(Ej, k[j], order))
                rep.max_derivative_ratio = max(rep.max_derivative_ratio, dn / t[j])
                if dn > t[j] * (1 + rel_tol) + stencil_noise(order, bound):
                    rep.derivative_violations += 1
                    rep.witnesses.append((f"derivative{order}", k.tolist()))
        lb = lower_bound(t, L, eps, gamma, k)
        sv = min_singular(E)
        if lb > 0:
            rep.min_lower_ratio = min(rep.min_lower_ratio, sv / lb)
        if sv < lb * (1 - rel_tol) - 1e-12:
            rep.lower_violations += 1
            rep.witnesses.append(("lower", k.tolist()))
        if not np.allclose(Upi @ E @ Upi.conj().T, -E, atol=1e-12):
            rep.symmetry_violations += 1
            rep.witnesses.append(("chiral", k.tolist()))
        Ue = build_U(-np.pi * np.asarray(eps) / L)
        Uk = build_U(k)
        Eref = dispersion_general(t, L, eps, gamma, -k + 2 * np.pi * np.asarray(eps) / L)
        lhs = Ue @ Uk @ Eref @ Uk.conj().T @ Ue.conj().T
        if not np.allclose(lhs, E, atol=1e-12):
            rep.symmetry_violations += 1
            rep.witnesses.append(("inversion", k.tolist()))
    if raise_on_violation and not rep.ok:
        kind, k = rep.witnesses[0]
        raise BoundViolation(f"{kind} bound fails at k={k}")
    return rep


def squared_block_check(a, gamma) -> float:
    """Largest deviation between the blocks of M_{n+1}^2 and the identities
    top-left = M_n^2 + |a_{n+1}|^2 I and
    top-right = a_{n+1} M_n((1 + e^{-i gamma_{j,n+1}}) a_j) U_n(gamma_{.,n+1})."""
    a = np.asarray(a, dtype=complex)
    gamma = np.asarray(gamma, dtype=float)
    n1 = len(a)
    n = n1 - 1
    M = build_M(a, gamma)
    Mn = build_M(a[:n], gamma[: n * (n - 1) // 2])
    g_last = np.array([gamma[pair_index(j, n)] for j in range(n)])
    Un = build_U(g_last)
    S = M @ M
    h = 2**n
    tl = Mn @ Mn + abs(a[n]) ** 2 * np.eye(h)
    tr = a[n] * build_M((1 + np.exp(-1j * g_last)) * a[:n], gamma[: n * (n - 1) // 2]) @ Un
    return float(max(np.max(np.abs(S[:h, :h] - tl)), np.max(np.abs(S[:h, h:] - tr))))
