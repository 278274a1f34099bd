"""Exact diagonalization on the fermionic Fock space of a finite mode set.

Basis states are occupation bit strings ``s`` (bit ``i`` = mode ``i``), with
``|s> = c^+_{i1} c^+_{i2} ... |0>`` for ascending occupied modes.  The
annihilator picks up ``(-1)^{#occupied modes below i}``.

One-band modes are ``2 * site + spin`` on Gamma(2L); multi-band modes are
``2 * (band * L^d + coarse_site) + spin``; spin 0 is up and 1 is down.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from math import comb, factorial

import numpy as np
import scipy.sparse as sp
from scipy.special import logsumexp

from .errors import IdentityViolation, InconsistentTransform, NonHermitian, TooLarge
from .hopping import position_hopping
from .lattice import BondPhase, LatticeConfig, Torus, chessboard_phase, index_maps

MAX_MODES = 16
PAULI = (
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)


def popcount(a):
    a = np.asarray(a, dtype=np.int64)
    c = np.zeros_like(a)
    while np.any(a):
        c += a & 1
        a = a >> 1
    return c


def perm_sign(p) -> int:
    p = list(p)
    s = 1
    for i in range(len(p)):
        for j in range(i + 1, len(p)):
            if p[i] > p[j]:
                s = -s
    return s


class FockSpace:
    """Jordan-Wigner creation and annihilation operators on m modes."""

    def __init__(self, m: int):
        if m > MAX_MODES:
            raise TooLarge(f"{m} modes exceed the dense cap of {MAX_MODES}")
        self.m = m
        self.dim = 2**m
        states = np.arange(self.dim)
        self.occupation = (states[:, None] >> np.arange(m)[None, :]) & 1
        self.number = self.occupation.sum(axis=1)
        ann = []
        for i in range(m):
            occ = self.occupation[:, i] == 1
            src = states[occ]
            below = popcount(src & ((1 << i) - 1))
            data = (-1.0) ** below
            ann.append(sp.csr_matrix((data, (src ^ (1 << i), src)), shape=(self.dim, self.dim), dtype=complex))
        self.c = ann
        self.cdag = [a.conj().T.tocsr() for a in ann]

    def n(self, i):
        return sp.diags(self.occupation[:, i].astype(complex)).tocsr()

    def identity(self):
        return sp.identity(self.dim, dtype=complex, format="csr")

    def quadratic(self, K) -> sp.csr_matrix:
        """sum_{a,b} K[a,b] c^+_a c_b."""
        out = sp.csr_matrix((self.dim, self.dim), dtype=complex)
        for a, b in zip(*np.nonzero(np.abs(K) > 0)):
            out = out + K[a, b] * (self.cdag[a] @ self.c[b])
        return out

    def monomial(self, X, Y):
        """c^+_{X1} ... c^+_{Xm} c_{Y1} ... c_{Ym}."""
        op = self.identity()
        for x in X:
            op = op @ self.cdag[x]
        for y in Y:
            op = op @ self.c[y]
        return op


# ---------------------------------------------------------------- kernels


def nn_profile(r):
    """Continuous profile in [0,1]: 0 at 0, 1 on [2/pi, 1], 0 on [4/pi, inf)."""
    r = np.asarray(r, dtype=float)
    up = np.clip(r / (2 / np.pi), 0, 1)
    down = np.clip((4 / np.pi - r) / (4 / np.pi - 1), 0, 1)
    return np.minimum(up, down)


def chord(x, L: int):
    """(L/pi)|e^{i pi x / L} - 1| componentwise."""
    return L / np.pi * np.abs(np.exp(1j * np.pi * np.asarray(x) / L) - 1)


def nn_coupling(L: int, x) -> float:
    """f^L(x) for the nearest-neighbour profile."""
    return float(nn_profile(np.sum(chord(x, L))))


@dataclass
class InteractionKernelFamily:
    """Kernels V_0, V_1, ..., V_Nv as linear functions of the couplings.

    ``V0[c]`` is the constant of channel c; ``Vm[m][c]`` is a dict from
    ``(X1..Xm, Y1..Ym)`` one-band mode tuples to the channel-c coefficient.
    """

    d: int
    L: int
    channels: list
    V0: np.ndarray
    Vm: dict
    tag: str = "custom"
    N_v: int = 2

    @property
    def n_v(self) -> int:
        return len(self.channels)

    @property
    def n_modes(self) -> int:
        return 2 * (2 * self.L) ** self.d

    def v0(self, U) -> complex:
        return complex(np.dot(np.asarray(U, dtype=complex), self.V0))

    def kernel(self, m: int, U) -> dict:
        U = np.asarray(U, dtype=complex)
        out: dict = {}
        for c, ker in enumerate(self.Vm.get(m, [{}] * self.n_v)):
            if U[c] == 0:
                continue
            for key, v in ker.items():
                out[key] = out.get(key, 0) + U[c] * v
        return {k: v for k, v in out.items() if v != 0}

    def dense(self, m: int, U) -> np.ndarray:
        n = self.n_modes
        A = np.zeros((n,) * (2 * m), dtype=complex)
        for key, v in self.kernel(m, U).items():
            A[key] = v
        return A

    def __add__(self, other: "InteractionKernelFamily") -> "InteractionKernelFamily":
        if (self.d, self.L) != (other.d, other.L):
            raise ValueError("families live on different lattices")
        Vm = {}
        for m in set(self.Vm) | set(other.Vm):
            Vm[m] = list(self.Vm.get(m, [{}] * self.n_v)) + list(other.Vm.get(m, [{}] * other.n_v))
        return InteractionKernelFamily(
            self.d,
            self.L,
            self.channels + other.channels,
            np.concatenate([self.V0, other.V0]),
            Vm,
            tag=f"{self.tag}+{other.tag}",
            N_v=max(self.N_v, other.N_v),
        )


def _mode(site: int, spin: int) -> int:
    return 2 * site + spin


def onsite_family(d: int, L: int, parity_classes: bool = False) -> InteractionKernelFamily:
    """U_o(g(parity of x)) (n_up - 1/2)(n_down - 1/2) summed over sites."""
    T = Torus(d, 2 * L)
    cls = T.coords % 2 @ (2 ** np.arange(d)) if parity_classes else np.zeros(T.nsites, dtype=int)
    n_ch = 2**d if parity_classes else 1
    V2 = [dict() for _ in range(n_ch)]
    V1 = [dict() for _ in range(n_ch)]
    V0 = np.zeros(n_ch)
    up, dn = 0, 1
    for x in range(T.nsites):
        c = cls[x]
        for s1, s2 in ((up, dn), (dn, up)):
            for t1, t2 in ((up, dn), (dn, up)):
                a = 1 if (s1, s2) == (up, dn) else -1
                b = 1 if (t1, t2) == (dn, up) else -1
                V2[c][(_mode(x, s1), _mode(x, s2), _mode(x, t1), _mode(x, t2))] = 0.25 * a * b
        for s in (up, dn):
            V1[c][(_mode(x, s), _mode(x, s))] = -0.5
        V0[c] += 0.25
    names = [f"U_o{g}" for g in range(n_ch)] if parity_classes else ["U_o"]
    return InteractionKernelFamily(d, L, names, V0, {1: V1, 2: V2}, tag="on-site")


def _pair_terms(d: int, L: int, f):
    T = Torus(d, 2 * L)
    for x1 in range(T.nsites):
        for x2 in range(T.nsites):
            w = f(L, T.coords[x1] - T.coords[x2])
            if w != 0:
                yield x1, x2, w


def density_family(d: int, L: int, f=nn_coupling) -> InteractionKernelFamily:
    """U_d sum_{x,y} f^L(x-y)(n_x - 1)(n_y - 1)."""
    T = Torus(d, 2 * L)
    V2: dict = {}
    for x1, x2, w in _pair_terms(d, L, f):
        for s1 in (0, 1):
            for s2 in (0, 1):
                X = (_mode(x1, s1), _mode(x2, s2))
                for Y in (X, X[::-1]):
                    tot = 0.0
                    for eta in itertools.permutations(range(2)):
                        for xi in itertools.permutations(range(2)):
                            if X[eta[0]] == Y[xi[1]] and X[eta[1]] == Y[xi[0]]:
                                tot += perm_sign(eta) * perm_sign(xi)
                    if tot:
                        V2[X + Y] = 0.25 * w * tot
    fsum = sum(f(L, T.coords[z]) for z in range(T.nsites))
    V1 = {(i, i): -2.0 * fsum for i in range(2 * T.nsites)}
    V0 = np.array([(2 * L) ** d * fsum])
    return InteractionKernelFamily(d, L, ["U_d"], V0, {1: [V1], 2: [V2]}, tag="density-density")


def spin_family(d: int, L: int, f=nn_coupling) -> InteractionKernelFamily:
    """sum_j U_{s,j} sum_{x,y} f^L(x-y)(psi*_x P^j psi_x)(psi*_y P^j psi_y)."""
    V2s = []
    for P in PAULI:
        V2: dict = {}
        for x1, x2, w in _pair_terms(d, L, f):
            for s1, s2, t1, t2 in itertools.product((0, 1), repeat=4):
                xs, ss, ts = (x1, x2), (s1, s2), (t1, t2)
                for ys in ((x1, x2), (x2, x1)):
                    tot = 0.0
                    for eta in itertools.permutations(range(2)):
                        for xi in itertools.permutations(range(2)):
                            if xs[eta[0]] == ys[xi[1]] and xs[eta[1]] == ys[xi[0]]:
                                tot += (
                                    perm_sign(eta)
                                    * perm_sign(xi)
                                    * P[ss[eta[0]], ts[xi[1]]]
                                    * P[ss[eta[1]], ts[xi[0]]]
                                )
                    if tot != 0:
                        key = (_mode(x1, s1), _mode(x2, s2), _mode(ys[0], t1), _mode(ys[1], t2))
                        V2[key] = 0.25 * w * tot
        V2s.append(V2)
    return InteractionKernelFamily(d, L, ["U_s1", "U_s2", "U_s3"], np.zeros(3), {2: V2s}, tag="spin-spin")


def reflection_positive_family(d: int, L: int) -> InteractionKernelFamily:
    """Channels (U_o, U_d, U_s1, U_s2, U_s3) with nearest-neighbour profiles."""
    fam = onsite_family(d, L) + density_family(d, L) + spin_family(d, L)
    fam.tag = "reflection-positive-combo"
    return fam


PRESETS = {
    "on-site": onsite_family,
    "density-density": density_family,
    "spin-spin": spin_family,
    "reflection-positive-combo": reflection_positive_family,
}


# ------------------------------------------------------- direct operators


def onsite_operator(fs: FockSpace, d: int, L: int, U: float):
    T = Torus(d, 2 * L)
    I = fs.identity()
    op = sp.csr_matrix((fs.dim, fs.dim), dtype=complex)
    for x in range(T.nsites):
        op = op + U * (fs.n(_mode(x, 0)) - 0.5 * I) @ (fs.n(_mode(x, 1)) - 0.5 * I)
    return op


def density_operator(fs: FockSpace, d: int, L: int, U: float, f=nn_coupling):
    I = fs.identity()
    dens = {}
    op = sp.csr_matrix((fs.dim, fs.dim), dtype=complex)
    for x1, x2, w in _pair_terms(d, L, f):
        for x in (x1, x2):
            if x not in dens:
                dens[x] = fs.n(_mode(x, 0)) + fs.n(_mode(x, 1)) - I
        op = op + U * w * dens[x1] @ dens[x2]
    return op


def spin_operator(fs: FockSpace, d: int, L: int, U, f=nn_coupling):
    op = sp.csr_matrix((fs.dim, fs.dim), dtype=complex)
    for j, P in enumerate(PAULI):
        if U[j] == 0:
            continue
        S = {}
        for x1, x2, w in _pair_terms(d, L, f):
            for x in (x1, x2):
                if x not in S:
                    S[x] = sum(P[a, b] * fs.cdag[_mode(x, a)] @ fs.c[_mode(x, b)] for a in (0, 1) for b in (0, 1))
            op = op + U[j] * w * S[x1] @ S[x2]
    return op


# ------------------------------------------------------ hamiltonians


def kernel_operator(fs: FockSpace, family: InteractionKernelFamily, U, relabel=None):
    """sum_m sum V_m(X,Y) c^+_X c_Y + V_0, optionally mapping kernel modes via relabel."""
    op = family.v0(U) * fs.identity()
    for m in sorted(family.Vm):
        for key, v in family.kernel(m, U).items():
            if relabel is not None:
                key = tuple(relabel[k] for k in key)
            op = op + v * fs.monomial(key[:m], key[m:])
    return op


def check_hermitian(H, tol: float = 1e-10):
    D = H - H.conj().T
    err = abs(D).max() if sp.issparse(D) else np.max(np.abs(D))
    if err > tol:
        raise NonHermitian(f"operator is not hermitian (max deviation {err:.3e})")


def one_band_free(config: LatticeConfig, phase: BondPhase | None = None, fs: FockSpace | None = None):
    phase = phase or chessboard_phase(config)
    T = phase.hopping_matrix(config.t)
    n = T.shape[0]
    fs = fs or FockSpace(2 * n)
    K = np.kron(T, np.eye(2))
    return fs.quadratic(K), fs


def build_hamiltonian(
    config: LatticeConfig,
    family: InteractionKernelFamily | None = None,
    U=None,
    form: str = "one-band",
    phase: BondPhase | None = None,
):
    """Return (H, H0, FockSpace) as sparse matrices.

    one-band: hopping from the bond phase on Gamma(2L); multi-band: hopping
    from the Fourier kernel F and kernels relabelled through nu.
    """
    nsites = (2 * config.L) ** config.d
    m = 2 * nsites
    if m > MAX_MODES:
        raise TooLarge(f"{m} modes exceed the dense cap of {MAX_MODES}")
    fs = FockSpace(m)
    if form == "one-band":
        H0, _ = one_band_free(config, phase, fs)
        relabel = None
    elif form == "multi-band":
        F = position_hopping(config).F
        H0 = fs.quadratic(np.kron(F, np.eye(2)))
        relabel = multiband_relabel(config)
    else:
        raise ValueError(f"unknown form {form!r}")
    if family is None or U is None:
        return H0, H0, fs
    U = np.asarray(U, dtype=complex)
    if np.all(np.isreal(U)):
        _check_kernel_hermiticity(family, U.real)
    V = kernel_operator(fs, family, U, relabel)
    H = H0 + V
    if np.all(np.isreal(U)):
        check_hermitian(H)
    return H, H0, fs


def _check_kernel_hermiticity(family, U, tol=1e-12):
    for m in family.Vm:
        ker = family.kernel(m, U)
        for key, v in ker.items():
            back = ker.get(key[m:] + key[:m], 0)
            if abs(v - np.conj(back)) > tol:
                raise NonHermitian(f"kernel V_{m} violates hermiticity at {key}")


def multiband_relabel(config: LatticeConfig) -> np.ndarray:
    """relabel[one-band mode] = multi-band mode, inverting (band, x, spin) -> (nu(band,x), spin)."""
    nu = index_maps(config).nu_table.reshape(-1)  # band-major (band, coarse site) -> fine
    out = np.empty(2 * len(nu), dtype=int)
    for a, fine in enumerate(nu):
        for s in (0, 1):
            out[2 * fine + s] = 2 * a + s
    return out


# ------------------------------------------------------ thermodynamics


@dataclass
class Spectrum:
    """Eigen-decomposition of a particle-number conserving operator, by sector."""

    evals: np.ndarray
    evecs: np.ndarray = field(repr=False)

    def log_z(self, beta: float) -> float:
        return float(logsumexp(-beta * self.evals))

    def weights(self, beta: float) -> np.ndarray:
        w = -beta * self.evals
        return np.exp(w - logsumexp(w))


def diagonalize(H, fs: FockSpace | None = None) -> Spectrum:
    Hd = H.toarray() if sp.issparse(H) else np.asarray(H)
    dim = Hd.shape[0]
    if fs is not None:
        num = fs.number
        off = Hd[num[:, None] != num[None, :]]
        if off.size == 0 or np.max(np.abs(off)) < 1e-13:
            evals = np.empty(dim)
            evecs = np.zeros((dim, dim), dtype=complex)
            pos = 0
            for n in range(fs.m + 1):
                idx = np.nonzero(num == n)[0]
                w, v = np.linalg.eigh(Hd[np.ix_(idx, idx)])
                evals[pos : pos + len(idx)] = w
                evecs[idx, pos : pos + len(idx)] = v
                pos += len(idx)
            return Spectrum(evals, evecs)
    w, v = np.linalg.eigh(Hd)
    return Spectrum(w, v)


@dataclass
class Thermo:
    log_z: float
    free_energy_density: float
    densities: np.ndarray


def thermodynamics(H, config: LatticeConfig, fs: FockSpace, beta: float | None = None) -> Thermo:
    beta = config.beta if beta is None else beta
    spec = diagonalize(H, fs)
    logz = spec.log_z(beta)
    p = spec.weights(beta)
    diag = (np.abs(spec.evecs) ** 2) @ p  # occupation of each basis state
    dens = diag @ fs.occupation
    return Thermo(logz, -logz / (beta * (2 * config.L) ** config.d), dens)


def free_log_z(one_particle: np.ndarray, beta: float, spin: int = 2) -> float:
    """log prod_lambda (1 + e^{-beta lambda}) over the one-particle spectrum, times spin."""
    lam = np.linalg.eigvalsh(one_particle)
    return float(spin * np.sum(np.logaddexp(0.0, -beta * lam)))


# -------------------------------------------------------- transforms


def particle_hole_unitary(fs: FockSpace, d: int, L: int) -> np.ndarray:
    """A|s> = (-1)^{sum of coordinates of occupied sites} c_{i1}...c_{in} |all pairs filled>."""
    T = Torus(d, 2 * L)
    full = np.zeros(fs.dim, dtype=complex)
    full[-1] = 1.0  # ascending product of all creators equals prod_x (c+_{x up} c+_{x down})
    A = np.zeros((fs.dim, fs.dim), dtype=complex)
    coord_sum = T.coords.sum(axis=1)
    for s in range(fs.dim):
        occ = np.nonzero(fs.occupation[s])[0]
        v = full
        for i in occ[::-1]:
            v = fs.c[i] @ v
        sign = (-1) ** int(sum(coord_sum[i // 2] for i in occ))
        A[:, s] = sign * v
    return A


def mode_permutation_unitary(fs: FockSpace, perm) -> np.ndarray:
    """W with W c_a W* = c_{perm[a]}: W|s> = c+_{perm[i1]} ... c+_{perm[in]} |0>."""
    W = np.zeros((fs.dim, fs.dim), dtype=complex)
    vac = np.zeros(fs.dim, dtype=complex)
    vac[0] = 1.0
    for s in range(fs.dim):
        v = vac
        for i in np.nonzero(fs.occupation[s])[0][::-1]:
            v = fs.cdag[perm[i]] @ v
        W[:, s] = v
    return W


def gauge_unitary(fs: FockSpace, theta) -> sp.csr_matrix:
    """B = exp(i sum_x theta(x) n_x), so B c+_x B* = e^{i theta(x)} c+_x."""
    theta = np.asarray(theta, dtype=float)
    phases = fs.occupation @ np.repeat(theta, 2)
    return sp.diags(np.exp(1j * phases)).tocsr()


def conjugate(U, H, expected=None, tol: float = 1e-9):
    """U H U*; if ``expected`` is given, raise InconsistentTransform on mismatch."""
    Ud = U.toarray() if sp.issparse(U) else U
    Hd = H.toarray() if sp.issparse(H) else H
    out = Ud @ Hd @ Ud.conj().T
    if expected is not None:
        Ed = expected.toarray() if sp.issparse(expected) else expected
        err = np.max(np.abs(out - Ed))
        if err > tol:
            raise InconsistentTransform(f"conjugation identity fails by {err:.3e}")
    return out


# ------------------------------------------------- kernel conditions


def _mode_map(family: InteractionKernelFamily, fn):
    """Apply fn(coords, spin) -> (coords, spin) to every one-band mode."""
    T = Torus(family.d, 2 * family.L)
    out = np.empty(family.n_modes, dtype=int)
    for mode in range(family.n_modes):
        x, s = divmod(mode, 2)
        y, t = fn(T.coords[x], s)
        out[mode] = 2 * int(T.index(y)) + t
    return out


def _dicts_equal(a: dict, b: dict, tol: float) -> bool:
    for k in set(a) | set(b):
        if abs(a.get(k, 0) - b.get(k, 0)) > tol:
            return False
    return True


def check_conditions(family: InteractionKernelFamily, U=None, rng=None, tol: float = 1e-12) -> dict:
    """Evaluate the structural conditions on every stored kernel entry.

    Keys: bi_antisymmetry, spin_parity, spin_reflection, periodicity,
    translation, inversion, u1, hermiticity, particle_hole.
    """
    rng = rng or np.random.default_rng(0)
    U = np.ones(family.n_v) if U is None else np.asarray(U, dtype=complex)
    res = {}
    kers = {m: family.kernel(m, U) for m in family.Vm}
    ok = True
    for m, ker in kers.items():
        for key, v in ker.items():
            X, Y = key[:m], key[m:]
            for p in itertools.permutations(range(m)):
                for q in itertools.permutations(range(m)):
                    k2 = tuple(X[i] for i in p) + tuple(Y[i] for i in q)
                    if abs(ker.get(k2, 0) - perm_sign(p) * perm_sign(q) * v) > tol:
                        ok = False
    res["bi_antisymmetry"] = ok
    res["spin_parity"] = all(sum(1 - (k % 2) for k in key) % 2 == 0 for ker in kers.values() for key in ker)
    flip = _mode_map(family, lambda x, s: (x, 1 - s))
    res["spin_reflection"] = all(
        _dicts_equal(ker, {tuple(flip[k] for k in key): v for key, v in ker.items()}, tol) for ker in kers.values()
    )
    res["periodicity"] = True  # kernels are stored on the torus itself
    trans_ok = True
    for j in range(family.d):
        e = np.zeros(family.d, dtype=int)
        e[j] = 2
        sh = _mode_map(family, lambda x, s, e=e: (x + e, s))
        trans_ok &= all(
            _dicts_equal(ker, {tuple(sh[k] for k in key): v for key, v in ker.items()}, tol) for ker in kers.values()
        )
    res["translation"] = bool(trans_ok)
    inv = _mode_map(family, lambda x, s: (-x, s))
    res["inversion"] = all(
        _dicts_equal(ker, {tuple(inv[k] for k in key): v for key, v in ker.items()}, tol) for ker in kers.values()
    )
    th = rng.uniform(-np.pi, np.pi, size=family.n_modes // 2)
    u1 = True
    for m, ker in kers.items():
        for key, v in ker.items():
            ph = sum(th[k // 2] for k in key[:m]) - sum(th[k // 2] for k in key[m:])
            u1 &= abs(np.exp(1j * ph) * v - v) <= tol * max(1, abs(v))
    res["u1"] = bool(u1)
    Uc = rng.normal(size=family.n_v) + 1j * rng.normal(size=family.n_v)
    herm = abs(family.v0(Uc) - np.conj(family.v0(np.conj(Uc)))) <= tol
    for m in family.Vm:
        a, b = family.kernel(m, Uc), family.kernel(m, np.conj(Uc))
        herm &= _dicts_equal(a, {key[m:] + key[:m]: np.conj(v) for key, v in b.items()}, tol)
    res["hermiticity"] = bool(herm)
    res["particle_hole"] = particle_hole_residual(family, U) <= 1e-10
    return res


def particle_hole_residual(family: InteractionKernelFamily, U) -> float:
    """Largest deviation in the particle-hole identity, summed literally with the
    weights binom(m+l, l)^2 l!, over every m = 0..N_v and every argument."""
    Nv = family.N_v
    dense = {m: family.dense(m, U) for m in range(1, Nv + 1)}
    dense[0] = np.array(family.v0(U))
    worst = 0.0
    for m in range(0, Nv + 1):
        rhs = np.zeros_like(dense[m])
        for l in range(0, Nv - m + 1):
            V = dense[m + l]
            # contract the last l slots of X with the reversed first l slots of Y
            if l == 0:
                term = V
            else:
                axes_x = list(range(m, m + l))
                axes_y = [m + l + (l - 1 - i) for i in range(l)]
                term = _trace_pairs(V, axes_x, axes_y)
            rhs = rhs + comb(m + l, l) ** 2 * factorial(l) * term
        rhs = (-1) ** m * rhs
        worst = max(worst, float(np.max(np.abs(rhs - dense[m]))))
    return worst


def _trace_pairs(V, axes_a, axes_b):
    letters = "abcdefghijklmnopqrstuvwxyz"
    idx = list(letters[: V.ndim])
    for a, b in zip(axes_a, axes_b):
        idx[b] = idx[a]
    keep = [idx[i] for i in range(V.ndim) if i not in axes_a and i not in axes_b]
    return np.einsum("".join(idx) + "->" + "".join(keep), V)


# ------------------------------------------------------- covariance


def _free_one_particle(config: LatticeConfig) -> np.ndarray:
    return position_hopping(config).F


def thermal_covariance_one_particle(config: LatticeConfig, times=None) -> np.ndarray:
    """C over (band, coarse site, spin, time) from the one-particle matrix F.

    For s >= t: C = [N^T e^{(s-t) F^T}], for s < t: -[(1-N)^T e^{(s-t) F^T}],
    with N = (1 + e^{beta F})^{-1}, times spin delta.
    """
    F = _free_one_particle(config)
    beta = config.beta
    times = _grid(config) if times is None else np.asarray(times)
    w, v = np.linalg.eigh(F)
    nf = 0.5 * (1 - np.tanh(0.5 * beta * w))
    nb = F.shape[0]
    nt = len(times)
    C = np.zeros((nb, 2, nt, nb, 2, nt), dtype=complex)
    for i, s in enumerate(times):
        for j, t in enumerate(times):
            tau = s - t
            occ = nf if tau >= 0 else nf - 1
            M = (v * (np.exp(tau * w) * occ)) @ v.conj().T  # e^{tau F} N or -e^{tau F}(1-N)
            blk = M.T
            for sp_ in (0, 1):
                C[:, sp_, i, :, sp_, j] = blk
    return C.reshape(nb * 2 * nt, nb * 2 * nt)


def _grid(config: LatticeConfig) -> np.ndarray:
    return np.arange(config.n_time) / config.h


def thermal_covariance_ed(config: LatticeConfig, times=None) -> np.ndarray:
    """C from the many-body time-ordered trace with psi(x) = e^{x H0} psi e^{-x H0}."""
    H0, _, fs = build_hamiltonian(config, form="multi-band")
    spec = diagonalize(H0, fs)
    lam = spec.evals
    V = spec.evecs
    beta = config.beta
    times = _grid(config) if times is None else np.asarray(times)
    m = fs.m
    cd = [V.conj().T @ (fs.cdag[a] @ V) for a in range(m)]
    cc = [V.conj().T @ (fs.c[a] @ V) for a in range(m)]
    shift = lam.min()
    nt = len(times)
    logz = spec.log_z(beta)
    C = np.zeros((m, nt, m, nt), dtype=complex)
    diff = lam[:, None] - lam[None, :]
    for i, s in enumerate(times):
        for j, t in enumerate(times):
            tau = s - t
            # Tr(rho A(s) B(t)) = sum_{p,q} e^{-beta l_p} e^{tau (l_p - l_q)} A_pq B_qp / Z
            if tau >= 0:
                W = np.exp(-beta * lam[:, None] + tau * diff - logz)
                for a in range(m):
                    for b in range(m):
                        C[a, i, b, j] = np.sum(W * cd[a] * cc[b].T)
            else:
                # -Tr(rho B(t) A(s)) with t - s > 0
                W = np.exp(-beta * lam[:, None] - tau * diff - logz)
                for a in range(m):
                    for b in range(m):
                        C[a, i, b, j] = -np.sum(W * cc[b] * cd[a].T)
    del shift
    # reorder modes (band*site*spin) then time
    return C.reshape(m * nt, m * nt)


# ---------------------------------------------------- normal ordering


def random_bi_antisymmetric(m: int, n: int, rng: np.random.Generator) -> np.ndarray:
    f = rng.normal(size=(n,) * (2 * m)) + 1j * rng.normal(size=(n,) * (2 * m))
    out = np.zeros_like(f)
    for p in itertools.permutations(range(m)):
        for q in itertools.permutations(range(m)):
            axes = list(p) + [m + i for i in q]
            out = out + perm_sign(p) * perm_sign(q) * np.transpose(f, axes)
    return out / factorial(m) ** 2


@lru_cache(maxsize=16)
def _string_ops(n: int, k: int, dagger: bool) -> np.ndarray:
    """Dense products a^+_{X1}..a^+_{Xk} (or a_{X1}..a_{Xk}) for all X in S^k, shape (n^k, D, D)."""
    fs = FockSpace(n)
    ops = fs.cdag if dagger else fs.c
    dense = [o.toarray() for o in ops]
    out = np.empty((fs.m,) * k + (fs.dim, fs.dim), dtype=complex)
    for X in itertools.product(range(fs.m), repeat=k):
        M = np.eye(fs.dim, dtype=complex)
        for x in X:
            M = M @ dense[x]
        out[X] = M
    out = out.reshape(-1, fs.dim, fs.dim)
    out.setflags(write=False)
    return out


def _pair_sum(g: np.ndarray, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """sum_{x,y} g[x, y] left[x] @ right[y] as two matrix products."""
    N, D, _ = left.shape
    R = (g @ right.reshape(N, D * D)).reshape(N, D, D)
    return left.transpose(1, 0, 2).reshape(D, N * D) @ R.reshape(N * D, D)


def normal_order_sides(f: np.ndarray, m: int, n: int):
    """Both sides of the reordering identity as dense matrices."""
    D = 2**n
    lhs = _pair_sum(f.reshape(n**m, n**m), _string_ops(n, m, True), _string_ops(n, m, False))
    rhs = np.zeros((D, D), dtype=complex)
    for l in range(m + 1):
        k = m - l
        if l == 0:
            g = f
        else:
            g = _trace_pairs(f, list(range(k, m)), [m + (l - 1 - i) for i in range(l)])
        w = (-1) ** k * comb(m, l) ** 2 * factorial(l)
        if k == 0:
            rhs = rhs + w * complex(g) * np.eye(D)
            continue
        # sum_{X,Y} g[X, Y] a_Y a^+_X
        rhs = rhs + w * _pair_sum(g.reshape(n**k, n**k).T, _string_ops(n, k, False), _string_ops(n, k, True))
    return lhs, rhs


def normal_order_check(m: int, n: int, count: int = 1, rng=None, tol: float = 1e-12, f=None) -> float:
    """Largest deviation over ``count`` random kernels; raise IdentityViolation past tol."""
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for _ in range(count):
        ff = random_bi_antisymmetric(m, n, rng) if f is None else f
        lhs, rhs = normal_order_sides(ff, m, n)
        scale = max(1.0, float(np.max(np.abs(lhs))))
        worst = max(worst, float(np.max(np.abs(lhs - rhs))) / scale)
    if worst > tol:
        raise IdentityViolation(f"reordering identity fails at m={m}, n={n}: {worst:.3e}")
    return worst
