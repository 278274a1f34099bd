"""Cut-off functions, scale families and momentum-space covariances.

Covariances are dense matrices over I_0 = bands x Gamma(L) x spins x times,
flattened as ``((band * L^d + x) * 2 + spin) * n_t + s``, which matches the
ordering used by ``fock.thermal_covariance_ed``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial, floor, log

import mpmath
import numpy as np

from .errors import InvalidScale, InverseBoundViolation, ScaleOutOfRange, SingularDenominator
from .hopping import f_t as hopping_f_t
from .hopping import momenta, script_dispersion
from .lattice import LatticeConfig

LOW = np.pi**2 / 6
HIGH = np.pi**2 / 3


# ---------------------------------------------------------------- bump


def _transition(t):
    """g(t) = e^{-1/t} / (e^{-1/t} + e^{-1/(1-t)}), clamped to 0 / 1 outside (0, 1)."""
    t = np.asarray(t, dtype=float)
    out = np.where(t >= 1, 1.0, 0.0)
    inner = (t > 0) & (t < 1)
    ti = t[inner]
    # 1 / (1 + e^{1/t - 1/(1-t)}) written stably
    out[inner] = 0.5 * (1 - np.tanh(0.5 * (1 / ti - 1 / (1 - ti))))
    return out


def gevrey_phi(x):
    """Smooth nonincreasing bump: 1 on (-inf, pi^2/6], 0 on [pi^2/3, inf)."""
    x = np.asarray(x, dtype=float)
    out = _transition((HIGH - x) / (HIGH - LOW))
    return out if out.ndim else float(out)


def _phi_mp(x):
    t = (HIGH - x) / (HIGH - LOW)
    if t <= 0:
        return mpmath.mpf(0)
    if t >= 1:
        return mpmath.mpf(1)
    return 1 / (1 + mpmath.exp(1 / t - 1 / (1 - t)))


def derivative_probe(k: int, x: float, dps: int = 40) -> float:
    """k-th derivative of the bump at x, by high-precision numerical differentiation."""
    if x <= LOW or x >= HIGH:
        return 1.0 if (k == 0 and x <= LOW) else 0.0
    with mpmath.workdps(dps):
        return float(mpmath.diff(_phi_mp, mpmath.mpf(x), k))


@dataclass
class BumpProbe:
    k_max: int
    max_abs: dict
    c_phi: float


def probe_bump(k_max: int = 6, points: int = 100) -> BumpProbe:
    """Largest |phi^(k)| on a grid of the transition region and the fitted constant
    c with |phi^(k)| <= c^k (k!)^2."""
    xs = np.linspace(LOW, HIGH, points + 2)[1:-1]
    max_abs = {}
    c = 0.0
    for k in range(1, k_max + 1):
        m = max(abs(derivative_probe(k, x)) for x in xs)
        max_abs[k] = m
        c = max(c, (m / factorial(k) ** 2) ** (1 / k))
    return BumpProbe(k_max, max_abs, c)


# ------------------------------------------------------------- scales


def m_uv(d: int) -> float:
    return 2 * np.sqrt(6) / np.pi * (2 * d + 1)


def m_ir(d: int) -> float:
    return np.sqrt(6) / np.pi * np.sqrt(np.pi**2 / 3 * m_uv(d) ** 2 + d)


def n_h(d: int, h: float, M: float) -> int:
    if M <= 1:
        raise InvalidScale("M must exceed 1")
    return max(floor(log(2 * h * LOW**-0.5 / m_uv(d)) / log(M)) + 1, 1)


def n_beta(d: int, beta: float, M: float) -> int:
    if M <= 1 or beta <= 0:
        raise InvalidScale("need M > 1 and beta > 0")
    return min(floor(log((np.pi / beta) / (np.pi / np.sqrt(3) * m_ir(d))) / log(M)), 0)


def matsubara(beta: float, h: float | None = None, cutoff: float | None = None) -> np.ndarray:
    """Integers n with omega = (2n+1) pi / beta, either |omega| < pi h or |omega| < cutoff."""
    limit = np.pi * h if h is not None else cutoff
    nmax = int(np.ceil(limit * beta / (2 * np.pi))) + 1
    n = np.arange(-nmax - 1, nmax + 1)
    w = (2 * n + 1) * np.pi / beta
    return n[np.abs(w) < limit]


def omega(n, beta: float):
    return (2 * np.asarray(n) + 1) * np.pi / beta


@dataclass
class UVScales:
    d: int
    h: float
    M: float
    M_UV: float
    N_h: int

    def _arg(self, w):
        return self.h**2 * np.abs(1 - np.exp(1j * np.asarray(w) / self.h)) ** 2 / self.M_UV**2

    def chi(self, l: int, w):
        if not 0 <= l <= self.N_h:
            raise ScaleOutOfRange(f"UV scale {l} outside 0..{self.N_h}")
        a = self._arg(w)
        if l == 0:
            return gevrey_phi(a)
        return gevrey_phi(a * self.M ** (-2 * l)) - gevrey_phi(a * self.M ** (-2 * (l - 1)))


@dataclass
class IRScales:
    d: int
    L: int
    beta: float
    M: float
    M_UV: float
    M_IR: float
    N_beta: int
    f_t: float
    eps: tuple = field(default=())

    def A(self, w, k):
        """omega^2 + f_t sum_j |1 + e^{i pi eps_j/L + i k_j}|^2 (k has trailing axis d)."""
        k = np.asarray(k, dtype=float)
        e = np.asarray(self.eps, dtype=float)
        s = np.sum(np.abs(1 + np.exp(1j * np.pi * e / self.L + 1j * k)) ** 2, axis=-1)
        return np.asarray(w, dtype=float) ** 2 + self.f_t * s

    def uv_gate(self, w):
        return gevrey_phi(np.asarray(w, dtype=float) ** 2 / self.M_UV**2)

    def chi(self, l: int, w, k):
        a = self.A(w, k) / self.M_IR**2
        return self.uv_gate(w) * (gevrey_phi(a * self.M ** (-2 * (l + 1))) - gevrey_phi(a * self.M ** (-2 * l)))

    def chi_hat(self, m: int, w, k):
        a = self.A(w, k) / self.M_IR**2
        return self.uv_gate(w) * gevrey_phi(a * self.M ** (-2 * (m + 1)))

    def chi_le(self, l: int, w, k):
        if l < self.N_beta:
            raise ScaleOutOfRange(f"IR scale {l} below N_beta={self.N_beta}")
        return sum(self.chi(j, w, k) for j in range(self.N_beta, l + 1))

    def annulus(self, l: int):
        return np.pi / np.sqrt(6) * self.M_IR * self.M**l, np.pi / np.sqrt(3) * self.M_IR * self.M ** (l + 1)

    def frequencies(self) -> np.ndarray:
        """Matsubara integers where the UV gate can be nonzero."""
        return matsubara(self.beta, cutoff=np.pi / np.sqrt(3) * self.M_UV)


def cutoff_family(kind: str, config: LatticeConfig):
    if config.M < 2:
        raise InvalidScale("M must be at least 2")
    if kind == "UV":
        return UVScales(config.d, config.h, config.M, m_uv(config.d), n_h(config.d, config.h, config.M))
    if kind == "IR":
        return IRScales(
            config.d,
            config.L,
            config.beta,
            config.M,
            m_uv(config.d),
            m_ir(config.d),
            n_beta(config.d, config.beta, config.M),
            hopping_f_t(config),
            tuple(config.eps),
        )
    raise ValueError(f"unknown scale kind {kind!r}")


def uv_partition_residual(config: LatticeConfig) -> float:
    fam = cutoff_family("UV", config)
    w = omega(matsubara(config.beta, config.h), config.beta)
    total = sum(fam.chi(l, w) for l in range(fam.N_h + 1))
    return float(np.max(np.abs(total - 1)))


def ir_partition_residual(config: LatticeConfig, samples: int = 1000, rng=None) -> float:
    rng = rng or np.random.default_rng(0)
    fam = cutoff_family("IR", config)
    n = rng.choice(fam.frequencies(), size=samples)
    w = omega(n, config.beta)
    k = rng.uniform(0, 2 * np.pi, size=(samples, config.d))
    total = sum(fam.chi(l, w, k) for l in range(fam.N_beta, 1))
    return float(np.max(np.abs(total - fam.uv_gate(w))))


def annulus_violations(config: LatticeConfig, samples: int = 10_000, rng=None) -> int:
    """Count samples where chi_l is nonzero outside its annulus or outside [0, 1]."""
    rng = rng or np.random.default_rng(0)
    fam = cutoff_family("IR", config)
    bad = 0
    per = max(1, samples // (1 - fam.N_beta))
    for l in range(fam.N_beta, 1):
        lo, hi = fam.annulus(l)
        # sample magnitudes around the annulus so both edges are exercised
        r = rng.uniform(0.5 * lo, 1.5 * hi, size=per)
        k = rng.uniform(0, 2 * np.pi, size=(per, config.d))
        base = fam.A(0.0, k)
        w2 = np.maximum(r**2 - base, 0)
        w = np.sqrt(w2) * rng.choice([-1, 1], size=per)
        rad = np.sqrt(fam.A(w, k))
        c = fam.chi(l, w, k)
        outside = (rad <= lo) | (rad >= hi)
        bad += int(np.sum(outside & (c != 0)))
        bad += int(np.sum((c < 0) | (c > 1)))
    return bad


# --------------------------------------------------------- covariances


def _kgrid(config: LatticeConfig):
    ks = momenta(config.L, config.d)
    E = np.array([script_dispersion(config, k) for k in ks])
    return ks, E


def momentum_sum(config: LatticeConfig, freqs, symbol, times=None) -> np.ndarray:
    """delta_{sigma tau} / (beta L^d) sum_{omega, k} e^{i<x-y,k> + i(s-t)omega} S(omega, k)(rho, eta).

    ``symbol(w, k_index, E_k)`` returns the 2^d x 2^d matrix S.
    """
    d, L, beta = config.d, config.L, config.beta
    ks, E = _kgrid(config)
    from .lattice import Torus

    xs = Torus(d, L).coords
    times = np.arange(config.n_time) / config.h if times is None else np.asarray(times)
    w = omega(freqs, beta)
    S = np.array([[symbol(wi, j, E[j]) for j in range(len(ks))] for wi in w])  # (w, k, r, e)
    px = np.exp(1j * xs @ ks.T)  # (x, k)
    pt = np.exp(1j * np.outer(times, w))  # (s, w)
    nb, nx, nt = 2**d, len(xs), len(times)
    C = np.einsum("xk,yk,sw,tw,wkre->rxsey t".replace(" ", ""), px, px.conj(), pt, pt.conj(), S, optimize=True)
    C /= beta * L**d
    out = np.zeros((nb, nx, 2, nt, nb, nx, 2, nt), dtype=complex)
    for sp_ in (0, 1):
        out[:, :, sp_, :, :, :, sp_, :] = C
    n = nb * nx * 2 * nt
    return out.reshape(n, n)


def _inv(A):
    if np.linalg.cond(A) > 1e12:
        raise SingularDenominator("ill-conditioned denominator in a covariance symbol")
    return np.linalg.inv(A)


def _default_chi(config: LatticeConfig):
    """Cut-off used by the split covariances: chi(r) = phi(M_UV^{-2} r^2)."""
    mu = m_uv(config.d)
    return lambda r: gevrey_phi(r**2 / mu**2)


def covariance(kind: str, config: LatticeConfig, l: int | None = None, G=None, check_inverse: bool = True, slack: float = 1.0):
    """Dense covariance matrix over I_0.

    kind in {C, C<=0+, C>0+, C>0-, C<=0inf, C>0+h, J, Cl+, Cl-, IR}.
    """
    h, beta = config.h, config.beta
    nb = 2**config.d
    I = np.eye(nb)
    chi = _default_chi(config)
    Mh = matsubara(beta, h)

    def rho(w):
        return h * abs(1 - np.exp(1j * w / h))

    def plus(w, E):
        return _inv(I - np.exp(-1j * w / h) * _expm_h(E, h)) / h

    def minus(w, E):
        return _inv(np.exp(1j * w / h) * _expm_h(-E, h) - I) / h

    if kind == "C":
        return momentum_sum(config, Mh, lambda w, j, E: plus(w, E))
    if kind == "C<=0+":
        return momentum_sum(config, Mh, lambda w, j, E: chi(rho(w)) * plus(w, E))
    if kind == "C>0+":
        return momentum_sum(config, Mh, lambda w, j, E: (1 - chi(rho(w))) * plus(w, E))
    if kind == "C>0-":
        return momentum_sum(config, Mh, lambda w, j, E: (1 - chi(rho(w))) * minus(w, E))
    if kind == "C<=0inf":
        return momentum_sum(config, Mh, lambda w, j, E: chi(abs(w)) * _inv(1j * w * I - E))
    if kind == "C>0+h":
        return covariance("C>0+", config) + _identity_part(config, chi)
    if kind == "J":
        return np.eye(2 * nb * config.L**config.d * config.n_time)
    if kind in ("Cl+", "Cl-"):
        fam = cutoff_family("UV", config)
        f = plus if kind == "Cl+" else minus
        return momentum_sum(config, Mh, lambda w, j, E: fam.chi(l, w) * f(w, E))
    if kind == "IR":
        fam = cutoff_family("IR", config)
        if l is None or not fam.N_beta <= l <= 0:
            raise ScaleOutOfRange(f"IR scale {l} outside N_beta..0")
        ks = momenta(config.L, config.d)
        freqs = fam.frequencies()

        def sym(w, j, E):
            c = fam.chi(l, w, ks[j])
            if c == 0:
                return np.zeros((nb, nb), dtype=complex)
            Gm = np.zeros((nb, nb)) if G is None else G(w, ks[j])
            D = 1j * w * I - E - Gm
            if check_inverse:
                inverse_bound_check(D, fam, w, ks[j], config.M, slack)
            return c * _inv(D)

        return momentum_sum(config, freqs, sym)
    raise ValueError(f"unknown covariance kind {kind!r}")


def inverse_bound_check(D, fam: IRScales, w, k, M: float, slack: float = 1.0):
    """||D^{-1}|| <= slack * M^{-l'} for every l' with chi_{l'}(w, k) != 0."""
    inv_norm = 1 / np.linalg.svd(D, compute_uv=False)[-1]
    for lp in range(fam.N_beta, 1):
        if fam.chi(lp, w, k) != 0 and inv_norm > slack * M ** (-lp) * (1 + 1e-12):
            raise InverseBoundViolation(
                f"||(i w - E - G)^-1|| = {inv_norm:.4g} exceeds M^{-lp} at w={w:.4g}, k={np.round(k, 4)}"
            )


def _expm_h(E, h):
    w, v = np.linalg.eigh(E)
    return (v * np.exp(w / h)) @ v.conj().T


def _identity_part(config: LatticeConfig, chi) -> np.ndarray:
    """1_{same rho x sigma} (beta h)^{-1} sum_omega e^{i(s-t) omega} chi(h|1 - e^{i omega/h}|)."""
    beta, h = config.beta, config.h
    w = omega(matsubara(beta, h), beta)
    times = np.arange(config.n_time) / h
    c = chi(h * np.abs(1 - np.exp(1j * w / h)))
    T = np.exp(1j * np.subtract.outer(times, times)[..., None] * w) @ c / (beta * h)
    nmodes = 2 * 2**config.d * config.L**config.d
    return np.kron(np.eye(nmodes), T)


def ir_symbol_bound_report(config: LatticeConfig) -> dict:
    """Largest ratio ||(i w - E)^{-1}|| M^{l} over the support of chi_l on the grid."""
    fam = cutoff_family("IR", config)
    ks, E = _kgrid(config)
    I = np.eye(2**config.d)
    worst = 0.0
    for n in fam.frequencies():
        w = omega(n, config.beta)
        for j, k in enumerate(ks):
            inv_norm = 1 / np.linalg.svd(1j * w * I - E[j], compute_uv=False)[-1]
            for l in range(fam.N_beta, 1):
                if fam.chi(l, w, k) != 0:
                    worst = max(worst, inv_norm * config.M**l)
    return {"max_ratio": worst, "ok": worst <= 1 + 1e-12}


# ---------------------------------------------------------- diagnostics


def antisymmetric_extension(C: np.ndarray) -> np.ndarray:
    """C~((X,theta),(Y,xi)) = (1_{(1,-1)} C(X,Y) - 1_{(-1,1)} C(Y,X)) / 2, charge as the last axis."""
    n = C.shape[0]
    out = np.zeros((n, 2, n, 2), dtype=complex)
    out[:, 0, :, 1] = 0.5 * C  # charge index 0 is theta = +1
    out[:, 1, :, 0] = -0.5 * C.T
    return out.reshape(2 * n, 2 * n)


def empirical_gram(C: np.ndarray, n_max: int = 6, samples: int = 200, rng=None) -> float:
    """max |det(<p_i, q_j> C(X_i, Y_j))|^{1/n} over random unit vectors and indices."""
    rng = rng or np.random.default_rng(0)
    best = 0.0
    N = C.shape[0]
    for _ in range(samples):
        n = int(rng.integers(1, n_max + 1))
        m = int(rng.integers(1, 4))
        p = rng.normal(size=(n, m)) + 1j * rng.normal(size=(n, m))
        q = rng.normal(size=(n, m)) + 1j * rng.normal(size=(n, m))
        p /= np.linalg.norm(p, axis=1, keepdims=True)
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        X = rng.integers(0, N, size=n)
        Y = rng.integers(0, N, size=n)
        G = (p.conj() @ q.T) * C[np.ix_(X, Y)]
        best = max(best, abs(np.linalg.det(G)) ** (1 / n))
    return best


@dataclass
class CovarianceDiagnostics:
    c0: float
    norms: dict
    scaled: dict
    ok: bool
    anisothermal: float | None = None


def covariance_diagnostics(
    C: np.ndarray, config: LatticeConfig, l: int, kind: str = "UV", samples: int = 200, slack: float = 4.0, rng=None
) -> CovarianceDiagnostics:
    """Empirical Gram constant, decay norms of the antisymmetric extension and
    the scaling relation against the measured constant."""
    from .grassmann import IndexSet, kernel_norm

    c0 = max(1.0, empirical_gram(C, samples=samples, rng=rng))
    Ct = antisymmetric_extension(C)
    idx = IndexSet(config)
    lev = 0 if kind == "UV" else l - 1
    norms = {t: kernel_norm(Ct, idx, lev, t, config) for t in (0, 1)}
    if kind == "UV":
        scaled = {t: norms[t] * config.M**l for t in (0, 1)}
    else:
        scaled = {t: norms[t] * config.M ** (l + t * l) for t in (0, 1)}
    ok = all(v <= slack * c0 for v in scaled.values())
    return CovarianceDiagnostics(c0, norms, scaled, ok)


def anisothermal_difference(kind: str, config: LatticeConfig, l: int, beta1: int, beta2: int) -> float:
    """|C~(beta1) - C~(beta2)|_0 for a covariance kind evaluated at two integer temperatures."""
    from .grassmann import anisothermal_seminorm

    kernels = [antisymmetric_extension(covariance(kind, config.replace(beta=float(b)), l)) for b in (beta1, beta2)]
    return anisothermal_seminorm(kernels[0], kernels[1], config, beta1, beta2, 0)


# --------------------------------------------------------- self energy


def r_beta_prime(s, beta):
    s = np.asarray(s, dtype=float)
    return np.where(s < beta / 2, s, s - beta)


def s_L(x, L):
    x = np.asarray(x)
    return np.where(x < L / 2, x, x - L)


@dataclass
class SelfEnergyKernel:
    l: int
    W: list  # callables (w, k) -> 2^d x 2^d matrices for j = 0..l
    gate: bool
    fam: IRScales = field(repr=False)

    def E(self, w, k, upto: int | None = None):
        upto = self.l if upto is None else upto
        nb = 2**self.fam.d
        out = np.zeros((nb, nb), dtype=complex)
        if not self.gate:
            return out
        for i, j in enumerate(range(0, upto - 1, -1)):
            c = self.fam.chi_hat(j, w, k)
            if c != 0:
                out = out + c * self.W[i](w, k)
        return out


def effective_kernel(J2: np.ndarray, config: LatticeConfig):
    """W(w, k)(rho, eta) = (2/h) sum_{x, s} e^{-i<k, r_L'(x)> - i w r_beta'(s)} (-1)^{n_beta(r_beta'(s))}
    J2((rho, x, up, s, -1), (eta, 0, up, 0, +1)); returns a callable and its coefficient table."""
    from .grassmann import IndexSet
    from .lattice import Torus

    idx = IndexSet(config)
    d, L, beta, h = config.d, config.L, config.beta, config.h
    xs = Torus(d, L).coords
    nt = config.n_time
    s = np.arange(nt) / h
    rp = r_beta_prime(s, beta)
    sign = np.where(s < beta / 2, 1.0, -1.0)
    xr = s_L(xs, L)
    nb = 2**d
    coef = np.zeros((nb, nb, len(xs), nt), dtype=complex)
    for r in range(nb):
        for e in range(nb):
            col = idx.flat(e, 0, 0, 0, 0)
            for xi in range(len(xs)):
                rows = [idx.flat(r, xi, 0, si, 1) for si in range(nt)]
                coef[r, e, xi] = J2[rows, col] * sign

    def W(w, k):
        ph = np.exp(-1j * (xr @ np.asarray(k, dtype=float)))[:, None] * np.exp(-1j * w * rp)[None, :]
        return 2 / h * np.einsum("rexs,xs->re", coef, ph)

    return W, (coef, xr, rp)


def self_energy_chain(J2s, config: LatticeConfig) -> SelfEnergyKernel:
    """E_l = 1_{1/beta <= M_IR M^{N_beta + 1}} sum_{j=0}^{l} chi_hat_{<=j} W^j, with l = -(len(J2s) - 1)."""
    fam = cutoff_family("IR", config)
    l = -(len(J2s) - 1)
    if l < fam.N_beta:
        raise ScaleOutOfRange("too many scales for this temperature")
    Ws = [effective_kernel(J, config)[0] for J in J2s]
    gate = 1 / config.beta <= fam.M_IR * config.M ** (fam.N_beta + 1)
    return SelfEnergyKernel(l, Ws, bool(gate), fam)


def effective_kernel_bound(J2: np.ndarray, config: LatticeConfig, l: int, w, k, n_max: int = 6) -> tuple[float, float]:
    """Left side: prod_j sum_{n_j} (2/pi)^{n_j} w(l)^{n_j} / (2 n_j)! |d^n W(w, k)| summed over all
    multi-indices up to n_max, maximized over band pairs. Right side: 2 ||J2||_{l,0}."""
    from itertools import product

    from .grassmann import IndexSet, kernel_norm, weight_w

    _, (coef, xr, rp) = effective_kernel(J2, config)
    d, h = config.d, config.h
    wl = weight_w(l, config)
    ph = np.exp(-1j * (xr @ np.asarray(k, dtype=float)))[:, None] * np.exp(-1j * w * rp)[None, :]
    lhs = np.zeros(coef.shape[:2])
    coords = [rp[None, :] * np.ones((len(xr), 1))] + [xr[:, j][:, None] * np.ones((1, len(rp))) for j in range(d)]
    for ns in product(range(n_max + 1), repeat=d + 1):
        fac = np.ones_like(ph)
        weight = 1.0
        for p, n in enumerate(ns):
            fac = fac * (-1j * coords[p]) ** n
            weight *= (2 / np.pi) ** n * wl**n / factorial(2 * n)
        der = 2 / h * np.einsum("rexs,xs->re", coef, ph * fac)
        lhs += weight * np.abs(der)
    rhs = 2 * kernel_norm(J2, IndexSet(config), l, 0, config)
    return float(lhs.max()), float(rhs)


def support_count(config: LatticeConfig, l: int) -> float:
    """(1/(beta L^d)) #{(w, k) in M x Gamma(L)* : chi_hat_{<=l}(w, k) != 0}."""
    fam = cutoff_family("IR", config)
    ks = momenta(config.L, config.d)
    w = omega(fam.frequencies(), config.beta)
    W, K = np.meshgrid(w, np.arange(len(ks)), indexing="ij")
    c = fam.chi_hat(l, W, ks[K])
    return float(np.count_nonzero(c) / (config.beta * config.L**config.d))


def chi_derivative_probe(config: LatticeConfig, l: int, n_max: int = 3, samples: int = 50, rng=None) -> float:
    """Fitted c with |d^n chi_l / dk_j^n| <= (c w(l)^{-1})^n (n!)^2 for n <= n_max."""
    from .grassmann import weight_w
    from .hopping import finite_difference

    rng = rng or np.random.default_rng(0)
    fam = cutoff_family("IR", config)
    wl = weight_w(l, config)
    c = 0.0
    freqs = omega(fam.frequencies(), config.beta)
    for _ in range(samples):
        w = rng.choice(freqs)
        k = rng.uniform(0, 2 * np.pi, size=config.d)
        j = int(rng.integers(0, config.d))

        def f(x, k=k, j=j, w=w):
            kk = k.copy()
            kk[j] = x
            return fam.chi(l, w, kk)

        for n in range(1, n_max + 1):
            der = abs(finite_difference(f, k[j], n, step=1e-2))
            c = max(c, (der / factorial(n) ** 2) ** (1 / n) * wl)
    return c


def decay_extraction_bound(A, C: float, D: float) -> float:
    """4 C exp(-sum_j (A_j / ((d+1)^2 D))^{1/2}) for the d+1 entries of A."""
    A = np.asarray(A, dtype=float)
    return 4 * C * np.exp(-np.sum(np.sqrt(A / (len(A) ** 2 * D))))
