"""Finite Grassmann algebra, Gaussian integration and kernel norms.

Generators are indexed by the flat position in I = bands x Gamma(L) x spins x
times x charges, flattened as ``(((band * L^d + x) * 2 + spin) * n_t + s) * 2 + q``
with q = 0 for psi-bar (charge +1) and q = 1 for psi (charge -1).  A
polynomial stores coefficients on bitmasks; the monomial of a mask is the
product of its generators in ascending order.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import factorial

import numpy as np

from .errors import BranchCut, DegreeOverflow, NonPositiveRealPart, Unsupported
from .lattice import LatticeConfig, Torus

# ------------------------------------------------------------ index set


class IndexSet:
    """The finite index set I for a lattice configuration."""

    def __init__(self, config: LatticeConfig):
        self.config = config
        self.d, self.L, self.h = config.d, config.L, config.h
        self.nb = 2**config.d
        self.nx = config.L**config.d
        self.nt = config.n_time
        self.shape = (self.nb, self.nx, 2, self.nt, 2)
        self.size = int(np.prod(self.shape))
        self.band, self.site, self.spin, self.time, self.charge = np.unravel_index(np.arange(self.size), self.shape)
        self.coords = Torus(config.d, config.L).coords

    @property
    def size0(self) -> int:
        return self.size // 2

    def flat(self, rho, x, sigma, s, q):
        return (((rho * self.nx + x) * 2 + sigma) * self.nt + s) * 2 + q

    def flat0(self, rho, x, sigma, s):
        return ((rho * self.nx + x) * 2 + sigma) * self.nt + s

    def from_mode(self, mode, s, q):
        """Generator of the multi-band mode 2 * (band * L^d + x) + spin at time s."""
        return (mode * self.nt + s) * 2 + q

    def distances(self) -> np.ndarray:
        """d_j(X, Y) for j = 0..d as an array of shape (d+1, |I|, |I|)."""
        beta, h = self.config.beta, self.h
        t = self.time / h
        ph = np.exp(2j * np.pi * t / beta)
        out = [beta / (2 * np.pi) * np.abs(ph[:, None] - ph[None, :])]
        sd = spatial_distances(self.coords, self.coords, self.L)
        out.extend(sd[j][np.ix_(self.site, self.site)] for j in range(self.d))
        return np.array(out)


def spatial_distances(xs, ys, L: int) -> np.ndarray:
    """(L/2pi)|e^{2pi i x_j/L} - e^{2pi i y_j/L}| with shape (d, len(xs), len(ys))."""
    xs, ys = np.atleast_2d(xs), np.atleast_2d(ys)
    px = np.exp(2j * np.pi * xs / L)
    py = np.exp(2j * np.pi * ys / L)
    return L / (2 * np.pi) * np.abs(px.T[:, :, None] - py.T[:, None, :])


def weight_w(l: int, config: LatticeConfig) -> float:
    """w(l) = c_w (d+1)^{-2} M^{-2} M^l."""
    return config.c_w * (config.d + 1) ** -2 * config.M ** (l - 2)


def _decay_weight(dist: np.ndarray, w: float) -> np.ndarray:
    return np.exp(np.sum(np.sqrt(w * dist), axis=0))


# ------------------------------------------------------------ bit tools


def _bits(mask: int) -> list:
    out = []
    while mask:
        low = mask & -mask
        out.append(low.bit_length() - 1)
        mask ^= low
    return out


def merge_sign(a: int, b: int) -> int:
    """Sign of sorting the concatenation (generators of a, generators of b)."""
    n = 0
    for j in _bits(b):
        n += (a >> (j + 1)).bit_count()
    return -1 if n & 1 else 1


def sort_sign(seq) -> tuple[int, int]:
    """(sign, mask) of the product of generators in ``seq``; sign 0 if repeated."""
    seq = [int(g) for g in seq]
    if len(set(seq)) != len(seq):
        return 0, 0
    inv = sum(1 for i in range(len(seq)) for j in range(i + 1, len(seq)) if seq[i] > seq[j])
    mask = 0
    for g in seq:
        mask |= 1 << g
    return (-1 if inv & 1 else 1), mask


# ------------------------------------------------------------ polynomials


class GrassmannPolynomial:
    """Sparse polynomial over ``n`` generators with a degree cap.

    Products drop monomials above the cap, which makes the cap a truncation
    order; a cap equal to ``n`` keeps everything.
    """

    __slots__ = ("n", "cap", "terms")

    def __init__(self, n: int, terms: dict | None = None, cap: int | None = None):
        self.n = n
        self.cap = n if cap is None else cap
        if self.cap > n:
            raise DegreeOverflow(f"degree cap {self.cap} exceeds the {n} generators")
        self.terms = {}
        for m, c in (terms or {}).items():
            if m.bit_count() > self.cap:
                raise DegreeOverflow(f"monomial of degree {m.bit_count()} above cap {self.cap}")
            if c != 0:
                self.terms[m] = complex(c)

    @classmethod
    def scalar(cls, n: int, c, cap: int | None = None) -> "GrassmannPolynomial":
        return cls(n, {0: c}, cap)

    @classmethod
    def monomial(cls, n: int, seq, c=1.0, cap: int | None = None) -> "GrassmannPolynomial":
        s, mask = sort_sign(seq)
        return cls(n, {mask: s * c} if s else {}, cap)

    @property
    def constant(self) -> complex:
        return self.terms.get(0, 0j)

    @property
    def degree(self) -> int:
        return max((m.bit_count() for m in self.terms), default=0)

    def part(self, m: int) -> "GrassmannPolynomial":
        return GrassmannPolynomial(self.n, {k: c for k, c in self.terms.items() if k.bit_count() == m}, self.cap)

    def _new(self, terms) -> "GrassmannPolynomial":
        p = GrassmannPolynomial(self.n, cap=self.cap)
        p.terms = {k: v for k, v in terms.items() if v != 0}
        return p

    def __add__(self, other):
        if not isinstance(other, GrassmannPolynomial):
            other = GrassmannPolynomial.scalar(self.n, other, self.cap)
        out = dict(self.terms)
        for k, v in other.terms.items():
            out[k] = out.get(k, 0) + v
        return self._new(out)

    __radd__ = __add__

    def __neg__(self):
        return self._new({k: -v for k, v in self.terms.items()})

    def __sub__(self, other):
        return self + (-other)

    def scale(self, c) -> "GrassmannPolynomial":
        return self._new({k: c * v for k, v in self.terms.items()})

    def __mul__(self, other):
        if not isinstance(other, GrassmannPolynomial):
            return self.scale(other)
        out: dict = {}
        cap = self.cap
        for ma, ca in self.terms.items():
            da = ma.bit_count()
            for mb, cb in other.terms.items():
                if ma & mb or da + mb.bit_count() > cap:
                    continue
                k = ma | mb
                out[k] = out.get(k, 0) + merge_sign(ma, mb) * ca * cb
        return self._new(out)

    def __rmul__(self, c):
        return self.scale(c)

    def allclose(self, other, tol: float = 1e-10) -> bool:
        keys = set(self.terms) | set(other.terms)
        return all(abs(self.terms.get(k, 0) - other.terms.get(k, 0)) <= tol for k in keys)

    def l1(self, m: int) -> float:
        """(1/h)^m sum_X |f_m(X)| for the degree-m part, which is the sum of |coefficients|."""
        return float(sum(abs(c) for k, c in self.terms.items() if k.bit_count() == m))

    def __repr__(self):
        return f"GrassmannPolynomial(n={self.n}, terms={len(self.terms)}, cap={self.cap})"


def exp_poly(p: GrassmannPolynomial) -> GrassmannPolynomial:
    """e^p = e^{p0} sum_k q^k / k! with q = p - p0 nilpotent."""
    p0 = p.constant
    q = p - p0
    out = GrassmannPolynomial.scalar(p.n, 1.0, p.cap)
    term = out
    k = 0
    while True:
        k += 1
        term = (term * q).scale(1 / k)
        if not term.terms:
            break
        out = out + term
    return out.scale(np.exp(p0))


def log_poly(p: GrassmannPolynomial) -> GrassmannPolynomial:
    """Principal log p0 + sum_n (-1)^{n-1}/n ((p - p0)/p0)^n."""
    p0 = p.constant
    if p0.imag == 0 and p0.real <= 0:
        raise BranchCut(f"constant term {p0} lies on the branch cut")
    q = (p - p0).scale(1 / p0)
    out = GrassmannPolynomial.scalar(p.n, np.log(p0), p.cap)
    term = GrassmannPolynomial.scalar(p.n, 1.0, p.cap)
    k = 0
    while True:
        k += 1
        term = term * q
        if not term.terms:
            break
        out = out + term.scale((-1) ** (k - 1) / k)
    return out


# ------------------------------------------------------------ Wick integration


def _wick_layout(mask: int):
    """(sign, bars, psis): the monomial equals sign * psibar_{X1..Xn} psi_{Yn..Y1}."""
    gens = _bits(mask)
    bars = [g for g in gens if g % 2 == 0]
    psis = [g for g in gens if g % 2 == 1]
    if len(bars) != len(psis):
        return 0, bars, psis
    target = bars + psis[::-1]
    pos = {g: i for i, g in enumerate(target)}
    perm = [pos[g] for g in gens]
    inv = sum(1 for i in range(len(perm)) for j in range(i + 1, len(perm)) if perm[i] > perm[j])
    return (-1 if inv & 1 else 1), [b // 2 for b in bars], [y // 2 for y in psis]


def wick(mask: int, C: np.ndarray) -> complex:
    """Gaussian integral of a single monomial: sign * det(C(X_i, Y_j))."""
    if mask == 0:
        return 1.0 + 0j
    s, X, Y = _wick_layout(mask)
    if s == 0:
        return 0j
    return s * complex(np.linalg.det(C[np.ix_(X, Y)]))


def wick_pairing(seq, C: np.ndarray) -> complex:
    """Brute-force sum over complete pairings of a generator sequence, with signs.

    <psibar_X psi_Y> = C(X, Y) and <psi_Y psibar_X> = -C(X, Y).
    """
    seq = list(seq)
    if not seq:
        return 1.0 + 0j
    if len(seq) % 2:
        return 0j
    a, rest = seq[0], seq[1:]
    total = 0j
    for i, b in enumerate(rest):
        if a % 2 == b % 2:
            continue
        val = C[a // 2, b // 2] if a % 2 == 0 else -C[b // 2, a // 2]
        if val == 0:
            continue
        total += (-1) ** i * val * wick_pairing(rest[:i] + rest[i + 1 :], C)
    return total


def integrate_masks(masks, C: np.ndarray) -> np.ndarray:
    """Wick values of many monomials, batching determinants by size."""
    masks = list(masks)
    out = np.zeros(len(masks), dtype=complex)
    groups: dict = {}
    for i, m in enumerate(masks):
        if m == 0:
            out[i] = 1.0
            continue
        s, X, Y = _wick_layout(m)
        if s == 0:
            continue
        groups.setdefault(len(X), []).append((i, s, X, Y))
    for n, items in groups.items():
        idx = np.array([it[0] for it in items])
        sg = np.array([it[1] for it in items], dtype=float)
        X = np.array([it[2] for it in items])
        Y = np.array([it[3] for it in items])
        sub = C[X[:, :, None], Y[:, None, :]]
        out[idx] = sg * np.linalg.det(sub)
    return out


def integrate(p: GrassmannPolynomial, C: np.ndarray) -> complex:
    """Full Gaussian integral of p with covariance C (over I_0 x I_0)."""
    if not p.terms:
        return 0j
    keys = list(p.terms)
    vals = integrate_masks(keys, C)
    return complex(np.dot([p.terms[k] for k in keys], vals))


def gaussian_integral(p: GrassmannPolynomial, C: np.ndarray) -> GrassmannPolynomial:
    """int p(psi + psi^1) dmu_C(psi^1) as a polynomial in psi."""
    if p.degree > p.cap:
        raise DegreeOverflow("polynomial degree above its cap")
    acc: dict = {}
    for mask, c in p.terms.items():
        gens = _bits(mask)
        k = len(gens)
        for r in range(0, k + 1, 2):
            for S in itertools.combinations(range(k), r):
                Sset = set(S)
                # moving the integrated factors to the right of the kept ones
                inv = sum(1 for a in S for b in range(a + 1, k) if b not in Sset)
                smask = 0
                for a in S:
                    smask |= 1 << gens[a]
                val = wick(smask, C)
                if val == 0:
                    continue
                key = mask ^ smask
                acc[key] = acc.get(key, 0) + (-1) ** inv * c * val
    return p._new(acc)


# ------------------------------------------------------------ interaction polynomial


def interaction_terms(family, U, config: LatticeConfig, variant: str = "V"):
    """Yield (coefficient, bar modes, psi modes) for the multi-band kernels of V or V^-."""
    from .fock import multiband_relabel

    relabel = multiband_relabel(config)
    for m in sorted(family.Vm):
        sign = (-1) ** m if variant == "V-" else 1
        for key, v in family.kernel(m, U).items():
            X = [int(relabel[k]) for k in key[:m]]
            Y = [int(relabel[k]) for k in key[m:]]
            yield sign * v, X, Y


def build_interaction_poly(family, U, config: LatticeConfig, variant: str = "V", cap: int | None = None) -> GrassmannPolynomial:
    """V(psi) = sum_m (1/h) sum_s V_m(nu-relabelled) psibar_{X s} ... psi_{Y s}; V^+ = V and V^- adds (-1)^m."""
    if variant not in ("V", "V+", "V-"):
        raise ValueError(f"unknown variant {variant!r}")
    idx = IndexSet(config)
    n = idx.size
    cap = n if cap is None else cap
    if cap < 2 * max(family.Vm, default=0):
        raise DegreeOverflow("degree cap below 2 N_v")
    h = config.h
    acc: dict = {0: config.beta * family.v0(U)}
    terms = list(interaction_terms(family, U, config, variant))
    for s in range(idx.nt):
        for v, X, Y in terms:
            seq = [idx.from_mode(a, s, 0) for a in X] + [idx.from_mode(b, s, 1) for b in Y]
            sg, mask = sort_sign(seq)
            if sg:
                acc[mask] = acc.get(mask, 0) + sg * v / h
    return GrassmannPolynomial(n, acc, cap)


def interaction_bounds(family, U, config: LatticeConfig) -> dict:
    """||V_{2m}||_{L^1} against 2^{d+1} beta L^d U_max v_m(0), |V_0| against beta L^d U_max v_0."""
    from .freenergy import interaction_norms

    V = build_interaction_poly(family, U, config)
    rep = interaction_norms(family, [0.0], [config.L])
    umax = float(np.max(np.abs(U)))
    bL = config.beta * config.L**config.d
    out = {"V0": (abs(V.constant), bL * umax * rep.v0[config.L])}
    for m in sorted(family.Vm):
        out[f"V{2 * m}"] = (V.l1(2 * m), 2 ** (config.d + 1) * bL * umax * rep.vm[config.L][(m, 0.0)])
    return out


# ------------------------------------------------------------ transfer sweep


def _compound(B: np.ndarray, n: int) -> np.ndarray:
    """Coefficients of e^{-psibar B chi} in the basis psibar^(alpha) chi^(beta)."""
    out = np.zeros((1 << n, 1 << n), dtype=complex)
    out[0, 0] = 1.0
    for k in range(1, n + 1):
        subs = list(itertools.combinations(range(n), k))
        masks = np.array([sum(1 << i for i in S) for S in subs])
        S = np.array(subs)
        sub = B[S[:, None, :, None], S[None, :, None, :]]  # (a, b, k, k)
        dets = np.linalg.det(sub)
        out[np.ix_(masks, masks)] = (-1) ** k * (-1) ** (k * (k - 1) // 2) * dets
    return out


def _sign_tables(n: int):
    N = 1 << n
    ms = np.array([[merge_sign(a, b) for b in range(N)] for a in range(N)], dtype=float)
    pc = np.array([bin(a).count("1") for a in range(N)])
    return ms, pc


def _local_exp(poly_terms, n: int) -> np.ndarray:
    """Matrix e[gamma, delta] of the exponential of a slice polynomial over 2n local generators.

    Local generator j < n is psibar_j and n + j is psi_j, so a mask splits as gamma | delta << n.
    """
    p = GrassmannPolynomial(2 * n, poly_terms)
    E = exp_poly(-p)
    out = np.zeros((1 << n, 1 << n), dtype=complex)
    low = (1 << n) - 1
    for m, c in E.terms.items():
        out[m & low, m >> n] = c
    return out


def _slice_kernel(e: np.ndarray, A: np.ndarray, B: np.ndarray, n: int, tables) -> np.ndarray:
    """K[delta, beta] = int dpsibar e^{-V_s} e^{-psibar A psi} e^{-psibar B psi'}."""
    ms, pc = tables
    N = 1 << n
    full = N - 1
    DA, DB = _compound(A, n), _compound(B, n)
    masks = np.arange(N)
    g = np.zeros((N, N), dtype=complex)
    for gam, dl in zip(*np.nonzero(e)):
        rows = masks[(masks & gam) == 0]
        cols = masks[(masks & dl) == 0]
        rs = (-1.0) ** (pc[dl] * pc[rows]) * ms[gam, rows]
        cs = ms[dl, cols]
        g[np.ix_(gam | rows, dl | cols)] += e[gam, dl] * rs[:, None] * cs[None, :] * DA[np.ix_(rows, cols)]
    comp = full ^ masks
    w = (-1.0) ** (pc[None, :] * pc[comp][:, None]) * ms[masks, comp][:, None]  # indexed (gamma, delta)
    return (g * w).T @ DB[comp, :]


def transfer_log_z(A_blocks, B_blocks, slice_terms, n: int) -> complex:
    """log of the Berezin integral of prod_s e^{-V_s} e^{-psibar_s A_s psi_s - psibar_s B_s psi_{s-1}},
    up to a constant that depends only on n and the number of slices."""
    if n % 2:
        raise Unsupported("the sweep assumes an even number of modes per slice")
    tables = _sign_tables(n)
    ms = tables[0]
    N = 1 << n
    comp = (N - 1) ^ np.arange(N)
    J = np.zeros((N, N))
    J[np.arange(N), comp] = ms[np.arange(N), comp]
    logscale = 0j
    P = None
    for s in range(len(A_blocks)):
        K = _slice_kernel(_local_exp(slice_terms[s], n), A_blocks[s], B_blocks[s], n, tables)
        P = K if P is None else K @ (J @ P)
        nrm = np.abs(P).max()
        P /= nrm
        logscale += np.log(nrm)
    z = np.sum(P[np.arange(N), comp] * ms[np.arange(N), comp])
    return logscale + np.log(complex(z))


def _action_blocks(C: np.ndarray, n: int, nt: int, tol: float = 1e-8):
    """Time blocks of A = -(C^{-1})^T, reordered so the hop couples s to s-1."""
    A = -np.linalg.inv(C).T.reshape(n, nt, n, nt)
    scale = np.abs(A).max()
    reverse = False
    if nt > 2:
        fwd = max(np.abs(A[:, s, :, (s + 1) % nt]).max() for s in range(nt))
        bwd = max(np.abs(A[:, s, :, (s - 1) % nt]).max() for s in range(nt))
        reverse = fwd > bwd
    order = list(range(nt))[::-1] if reverse else list(range(nt))
    diag, hop = [], []
    for i, s in enumerate(order):
        prev = order[(i - 1) % nt]
        diag.append(A[:, s, :, s])
        hop.append(A[:, s, :, prev])
        for t in range(nt):
            if t not in (s, prev) and np.abs(A[:, s, :, t]).max() > tol * scale:
                raise Unsupported("covariance inverse is not nearest-neighbour in time")
    return diag, hop, order


def slice_polynomials(family, U, config: LatticeConfig, variant: str = "V") -> dict:
    """Local terms of V_s (without the constant) over 2n generators, identical for every s."""
    n = 2 * 2**config.d * config.L**config.d
    acc: dict = {}
    for v, X, Y in interaction_terms(family, U, config, variant):
        sg, mask = sort_sign(list(X) + [n + b for b in Y])
        if sg:
            acc[mask] = acc.get(mask, 0) + sg * v / config.h
    return acc


def log_partition_ratio(family, U, config: LatticeConfig, C: np.ndarray | None = None, variant: str = "V") -> complex:
    """log int e^{-V} dmu_C evaluated exactly by a sweep over time slices."""
    from .scales import covariance

    C = covariance("C", config) if C is None else C
    nt = config.n_time
    n = C.shape[0] // nt
    diag, hop, _ = _action_blocks(C, n, nt)
    terms = slice_polynomials(family, U, config, variant)
    z_v = transfer_log_z(diag, hop, [terms] * nt, n)
    z_0 = transfer_log_z(diag, hop, [{}] * nt, n)
    diff = z_v - z_0
    diff = complex(diff.real, np.angle(np.exp(1j * diff.imag)))  # principal branch
    return diff - config.beta * family.v0(U)


@dataclass
class PartitionRow:
    h: int
    grassmann: complex
    trace: float
    discrepancy: float


def partition_ratio_vs_trace(config: LatticeConfig, family, U, hs) -> list:
    """|log int e^{-V} dmu_C - log(Tr e^{-beta H} / Tr e^{-beta H0})| for each h."""
    from .fock import build_hamiltonian, diagonalize

    H, H0, fs = build_hamiltonian(config, family, U, form="multi-band")
    beta = config.beta
    ref = diagonalize(H, fs).log_z(beta) - diagonalize(H0, fs).log_z(beta)
    rows = []
    for h in hs:
        cfg = config.replace(h=h)
        lz = log_partition_ratio(family, U, cfg)
        if np.exp(lz).real <= 0:
            raise NonPositiveRealPart(f"Re int e^(-V) dmu_C <= 0 at h={h}")
        rows.append(PartitionRow(h, complex(lz), float(ref), float(abs(lz - ref))))
    return rows


# ------------------------------------------------------------ perturbation coefficients


def _moments(V: GrassmannPolynomial, C: np.ndarray, n: int) -> list:
    out = [1.0 + 0j]
    P = GrassmannPolynomial.scalar(V.n, 1.0, V.cap)
    for _ in range(n):
        P = P * V
        out.append(integrate(P, C))
    return out


def _cumulants(mu: list) -> list:
    k = [0j] * len(mu)
    for n in range(1, len(mu)):
        k[n] = mu[n] - sum(
            factorial(n - 1) / (factorial(j - 1) * factorial(n - j)) * k[j] * mu[n - j] for j in range(1, n)
        )
    return k


def _tree_second_order(V: GrassmannPolynomial, C: np.ndarray, nodes: int = 16) -> complex:
    """int_0^1 ds int (Delta_12 + Delta_21) V(psi^1) V(psi^2) dmu_{C(s)} with
    C(s) = [[C, sC], [sC, C]] on two copies of the generators."""
    n = V.n
    n0 = C.shape[0]
    shift = n  # copy 2 generators are offset by n
    acc: dict = {}
    items = [(m, c, _bits(m)) for m, c in V.terms.items() if m]
    for ma, ca, ga in items:
        for mb, cb, gb in items:
            joint = ma | (mb << shift)
            base = ca * cb
            # Delta_12: C(X, Y) d/dpsi2_Y d/dpsibar1_X; Delta_21 with the copies exchanged
            for src, dst, gs, gd, offs, offd in ((ma, mb, ga, gb, 0, shift), (mb, ma, gb, ga, shift, 0)):
                for X in gs:
                    if X % 2:
                        continue
                    for Y in gd:
                        if not Y % 2:
                            continue
                        c = C[X // 2, Y // 2]
                        if c == 0:
                            continue
                        gx, gy = X + offs, Y + offd
                        s1 = (joint & ((1 << gx) - 1)).bit_count()
                        rem = joint ^ (1 << gx)
                        s2 = (rem & ((1 << gy) - 1)).bit_count()
                        rem ^= 1 << gy
                        acc[rem] = acc.get(rem, 0) + (-1) ** (s1 + s2) * base * c
    keys = list(acc)
    coef = np.array([acc[k] for k in keys])
    # two copies: generator g of copy 2 is g + n, i.e. I_0 index g // 2 + n0
    remap = []
    for k in keys:
        low = k & ((1 << shift) - 1)
        high = k >> shift
        m = 0
        for g in _bits(low):
            m |= 1 << g
        for g in _bits(high):
            m |= 1 << (g + 2 * n0)
        remap.append(m)
    xs, ws = np.polynomial.legendre.leggauss(nodes)
    total = 0j
    for x, w in zip(xs, ws):
        s = 0.5 * (x + 1)
        Cs = np.block([[C, s * C], [s * C, C]])
        total += 0.5 * w * np.dot(coef, integrate_masks(remap, Cs))
    return total


def perturb_coeff(n: int, config: LatticeConfig, family, U, method: str = "wick-direct", C: np.ndarray | None = None) -> complex:
    """a_n(L, h) = -(1/(beta L^d n!)) d^n/dz^n log int e^{-z V} dmu_C at z = 0."""
    from .scales import covariance

    if n > 3:
        raise Unsupported("perturbation coefficients are implemented for n <= 3")
    if n == 0:
        return 0j
    C = covariance("C", config) if C is None else C
    V = build_interaction_poly(family, U, config)
    bL = config.beta * config.L**config.d
    if method == "wick-direct":
        k = _cumulants(_moments(V, C, n))
        # log int e^{-zV} = sum_n (-z)^n k_n / n!
        return complex(-((-1) ** n) * k[n] / (bL * factorial(n)))
    if method == "tree-formula":
        if n == 1:
            return complex(integrate(V, C) / bL)
        if n != 2:
            raise Unsupported("the tree route is implemented for n = 2")
        return complex(-_tree_second_order(V, C) / (2 * bL))
    raise ValueError(f"unknown method {method!r}")


def ed_perturb_coeff(n: int, config: LatticeConfig, family, U, delta: float = 1e-3) -> float:
    """n-th Taylor coefficient in z of -(1/(beta L^d)) log Tr e^{-beta(H0 + zV)} by a quartic fit on
    z in {0, +-delta, +-2 delta}."""
    from .fock import build_hamiltonian, diagonalize

    H, H0, fs = build_hamiltonian(config, family, U, form="multi-band")
    V = H - H0
    bL = config.beta * config.L**config.d
    zs = np.array([-2, -1, 0, 1, 2]) * delta
    vals = [-diagonalize(H0 + z * V, fs).log_z(config.beta) / bL for z in zs]
    coef = np.polyfit(zs, vals, 4)[::-1]
    return float(coef[n])


def richardson(hs, values, powers=None) -> complex:
    """Extrapolate values(h) to h -> infinity assuming values = a + sum_k c_k h^{-p_k}.

    ``powers`` defaults to 1, 2, 3, ...; coefficients whose error is even in
    1/h (the on-site interaction) are better served by (2, 4, 6, ...).
    """
    x = 1 / np.asarray(hs, dtype=float)
    y = np.asarray(values, dtype=complex)
    k = len(x)
    powers = list(range(1, k)) if powers is None else list(powers)[: k - 1]
    A = np.column_stack([np.ones(k)] + [x**p for p in powers])
    sol = np.linalg.lstsq(A, y, rcond=None)[0]
    return complex(sol[0])


def convergence_order(hs, values) -> float:
    """Observed order from the last two successive differences of a doubling sequence."""
    v = np.asarray(values, dtype=complex)
    return float(np.log2(abs(v[-3] - v[-2]) / abs(v[-2] - v[-1])))


# ------------------------------------------------------------ kernel norms


def kernel_norm(f: np.ndarray, idx: IndexSet, l: int, t: int, config: LatticeConfig) -> float:
    """||f||_{l,t} for a dense antisymmetric kernel on I^2."""
    dist = idx.distances()
    W = _decay_weight(dist, weight_w(l, config)) * np.abs(f)
    if t == 0:
        return float(W.sum(axis=1).max() / idx.h)
    return float(max((dist[j] * W).sum(axis=1).max() for j in range(idx.d + 1)) / idx.h)


def poly_kernel_norm(p: GrassmannPolynomial, m: int, idx: IndexSet, l: int, t: int, config: LatticeConfig) -> float:
    """||f_m||_{l,t} where f_m is the antisymmetric kernel of the degree-m part of p.

    A canonical coefficient c corresponds to kernel entries c h^m / m! on each permutation.
    """
    if m < 2:
        raise ValueError("the norms need m >= 2")
    dist = idx.distances()
    E = _decay_weight(dist, weight_w(l, config))
    h = idx.h
    acc0 = np.zeros(idx.size)
    acc1 = np.zeros((idx.d + 1, 2, idx.size))
    for mask, c in p.terms.items():
        if mask.bit_count() != m:
            continue
        g = _bits(mask)
        pref = h * abs(c) / (m * (m - 1))
        for a in g:
            rest = [b for b in g if b != a]
            e = E[a, rest]
            acc0[a] += pref * e.sum()
            if t:
                for j in range(idx.d + 1):
                    dj = dist[j, a, rest]
                    acc1[j, 0, a] += pref * np.sum(dj * e)
                    if m >= 3:
                        # q >= 2: Y_q ranges over the elements other than Y_1
                        acc1[j, 1, a] += pref / (m - 2) * (e.sum() * dj.sum() - np.sum(dj * e))
    if t == 0:
        return float(acc0.max(initial=0.0))
    return float(acc1.max(initial=0.0))


def anisothermal_seminorm(f1: np.ndarray, f2: np.ndarray, config: LatticeConfig, beta1: int, beta2: int, l: int) -> float:
    """|f(beta1) - f(beta2)|_l for dense kernels on I(beta1)^2 and I(beta2)^2.

    Sup over X in I^0 (time 0) of (1/h) sum over Y in I-hat with times in [-beta1/4, beta1/4)_h of
    e^{sum_j ((1/pi) w(l) d-hat_j(X, Y))^{1/2}} |f1(X, R_beta1(Y)) - f2(X, R_beta2(Y))|.
    """
    if not (float(beta1).is_integer() and float(beta2).is_integer() and beta1 <= beta2):
        raise ValueError("need integer beta1 <= beta2")
    h = config.h
    if h % 4:
        raise ValueError("h must be a multiple of 4")
    nb, nx = 2**config.d, config.L**config.d
    ys = np.arange(-int(beta1 * h) // 4, int(beta1 * h) // 4)
    picked = []
    for b, f in ((beta1, f1), (beta2, f2)):
        nt = int(round(b * h))
        F = f.reshape(nb * nx * 2, nt, 2, nb * nx * 2, nt, 2)
        picked.append(F[:, 0][:, :, :, ys % nt])  # (A, q, B, y, q')
    diff = np.abs(picked[0] - picked[1])
    w = weight_w(l, config) / np.pi
    xs = Torus(config.d, config.L).coords
    space = np.sum(np.sqrt(w * spatial_distances(xs, xs, config.L)), axis=0)
    tpart = np.sqrt(w * np.abs(ys) / h)
    site = (np.arange(nb * nx * 2) // 2) % nx
    weight = np.exp(space[site][:, site][:, None, :, None, None] + tpart[None, None, None, :, None])
    return float((weight * diff).sum(axis=(2, 3, 4)).max() / h)


def temperature_shift_residual(Ct: np.ndarray, config: LatticeConfig, shift: int) -> float:
    """max |f(X) - (-1)^{N_beta(X + s)} f(R_beta(X + s))| for a kernel on I^2 and a time shift s (in units 1/h)."""
    idx = IndexSet(config)
    nt = idx.nt
    t = idx.time + shift
    wraps = t // nt
    moved = idx.flat(idx.band, idx.site, idx.spin, t % nt, idx.charge)
    sign = (-1.0) ** (wraps[:, None] + wraps[None, :])
    return float(np.abs(Ct - sign * Ct[np.ix_(moved, moved)]).max())


# ------------------------------------------------------------ interaction-bound suite


def gram_constant(C: np.ndarray) -> float:
    """A rigorous Gram constant from C = U S V^*: rows of U sqrt(S) and V sqrt(S) bound every determinant."""
    Uu, S, Vh = np.linalg.svd(C)
    a = np.linalg.norm(Uu * np.sqrt(S), axis=1).max()
    b = np.linalg.norm(Vh.conj().T * np.sqrt(S), axis=1).max()
    return float(a * b)


def g_alpha(alpha: float, config: LatticeConfig, v0: float, vm: dict, c1: float) -> float:
    """beta L^d v_0 + 2^{d+1} beta L^d sum_m (alpha + 1)^{2m} c_1^m v_m(0)."""
    bL = config.beta * config.L**config.d
    return bL * v0 + 2 ** (config.d + 1) * bL * sum((alpha + 1) ** (2 * m) * c1**m * v for m, v in vm.items())


def s_polynomial(V: GrassmannPolynomial, C: np.ndarray) -> GrassmannPolynomial:
    """S(psi) = int e^{-V(psi + psi^1)} dmu_C(psi^1)."""
    return gaussian_integral(exp_poly(-V), C)


def restrict_family(family, sites):
    """Copy of a kernel family keeping only entries supported on the given fine sites."""
    from .fock import InteractionKernelFamily

    keep = set(int(s) for s in sites)
    Vm = {m: [{k: v for k, v in ker.items() if all(a // 2 in keep for a in k)} for ker in kers] for m, kers in family.Vm.items()}
    nsites = (2 * family.L) ** family.d
    V0 = np.asarray(family.V0, dtype=float) * len(keep) / nsites
    return InteractionKernelFamily(family.d, family.L, list(family.channels), V0, Vm, f"{family.tag} on {sorted(keep)}", family.N_v)


@dataclass
class BoundRecord:
    delta: str
    alpha: float
    lhs: float
    rhs: float

    @property
    def ok(self) -> bool:
        return self.lhs <= self.rhs * (1 + 1e-12)


def interaction_bound_suite(config: LatticeConfig, family, U, alphas=(1.0, 2.0), norm_family=None) -> tuple[list, float]:
    """Check |S_0 - e^{-V_0}| <= e^{U g(0)} - e^{U beta L^d v_0} and
    sum_m alpha^m c_1^{m/2} ||S_m||_{L^1} <= e^{U g(alpha)} for S^+, S^-, S^0.

    ``norm_family`` supplies v_0, v_m(0) (defaults to ``family``); c_1 is the Gram constant
    measured on the three covariances.
    """
    from .freenergy import interaction_norms
    from .scales import covariance

    covs = {"+": covariance("C>0+", config), "-": covariance("C>0-", config), "0": covariance("C>0+h", config)}
    c1 = max(gram_constant(C) for C in covs.values())
    rep = interaction_norms(norm_family or family, [0.0], [config.L])
    v0 = rep.v0_sup
    vm = {m: rep.sup(m, 0.0) for m in range(1, family.N_v + 1)}
    umax = float(np.max(np.abs(U)))
    bL = config.beta * config.L**config.d
    records = []
    # e^{U g} may overflow to inf for large couplings; the bound then holds trivially
    with np.errstate(over="ignore"):
        return _bound_records(covs, family, U, config, umax, bL, v0, vm, c1, alphas), c1


def _bound_records(covs, family, U, config, umax, bL, v0, vm, c1, alphas) -> list:
    records = []
    for delta, C in covs.items():
        V = build_interaction_poly(family, U, config, "V-" if delta == "-" else "V")
        S = s_polynomial(V, C)
        lhs0 = abs(S.constant - np.exp(-V.constant))
        rhs0 = np.exp(umax * g_alpha(0.0, config, v0, vm, c1)) - np.exp(umax * bL * v0)
        records.append(BoundRecord(delta, 0.0, float(lhs0), float(rhs0)))
        for a in alphas:
            lhs = sum(a**m * c1 ** (m / 2) * S.l1(m) for m in range(S.degree + 1))
            records.append(BoundRecord(delta, float(a), float(lhs), float(np.exp(umax * g_alpha(a, config, v0, vm, c1)))))
    return records
