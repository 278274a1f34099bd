"""Periodic hyper-cubic lattice geometry, band/site bijections and bond phases.

Sites of the torus ``{0..n-1}^d`` are indexed lexicographically with the
first coordinate running fastest: ``index = sum_j x_j n^j``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import AntisymmetryViolation, DimensionMismatch, FluxMismatch

ANGLE_TOL = 1e-9


def canonical_angle(a):
    """Map angles to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    r = np.mod(a + np.pi, 2 * np.pi) - np.pi
    # mod puts +pi at -pi; push it back to the closed end
    r = np.where(np.isclose(r, -np.pi, atol=ANGLE_TOL, rtol=0), np.pi, r)
    return r if r.ndim else float(r)


def angles_equal(a, b, tol=ANGLE_TOL) -> bool:
    d = np.abs(np.angle(np.exp(1j * (np.asarray(a) - np.asarray(b)))))
    return bool(np.all(d <= tol))


def pair_index(j: int, k: int) -> int:
    """Position of the pair (j, k), 0-based j < k, in the order 12, 13, 23, 14, ..."""
    if not 0 <= j < k:
        raise ValueError("need 0 <= j < k")
    return k * (k - 1) // 2 + j


def flux_margin(theta, d: int) -> float:
    """Half the largest row sum of |1 + e^{i theta_{j,m}}| over the axes m."""
    theta = np.asarray(theta, dtype=float)
    if d < 2:
        return 0.0
    best = 0.0
    for m in range(d):
        s = 0.0
        for j in range(d):
            if j == m:
                continue
            a, b = min(j, m), max(j, m)
            s += abs(1 + np.exp(1j * theta[pair_index(a, b)]))
        best = max(best, s)
    return 0.5 * best


@dataclass(frozen=True)
class LatticeConfig:
    d: int = 2
    L: int = 1
    t: tuple = (1.0, 1.0)
    theta: tuple = (np.pi,)
    eps: tuple = (0, 0)
    beta: float = 1.0
    h: float = 4.0
    M: float = 2.0
    alpha: float = 1.0
    c_w: float = 1.0
    c_chi: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "t", tuple(float(v) for v in self.t))
        object.__setattr__(self, "theta", tuple(float(v) for v in self.theta))
        object.__setattr__(self, "eps", tuple(int(v) for v in self.eps))
        if self.d < 1 or self.L < 1:
            raise ValueError("d and L must be positive")
        if len(self.t) != self.d or len(self.eps) != self.d:
            raise DimensionMismatch(f"t and eps need length d={self.d}")
        if len(self.theta) != self.d * (self.d - 1) // 2:
            raise DimensionMismatch(f"theta needs length {self.d * (self.d - 1) // 2}")
        if any(v <= 0 for v in self.t):
            raise ValueError("hopping amplitudes must be positive")
        if any(e not in (0, 1) for e in self.eps):
            raise ValueError("eps entries must be 0 or 1")
        if self.L == 1 and any(self.eps):
            raise ValueError("circle fluxes must vanish at L=1")
        if self.beta <= 0 or self.h <= 0:
            raise ValueError("beta and h must be positive")

    @classmethod
    def default(cls, d: int = 2, L: int = 1, **kw) -> "LatticeConfig":
        kw.setdefault("t", (1.0,) * d)
        kw.setdefault("theta", (np.pi,) * (d * (d - 1) // 2))
        kw.setdefault("eps", (int(L % 2 == 0),) * d)
        return cls(d=d, L=L, **kw)

    def replace(self, **kw) -> "LatticeConfig":
        return dataclasses.replace(self, **kw)

    @property
    def size(self) -> int:
        return 2 * self.L

    @property
    def n_bands(self) -> int:
        return 2**self.d

    @property
    def n_time(self) -> int:
        n = self.beta * self.h
        if abs(n - round(n)) > 1e-9 or round(n) % 2:
            raise ValueError("beta*h must be an even integer")
        return int(round(n))

    def theta_jk(self, j: int, k: int) -> float:
        return self.theta[pair_index(j, k)]

    @property
    def margin(self) -> float:
        return flux_margin(self.theta, self.d)


class Torus:
    """The periodic lattice {0..n-1}^d."""

    def __init__(self, d: int, n: int):
        self.d, self.n = d, n
        self.nsites = n**d
        idx = np.arange(self.nsites)
        self.coords = np.stack([(idx // n**j) % n for j in range(d)], axis=1)
        self._weights = n ** np.arange(d)

    def index(self, x) -> np.ndarray | int:
        x = np.mod(np.asarray(x), self.n)
        return x @ self._weights

    @cached_property
    def forward(self) -> np.ndarray:
        """forward[j, y] = index of y + e_j."""
        out = np.empty((self.d, self.nsites), dtype=int)
        for j in range(self.d):
            c = self.coords.copy()
            c[:, j] += 1
            out[j] = self.index(c)
        return out

    @cached_property
    def backward(self) -> np.ndarray:
        out = np.empty((self.d, self.nsites), dtype=int)
        for j in range(self.d):
            c = self.coords.copy()
            c[:, j] -= 1
            out[j] = self.index(c)
        return out

    def bond_axis(self, x: int, y: int):
        """Return (j, +1) if x - y = e_j, (j, -1) if x - y = -e_j, else None."""
        for j in range(self.d):
            if self.forward[j, y] == x:
                return j, 1
        for j in range(self.d):
            if self.backward[j, y] == x:
                return j, -1
        return None

    def neighbours(self, x: int) -> set[int]:
        return set(self.forward[:, x]) | set(self.backward[:, x])


@dataclass(frozen=True)
class IndexMaps:
    d: int
    L: int
    b: np.ndarray = field(repr=False)
    coarse: Torus = field(repr=False)
    fine: Torus = field(repr=False)

    def nu(self, rho: int, x) -> np.ndarray:
        """Fine-lattice point 2x + b(rho); bands are numbered from 1."""
        return 2 * np.asarray(x) + self.b[rho - 1]

    def nu_inv(self, y):
        y = np.mod(np.asarray(y), 2 * self.L)
        bits = y % 2
        rho = int(bits @ (2 ** np.arange(self.d))) + 1
        return rho, (y - bits) // 2

    @cached_property
    def nu_table(self) -> np.ndarray:
        """nu_table[rho-1, x_index] = fine site index of nu(rho, x)."""
        out = np.empty((2**self.d, self.coarse.nsites), dtype=int)
        for r in range(2**self.d):
            out[r] = self.fine.index(2 * self.coarse.coords + self.b[r])
        return out


def band_bits(d: int) -> np.ndarray:
    """b[rho-1] = binary digits of rho-1, least significant first."""
    r = np.arange(2**d)
    return np.stack([(r >> j) & 1 for j in range(d)], axis=1)


def index_maps(config: LatticeConfig) -> IndexMaps:
    return IndexMaps(
        d=config.d,
        L=config.L,
        b=band_bits(config.d),
        coarse=Torus(config.d, config.L),
        fine=Torus(config.d, 2 * config.L),
    )


class BondPhase:
    """Phase on ordered nearest-neighbour pairs of the torus Gamma(2L).

    Only positive bonds are stored: ``values[j, y] = phi(y + e_j, y)``.
    The reverse bond carries the negated value.  On a torus of side 2 the
    pairs (y + e_j, y) and (y, y + e_j) are both positive bonds, so the
    stored values must themselves be antisymmetric there.
    """

    def __init__(self, d: int, L: int, values):
        self.d, self.L = d, L
        self.torus = Torus(d, 2 * L)
        values = np.array(values, dtype=float)
        if values.shape != (d, self.torus.nsites):
            raise DimensionMismatch(f"expected shape {(d, self.torus.nsites)}, got {values.shape}")
        self.values = values
        self.values.setflags(write=False)
        if 2 * L == 2:
            for j in range(d):
                partner = values[j, self.torus.forward[j]]
                if not angles_equal(partner, -values[j]):
                    raise AntisymmetryViolation(f"bond phases on axis {j} are not antisymmetric")

    @classmethod
    def zero(cls, d: int, L: int) -> "BondPhase":
        return cls(d, L, np.zeros((d, (2 * L) ** d)))

    @classmethod
    def from_function(cls, d: int, L: int, phi) -> "BondPhase":
        """Build from a callable phi(x, y) on coordinate arrays, checking antisymmetry."""
        T = Torus(d, 2 * L)
        vals = np.empty((d, T.nsites))
        for j in range(d):
            for y in range(T.nsites):
                x = T.forward[j, y]
                a = phi(T.coords[x], T.coords[y])
                b = phi(T.coords[y], T.coords[x])
                if not angles_equal(a, -b):
                    raise AntisymmetryViolation(
                        f"phi(x,y) + phi(y,x) != 0 mod 2pi at x={T.coords[x]}, y={T.coords[y]}"
                    )
                vals[j, y] = a
        return cls(d, L, vals)

    def value(self, x: int, y: int) -> float:
        ax = self.torus.bond_axis(x, y)
        if ax is None:
            return 0.0
        j, sgn = ax
        return self.values[j, y] if sgn > 0 else -self.values[j, x]

    def gauge_shift(self, theta0) -> "BondPhase":
        """phi(x, y) + theta0(x) - theta0(y)."""
        theta0 = np.asarray(theta0, dtype=float)
        vals = self.values + theta0[self.torus.forward] - theta0[None, :]
        return BondPhase(self.d, self.L, vals)

    def hopping_matrix(self, t) -> np.ndarray:
        """One-particle matrix T[x, y] = t_j e^{i phi(x, y)} on nearest-neighbour pairs."""
        n = self.torus.nsites
        T = np.zeros((n, n), dtype=complex)
        for j in range(self.d):
            for y in range(n):
                x = self.torus.forward[j, y]
                T[x, y] = t[j] * np.exp(1j * self.values[j, y])
                T[y, x] = t[j] * np.exp(-1j * self.values[j, y])
        return T


@dataclass
class FluxReport:
    plaquette: np.ndarray  # shape (n_pairs, nsites), canonical angles
    circle: np.ndarray  # shape (d, nsites), winding sum starting at each site
    margin: float

    @property
    def margin_ok(self) -> bool:
        return self.margin < 1


def flux_report(phase: BondPhase, config: LatticeConfig | None = None) -> FluxReport:
    d, T = phase.d, phase.torus
    pairs = [(j, k) for k in range(d) for j in range(k)]
    plaq = np.empty((len(pairs), T.nsites))
    for p, (j, k) in enumerate(pairs):
        for x in range(T.nsites):
            xj = T.forward[j, x]
            xjk = T.forward[k, xj]
            xk = T.forward[k, x]
            s = phase.value(xj, x) + phase.value(xjk, xj) + phase.value(xk, xjk) + phase.value(x, xk)
            plaq[p, x] = s
    circ = np.empty((d, T.nsites))
    for l in range(d):
        for x in range(T.nsites):
            s, cur = 0.0, x
            for _ in range(T.n):
                s += phase.values[l, cur]
                cur = T.forward[l, cur]
            circ[l, x] = s
    margin = config.margin if config is not None else float("nan")
    return FluxReport(canonical_angle(plaq).reshape(plaq.shape), canonical_angle(circ).reshape(circ.shape), margin)


def chessboard_phase(config: LatticeConfig, theta=None, eps=None) -> BondPhase:
    """Bond phase whose plaquette fluxes are (-1)^{x_j+x_k} theta_{j,k} and whose
    circle fluxes are eps_j * pi."""
    d, L = config.d, config.L
    theta = np.asarray(config.theta if theta is None else theta, dtype=float)
    eps = np.asarray(config.eps if eps is None else eps, dtype=float)
    T = Torus(d, 2 * L)
    y = T.coords
    vals = np.zeros((d, T.nsites))
    for j in range(d):
        odd_j = y[:, j] % 2
        s = np.zeros(T.nsites)
        for l in range(j):
            s += (y[:, l] % 2) * theta[pair_index(l, j)]
        vals[j] = (-1.0) ** y[:, j] * s + odd_j * (np.pi / L) * eps[j]
    return BondPhase(d, L, vals)


def find_gauge(phi1: BondPhase, phi2: BondPhase, tol: float = ANGLE_TOL) -> np.ndarray:
    """Return theta with phi1(x,y) = phi2(x,y) + theta(x) - theta(y) mod 2pi, theta(0) = 0.

    theta(x) is the sum of phi1 - phi2 along the path from the origin that
    walks axis 1 first, then axis 2, and so on.
    """
    if phi1.values.shape != phi2.values.shape:
        raise DimensionMismatch("phases live on different lattices")
    r1, r2 = flux_report(phi1), flux_report(phi2)
    if not (angles_equal(r1.plaquette, r2.plaquette, tol) and angles_equal(r1.circle, r2.circle, tol)):
        raise FluxMismatch("plaquette or circle fluxes differ")
    T = phi1.torus
    diff = phi1.values - phi2.values
    theta = np.zeros(T.nsites)
    for x in range(T.nsites):
        s, cur = 0.0, 0
        for j in range(T.d):
            for _ in range(T.coords[x, j]):
                s += diff[j, cur]
                cur = T.forward[j, cur]
        theta[x] = s
    resid = diff - (theta[T.forward] - theta[None, :])
    if not angles_equal(resid, 0.0, 1e3 * tol):
        raise FluxMismatch("path sums are inconsistent with the bond differences")
    return theta


def random_closed_path(torus: Torus, max_len: int, rng: np.random.Generator, start: int = 0):
    """Random closed walk of at most max_len steps (when max_len allows closing).

    A random walk is followed by a return leg along each axis in a random
    direction, so the loop may wind around the torus.
    """
    n, d = torus.n, torus.d
    while True:
        k = int(rng.integers(1, max(2, max_len // 2 + 1)))
        path = [start]
        disp = np.zeros(d, dtype=int)
        for _ in range(k):
            j = int(rng.integers(d))
            if rng.random() < 0.5:
                path.append(int(torus.forward[j, path[-1]]))
                disp[j] += 1
            else:
                path.append(int(torus.backward[j, path[-1]]))
                disp[j] -= 1
        for j in rng.permutation(d):
            r = int(-disp[j]) % n
            if r and rng.random() < 0.5:
                r -= n
            step = torus.forward if r > 0 else torus.backward
            for _ in range(abs(r)):
                path.append(int(step[j, path[-1]]))
        if len(path) - 1 <= max_len:
            return path


def path_sum(phase: BondPhase, path) -> float:
    return float(sum(phase.value(path[i + 1], path[i]) for i in range(len(path) - 1)))
