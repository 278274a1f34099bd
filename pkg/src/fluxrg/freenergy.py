"""Interaction norms, the admissible coupling radius and free-energy limit studies."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import MarginViolation
from .fock import chord
from .hopping import dispersion_batch
from .lattice import LatticeConfig, Torus, chessboard_phase, flux_margin

# ------------------------------------------------------------ norms


@dataclass
class NormReport:
    v0: dict  # L -> (1/L^d) sum_j |V_0 channel j|
    vm: dict  # L -> {(m, c): value}
    bounds: dict = field(default_factory=dict)  # (name, c) -> closed-form bound

    def sup(self, m: int, c: float) -> float:
        return max(v[(m, c)] for v in self.vm.values())

    @property
    def v0_sup(self) -> float:
        return max(self.v0.values())


def _majorant(family, m: int) -> dict:
    """sum over channels of |kernel entries|, the supremum over |U_j| <= 1 being at most this."""
    out: dict = {}
    for ker in family.Vm.get(m, []):
        for key, v in ker.items():
            out[key] = out.get(key, 0.0) + abs(v)
    return out


def decay_norm(family, m: int, c: float, L: int) -> float:
    """Left side of the kernel decay bound at a single L, with the channel majorant.

    sup over pivot (x, sigma), positions p, q and axis k of the sum over the other 2m-1 entries of
    (chord_k(x - x_q) + 1) e^{sum_j (c chord_j(x - x_p))^{1/2}} |V_m|.
    """
    ker = _majorant(family, m)
    if not ker:
        return 0.0
    d = family.d
    T = Torus(d, 2 * L)
    n = 2 * T.nsites
    best = 0.0
    keys = np.array(list(ker.keys()))
    vals = np.array(list(ker.values()))
    pivot = keys[:, 0]
    sites = keys // 2
    diff = T.coords[sites[:, :1]] - T.coords[sites]  # (entries, 2m, d)
    ch = chord(diff, L)
    for p in range(1, 2 * m):
        w = np.exp(np.sum(np.sqrt(c * ch[:, p, :]), axis=1))
        for q in range(1, 2 * m):
            for k in range(d):
                contrib = (ch[:, q, k] + 1) * w * vals
                tot = np.bincount(pivot, weights=contrib, minlength=n)
                best = max(best, float(tot.max()))
    return best


def interaction_norms(family_or_factory, cs, Ls) -> NormReport:
    """v_0 and v_m(c) on the requested L values; a factory L -> family may be passed."""
    v0, vm = {}, {}
    for L in Ls:
        fam = family_or_factory(L) if callable(family_or_factory) else family_or_factory
        if fam.L != L and not callable(family_or_factory):
            raise ValueError("pass a factory to evaluate several L")
        v0[L] = float(np.sum(np.abs(fam.V0)) / L**fam.d)
        vm[L] = {(m, float(c)): decay_norm(fam, m, float(c), L) for m in range(1, fam.N_v + 1) for c in cs}
    return NormReport(v0, vm)


def _zsum(f, cutoff: int = 4000) -> float:
    x = np.arange(-cutoff, cutoff + 1)
    return float(np.sum(f(np.abs(x))))


NN_C1 = np.exp(4 / np.pi)


def closed_form_bounds(tag: str, d: int, c: float, c1: float = NN_C1, c2: float = 1.0) -> dict:
    """Upper bounds on v_0, v_1(c), v_2(c) stated for the preset interactions."""
    s_plain = _zsum(lambda x: np.exp(-c2 * 2 / np.pi * x)) ** d
    s_weight = _zsum(lambda x: (x + 1) * np.exp(np.sqrt(c * x) - c2 * 2 / np.pi * x)) ** d
    if tag == "on-site":
        return {"v0": 2.0 ** (d - 2), "v1": 0.5, "v2": 0.5}
    if tag == "density-density":
        return {"v0": 2**d * c1 * s_plain, "v1": 2 * c1 * s_plain, "v2": 2 * c1 * s_weight}
    if tag == "spin-spin":
        return {"v0": 0.0, "v1": 0.0, "v2": 6 * c1 * s_weight}
    raise ValueError(f"no closed-form bound for {tag!r}")


# ------------------------------------------------------------ coupling radius


@dataclass
class Radius:
    R: float
    constant: float
    note: str = "c(d, N_v) is a placeholder input, not a value from the analysis"


def coupling_radius(config: LatticeConfig, norms: NormReport, constant: float = 1.0, N_v: int = 2) -> Radius:
    """R = (sum_l c^l v_l(c))^{-1} (1 - margin)^{N_v d / 2} (min t)^{N_v d} (max t)^{1 - N_v d}."""
    margin = flux_margin(config.theta, config.d)
    if margin >= 1:
        raise MarginViolation(f"flux margin {margin} must be < 1")
    s = sum(constant**l * norms.sup(l, float(constant)) for l in range(1, N_v + 1))
    t = np.asarray(config.t)
    d = config.d
    R = (1 / s) * (1 - margin) ** (N_v * d / 2) * t.min() ** (N_v * d) * t.max() ** (1 - N_v * d)
    return Radius(float(R), constant)


# ------------------------------------------------------------ free-fermion densities


def free_density_position(config: LatticeConfig) -> float:
    """-(1/(beta (2L)^d)) log Tr e^{-beta H0} from the one-particle spectrum on Gamma(2L)."""
    T = chessboard_phase(config).hopping_matrix(config.t)
    lam = np.linalg.eigvalsh(T)
    return float(-2 * np.sum(np.logaddexp(0.0, -config.beta * lam)) / (config.beta * (2 * config.L) ** config.d))


def free_density_momentum(config: LatticeConfig) -> float:
    """-(2/(beta (2L)^d)) sum_{rho, k} log(1 + e^{-beta alpha_rho(k)}) over Gamma(L)*."""
    ks = 2 * np.pi / config.L * Torus(config.d, config.L).coords
    E = dispersion_batch(config.t, config.L, config.eps, config.theta, ks)
    lam = np.linalg.eigvalsh(E)
    return float(-2 * np.sum(np.logaddexp(0.0, -config.beta * lam)) / (config.beta * (2 * config.L) ** config.d))


def _band_grid(config: LatticeConfig, points: int) -> np.ndarray:
    return _band_grid_cached(config.d, config.t, config.theta, points)


@lru_cache(maxsize=8)
def _band_grid_cached(d: int, t: tuple, theta: tuple, points: int) -> np.ndarray:
    axis = 2 * np.pi * np.arange(points) / points
    ks = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    # infinite-volume integrand: L-independent coefficients t_j (1 + e^{-i k_j})
    E = dispersion_batch(t, 2, np.zeros(d), theta, ks)
    lam = np.linalg.eigvalsh(E)
    lam.setflags(write=False)
    return lam


def _grid_points(d: int) -> int:
    return 1000 if d <= 2 else 100


def free_density_limit(config: LatticeConfig, beta: float | None = None, points: int | None = None) -> float:
    """-(2/(beta 2^d (2 pi)^d)) int sum_rho log(1 + e^{-beta alpha_rho(k)}) dk by the trapezoid rule."""
    beta = config.beta if beta is None else beta
    lam = _band_grid(config, points or _grid_points(config.d))
    mean = np.mean(np.sum(np.logaddexp(0.0, -beta * lam), axis=1))
    return float(-2 * mean / (beta * 2**config.d))


def zero_temperature_limit(config: LatticeConfig, points: int | None = None) -> float:
    """(2/(2^d (2 pi)^d)) int sum_rho 1_{alpha < 0} alpha dk."""
    lam = _band_grid(config, points or _grid_points(config.d))
    return float(2 * np.mean(np.sum(np.minimum(lam, 0.0), axis=1)) / 2**config.d)


# ------------------------------------------------------------ limit studies


@dataclass
class LimitStudy:
    axis: str
    sequence: list
    values: list
    target: float | None
    gaps: list
    cauchy: list
    shrinking: bool
    extrapolated: float | None = None


def _cauchy(values) -> list:
    return [float(abs(b - a)) for a, b in zip(values, values[1:])]


def limit_study(axis: str, config: LatticeConfig, sequence, family=None, U=None) -> LimitStudy:
    """Sequences in h (Grassmann against trace), L (free density against the integral) or beta
    (free density against the zero-temperature integral)."""
    seq = list(sequence)
    if axis == "L":
        vals = [free_density_momentum(LatticeConfig.default(config.d, L, t=config.t, theta=config.theta, beta=config.beta)) for L in seq]
        target = free_density_limit(config)
    elif axis == "beta":
        vals = [free_density_limit(config, beta=b) for b in seq]
        target = zero_temperature_limit(config)
    elif axis == "h":
        from .grassmann import partition_ratio_vs_trace

        rows = partition_ratio_vs_trace(config, family, U, seq)
        vals = [r.grassmann.real for r in rows]
        target = rows[0].trace
    else:
        raise ValueError(f"unknown axis {axis!r}")
    cauchy = _cauchy(vals)
    gaps = [float(abs(v - target)) for v in vals]
    shrinking = all(b < a for a, b in zip(cauchy, cauchy[1:]))
    return LimitStudy(axis, seq, [float(v) for v in vals], float(target), gaps, cauchy, bool(shrinking))


def decay_exponent(sequence, gaps) -> float:
    """Least-squares slope of log gap against log parameter."""
    x, y = np.log(np.asarray(sequence, dtype=float)), np.log(np.asarray(gaps, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


# ------------------------------------------------------------ interacting checks


def interacting_log_ratio(config: LatticeConfig, family, U, beta: float) -> float:
    """log(Tr e^{-beta H} / Tr e^{-beta H0}) for the multi-band operators."""
    from .fock import build_hamiltonian, diagonalize

    H, H0, fs = build_hamiltonian(config, family, U, form="multi-band")
    return diagonalize(H, fs).log_z(beta) - diagonalize(H0, fs).log_z(beta)


def interpolation_check(config: LatticeConfig, family, U, beta: float, nodes: int = 64) -> tuple[float, float]:
    """Both sides of the bound on |g(beta) - g(floor beta)| with g(b) = (1/(b L^d)) log(Tr e^{-bH}/Tr e^{-bH0})."""
    from .fock import build_hamiltonian, diagonalize
    from .hopping import script_dispersion

    if beta < 1:
        raise ValueError("need beta >= 1")
    H, H0, fs = build_hamiltonian(config, family, U, form="multi-band")
    sH, s0 = diagonalize(H, fs), diagonalize(H0, fs)
    Ld = config.L**config.d
    b0 = float(np.floor(beta))

    def ratio(b):
        return sH.log_z(b) - s0.log_z(b)

    lhs = abs(ratio(beta) / (beta * Ld) - ratio(b0) / (b0 * Ld))
    integral = 0.0
    if beta > b0:
        xs, ws = np.polynomial.legendre.leggauss(nodes)
        g = 0.5 * (beta - b0) * xs + 0.5 * (beta + b0)
        integral = 0.5 * (beta - b0) * sum(w * abs(ratio(x)) / (x**2 * Ld) for x, w in zip(g, ws))
    rep = interaction_norms(family, [0.0], [config.L])
    umax = float(np.max(np.abs(U)))
    ks = 2 * np.pi * np.random.default_rng(0).random((256, config.d))
    enorm = max(np.linalg.norm(script_dispersion(config, k), 2) for k in ks)
    enorm = max(enorm, 2 * float(np.sum(config.t)))  # |a_j| <= 2 t_j gives a uniform bound
    coef = rep.v0_sup * umax + 2 ** (config.d + 1) * sum(rep.sup(m, 0.0) for m in range(1, family.N_v + 1)) * umax
    coef += 2 ** (config.d + 2) * enorm
    return float(lhs), float(integral + coef * np.log(beta / b0))


def analyticity_residual(config: LatticeConfig, family, direction, radius: float = 0.05, samples: int = 21) -> float:
    """Max residual of a degree-4 fit of the free-energy density along U = u * direction, |u| <= radius."""
    from .fock import build_hamiltonian, diagonalize

    us = np.linspace(-radius, radius, samples)
    vals = []
    for u in us:
        H, _, fs = build_hamiltonian(config, family, u * np.asarray(direction, dtype=float), form="multi-band")
        vals.append(-diagonalize(H, fs).log_z(config.beta) / (config.beta * (2 * config.L) ** config.d))
    coef = np.polyfit(us, vals, 4)
    return float(np.max(np.abs(np.polyval(coef, us) - vals)))


def position_momentum_gap(config: LatticeConfig) -> float:
    """|free density by position eigenvalues - free density by momentum eigenvalues|."""
    return abs(free_density_position(config) - free_density_momentum(config))
