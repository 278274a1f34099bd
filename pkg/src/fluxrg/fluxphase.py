"""Free energy as a function of the bond phase and the pi-flux minimisation check."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvarianceViolation, NonQuadratic
from .fock import build_hamiltonian, diagonalize, free_log_z
from .lattice import BondPhase, LatticeConfig, Torus, canonical_angle, chessboard_phase


def _has_interaction(family, U) -> bool:
    return family is not None and U is not None and bool(np.any(np.asarray(U) != 0))


def flux_log_z(phase: BondPhase, config: LatticeConfig, family=None, U=None, method: str = "quadratic") -> float:
    """log Tr e^{-beta H(phi)} by the one-particle product formula or by exact diagonalisation."""
    if method == "quadratic":
        if _has_interaction(family, U):
            raise NonQuadratic("the quadratic method needs a vanishing interaction")
        return free_log_z(phase.hopping_matrix(config.t), config.beta)
    if method == "ED":
        H, _, fs = build_hamiltonian(config, family, U, form="one-band", phase=phase)
        return diagonalize(H, fs).log_z(config.beta)
    raise ValueError(f"unknown method {method!r}")


def flux_free_energy(
    phase: BondPhase, config: LatticeConfig, family=None, U=None, method: str = "quadratic", density: bool = False
) -> float:
    """-(1/beta) log Tr e^{-beta H(phi)}, divided by the number of sites when ``density``."""
    f = -flux_log_z(phase, config, family, U, method) / config.beta
    return f / (2 * config.L) ** config.d if density else f


def uniform_phase(config: LatticeConfig, theta: float) -> BondPhase:
    """Chessboard phase with the same flux magnitude on every plaquette pair."""
    n_pairs = config.d * (config.d - 1) // 2
    return chessboard_phase(config, theta=[theta] * n_pairs)


@dataclass
class FluxScanSpec:
    config: LatticeConfig
    grid: list
    family: object = None
    U: object = None
    method: str = "quadratic"


@dataclass
class FluxScanResult:
    grid: np.ndarray
    free_energy: np.ndarray
    argmin: float
    pi_is_min: bool
    monotone_in_distance: bool
    rows: list = field(default_factory=list)


def _distance_to_pi(theta) -> np.ndarray:
    return np.abs(canonical_angle(np.asarray(theta, dtype=float) - np.pi))


def flux_scan(spec: FluxScanSpec, tie_tol: float = 1e-12) -> FluxScanResult:
    """Free energy on a uniform-flux grid; the argmin breaks ties toward pi."""
    grid = np.asarray(spec.grid, dtype=float)
    if spec.method == "ED" and spec.U is not None:
        U = np.asarray(spec.U, dtype=float)
        if len(U) > 1 and np.any(U[1:] < 0):
            raise ValueError("the comparison needs U_d and U_s,j >= 0")
    f = np.array(
        [flux_free_energy(uniform_phase(spec.config, th), spec.config, spec.family, spec.U, spec.method) for th in grid]
    )
    dist = _distance_to_pi(grid)
    low = f.min()
    near = np.nonzero(f <= low + tie_tol * max(1.0, abs(low)))[0]
    best = near[np.argmin(dist[near])]
    order = np.argsort(dist, kind="stable")
    fd = f[order]
    monotone = bool(np.all(np.diff(fd) >= -tie_tol * max(1.0, abs(low))))
    rows = [(float(th), float(v)) for th, v in zip(grid, f)]
    return FluxScanResult(grid, f, float(grid[best]), bool(dist[best] < 1e-12), monotone, rows)


def flux_grid(points: int) -> list:
    """Uniform grid {0, 2pi/points, ...}; contains pi when points is even."""
    return [2 * np.pi * i / points for i in range(points)]


# ------------------------------------------------------------- gauge checks


def random_phase(d: int, L: int, rng: np.random.Generator) -> BondPhase:
    """Random antisymmetric bond phase on Gamma(2L)."""
    T = Torus(d, 2 * L)
    vals = rng.uniform(-np.pi, np.pi, size=(d, T.nsites))
    if 2 * L == 2:
        for j in range(d):
            lower = T.coords[:, j] == 0
            vals[j, T.forward[j][lower]] = -vals[j, lower]
    return BondPhase(d, L, vals)


@dataclass
class GaugeReport:
    trials: int
    max_rel_error: float
    ok: bool


def gauge_invariance_check(
    config: LatticeConfig, family=None, U=None, trials: int = 100, rng=None, tol: float = 1e-10, phase=None
) -> GaugeReport:
    """Tr e^{-beta H(phi + d theta0)} = Tr e^{-beta H(phi)} for random theta0, phi = chessboard by default."""
    rng = rng or np.random.default_rng(0)
    phase = phase or chessboard_phase(config)
    method = "ED" if _has_interaction(family, U) else "quadratic"
    base = flux_log_z(phase, config, family, U, method)
    nsites = (2 * config.L) ** config.d
    worst = 0.0
    for _ in range(trials):
        theta0 = rng.uniform(-np.pi, np.pi, size=nsites)
        lz = flux_log_z(phase.gauge_shift(theta0), config, family, U, method)
        err = abs(np.expm1(lz - base))
        worst = max(worst, err)
        if err > tol:
            raise InvarianceViolation(f"trace changes by {err:.3e} under theta0 = {theta0.tolist()}")
    return GaugeReport(trials, worst, True)


def equal_flux_pairs(config: LatticeConfig, pairs: int = 50, family=None, U=None, rng=None) -> float:
    """Largest relative free-energy difference over random phase pairs with equal fluxes."""
    rng = rng or np.random.default_rng(0)
    method = "ED" if _has_interaction(family, U) else "quadratic"
    nsites = (2 * config.L) ** config.d
    worst = 0.0
    for _ in range(pairs):
        phi1 = random_phase(config.d, config.L, rng)
        phi2 = phi1.gauge_shift(rng.uniform(-np.pi, np.pi, size=nsites))
        f1 = flux_free_energy(phi1, config, family, U, method)
        f2 = flux_free_energy(phi2, config, family, U, method)
        worst = max(worst, abs(f1 - f2) / max(abs(f1), 1e-300))
    return worst
