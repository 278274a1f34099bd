"""The twelve acceptance criteria at their stated tolerances.

Each test records one PASS/FAIL line; the lines are printed in the pytest
terminal summary and when this file is run as a script.
"""
import time

import numpy as np
import pytest

from fluxrg import fluxphase, fock, freenergy, grassmann, hopping, scales
from fluxrg.errors import CheckError
from fluxrg.lattice import LatticeConfig

RESULTS: dict = {}
COMBO = (1.0, 0.3, 0.2, 0.0, 0.1)
PRESETS = ("on-site", "density-density", "spin-spin")


def record(number: int, title: str, passed: bool, measured, tolerance, seconds: float):
    line = f"{'PASS' if passed else 'FAIL'} criterion {number:2d} {title}: measured {measured} tol {tolerance} ({seconds:.1f}s)"
    RESULTS[number] = line
    print(line)
    return passed


def random_mixture(rng) -> np.ndarray:
    """U_o of either sign, U_d and U_s,j non-negative."""
    return np.concatenate([rng.uniform(-2, 2, 1), rng.uniform(0, 1, 4)])


def couplings_cases(rng, count: int = 20):
    for tag in PRESETS:
        fam = fock.PRESETS[tag](2, 1)
        yield fam, np.ones(fam.n_v)
    fam = fock.reflection_positive_family(2, 1)
    for _ in range(count):
        yield fam, random_mixture(rng)


def test_01_half_filling():
    t0, tol = time.time(), 1e-10
    rng = np.random.default_rng(101)
    worst = 0.0
    for beta in (0.5, 1.0, 2.0):
        cfg = LatticeConfig.default(2, 1, beta=beta)
        for fam, U in couplings_cases(rng):
            H, _, fs = fock.build_hamiltonian(cfg, fam, U, form="one-band")
            worst = max(worst, float(np.max(np.abs(fock.thermodynamics(H, cfg, fs).densities - 0.5))))
    assert record(1, "half filling", worst <= tol, f"{worst:.2e}", tol, time.time() - t0)


def test_02_multiband_trace():
    t0, tol = time.time(), 1e-10
    rng = np.random.default_rng(102)
    cfg = LatticeConfig.default(2, 1)
    fam = fock.reflection_positive_family(2, 1)
    worst = 0.0
    for _ in range(20):
        U = random_mixture(rng)
        H1, _, fs1 = fock.build_hamiltonian(cfg, fam, U, form="one-band")
        H2, _, fs2 = fock.build_hamiltonian(cfg, fam, U, form="multi-band")
        d = fock.diagonalize(H2, fs2).log_z(cfg.beta) - fock.diagonalize(H1, fs1).log_z(cfg.beta)
        worst = max(worst, abs(float(np.expm1(d))))
    assert record(2, "multi-band trace", worst <= tol, f"{worst:.2e}", tol, time.time() - t0)


def test_03_gauge_invariance():
    t0, tol = time.time(), 1e-10
    cfg = LatticeConfig.default(2, 1)
    try:
        rep = fluxphase.gauge_invariance_check(
            cfg, fock.reflection_positive_family(2, 1), COMBO, trials=100, rng=np.random.default_rng(103), tol=tol
        )
        ok, worst = True, f"{rep.max_rel_error:.2e}"
    except CheckError as exc:
        ok, worst = False, str(exc)
    assert record(3, "gauge invariance", ok, worst, tol, time.time() - t0)


def test_04_flux_minimum():
    t0 = time.time()
    grid = fluxphase.flux_grid(16)
    free = fluxphase.flux_scan(fluxphase.FluxScanSpec(LatticeConfig.default(2, 2), grid))
    inter = fluxphase.flux_scan(
        fluxphase.FluxScanSpec(LatticeConfig.default(2, 1), grid, fock.reflection_positive_family(2, 1), COMBO, "ED")
    )
    ok = free.pi_is_min and inter.pi_is_min
    measured = f"argmin free {free.argmin:.4f}, interacting {inter.argmin:.4f}"
    assert record(4, "flux-phase minimum", ok, measured, "argmin = pi", time.time() - t0)


def test_05_hopping_suite():
    t0, tol = time.time(), 1e-12
    rng = np.random.default_rng(105)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 6))
        a = rng.normal(size=n) + 1j * rng.normal(size=n)
        g = rng.uniform(-np.pi, np.pi, size=n * (n - 1) // 2)
        worst = max(worst, float(np.max(np.abs(hopping.build_M(a, g) - hopping.closed_form_M(a, g)))))
    rep = hopping.spectral_report(LatticeConfig.default(2, 2), 1000, rng=rng, random_flux=True)
    bad = rep.norm_violations + rep.derivative_violations + rep.lower_violations + rep.symmetry_violations
    ok = worst <= tol and bad == 0
    assert record(5, "hopping matrices", ok, f"M_n {worst:.2e}, violations {bad}", tol, time.time() - t0)


def test_06_covariance():
    t0, tol = time.time(), 1e-8
    cfg = LatticeConfig.default(2, 1, beta=1.0, h=8.0)
    err = float(np.max(np.abs(scales.covariance("C", cfg) - fock.thermal_covariance_ed(cfg))))
    J = scales.covariance("C>0+h", cfg) - scales.covariance("C>0-", cfg)
    jerr = float(np.max(np.abs(J - scales.covariance("J", cfg))))
    ok = err <= tol and jerr <= 1e-14
    assert record(6, "covariance vs ED", ok, f"{err:.2e}, J {jerr:.2e}", tol, time.time() - t0)


def test_07_partitions():
    t0, tol = time.time(), 1e-12
    worst, bad = 0.0, 0
    rng = np.random.default_rng(107)
    for L, beta, h in ((1, 1.0, 4.0), (2, 2.0, 8.0), (4, 4.0, 32.0)):
        cfg = LatticeConfig.default(2, L, beta=beta, h=h)
        worst = max(worst, scales.uv_partition_residual(cfg), scales.ir_partition_residual(cfg, 1000, rng))
        bad += scales.annulus_violations(cfg, 10_000, rng)
    ok = worst <= tol and bad == 0
    assert record(7, "cut-off partitions", ok, f"{worst:.2e}, annulus violations {bad}", tol, time.time() - t0)


def test_08_grassmann_vs_trace():
    t0, tol = time.time(), 0.8
    cfg = LatticeConfig.default(2, 1, beta=1.0)
    rows = grassmann.partition_ratio_vs_trace(cfg, fock.onsite_family(2, 1), [0.05], [4, 8])
    ratio = float(np.log2(rows[0].discrepancy / rows[1].discrepancy))
    measured = f"{rows[0].discrepancy:.2e} -> {rows[1].discrepancy:.2e}, log2 ratio {ratio:.2f}"
    assert record(8, "Grassmann vs trace", ratio >= tol, measured, tol, time.time() - t0)


def test_09_perturbation_coefficients():
    t0, tol = time.time(), 1e-6
    cfg = LatticeConfig.default(2, 1)
    combo = fock.reflection_positive_family(2, 1)
    a1_ed = grassmann.ed_perturb_coeff(1, cfg, combo, COMBO)
    a1 = grassmann.perturb_coeff(1, cfg.replace(h=8.0), combo, COMBO).real
    # the mixed interaction converges in 1/h, the on-site one in 1/h^2
    hs = [4, 8, 16, 32, 64]
    vals = [grassmann.perturb_coeff(2, cfg.replace(h=float(h)), combo, COMBO).real for h in hs]
    a2 = grassmann.richardson(hs, vals, powers=(1, 2, 3, 4)).real
    a2_ed = grassmann.ed_perturb_coeff(2, cfg, combo, COMBO)
    onsite = fock.onsite_family(2, 1)
    hs_o = hs[:4]
    vals_o = [grassmann.perturb_coeff(2, cfg.replace(h=float(h)), onsite, [1.0]).real for h in hs_o]
    a2_o = grassmann.richardson(hs_o, vals_o, powers=(2, 4, 6)).real
    a2_o_ed = grassmann.ed_perturb_coeff(2, cfg, onsite, [1.0])
    errs = abs(a1 - a1_ed), abs(a2 - a2_ed), abs(a2_o - a2_o_ed)
    ok = max(errs) <= tol
    measured = "a1 {:.2e}, a2 {:.2e}, a2 on-site {:.2e}".format(*errs)
    assert record(9, "perturbation coefficients", ok, measured, tol, time.time() - t0)


def test_10_free_limits():
    t0 = time.time()
    cfg = LatticeConfig.default(2, 1)
    Ls, betas = [4, 8, 16, 32], [2, 4, 8, 16]
    sL = freenergy.limit_study("L", cfg, Ls)
    sb = freenergy.limit_study("beta", cfg, betas)
    floor = 1e-14  # Cauchy differences at round-off cannot keep shrinking

    def shrinking(c):
        return all(b < a or max(a, b) <= floor for a, b in zip(c, c[1:]))

    tol_b = 5e-2 * max(betas) ** -0.5
    ok = shrinking(sL.cauchy) and shrinking(sb.cauchy) and sL.gaps[-1] <= 1e-3 and sb.gaps[-1] <= tol_b
    measured = f"L gap {sL.gaps[-1]:.2e}, beta gap {sb.gaps[-1]:.2e}"
    assert record(10, "free-fermion limits", ok, measured, f"1e-3 / {tol_b:.2e}", time.time() - t0)


def test_11_norm_bounds():
    t0 = time.time()
    bad = []
    for tag in PRESETS:
        rep = freenergy.interaction_norms(lambda L, tag=tag: fock.PRESETS[tag](2, L), [0.0, 1.0], [1, 2, 4])
        for c in (0.0, 1.0):
            b = freenergy.closed_form_bounds(tag, 2, c)
            got = {"v0": rep.v0_sup, "v1": rep.sup(1, c), "v2": rep.sup(2, c)}
            bad += [(tag, c, k) for k in got if got[k] > b[k] * (1 + 1e-12)]
    assert record(11, "norm bounds", not bad, f"violations {bad or 0}", "closed form", time.time() - t0)


def test_12_reordering_identity():
    t0, tol = time.time(), 1e-12
    rng = np.random.default_rng(112)
    worst, ok = 0.0, True
    for m in (1, 2, 3):
        for n in range(1, 6):
            try:
                worst = max(worst, fock.normal_order_check(m, n, count=50, rng=rng, tol=tol))
            except CheckError:
                ok = False
    assert record(12, "reordering identity", ok, f"{worst:.2e}", tol, time.time() - t0)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
