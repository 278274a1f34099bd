"""Command-line driver: verification suites and experiments with JSON and CSV reports."""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import fluxphase, fock, freenergy, grassmann, hopping, lattice, scales
from .errors import CheckError, TooLarge
from .lattice import LatticeConfig

SUBCOMMANDS = ("verify", "spectrum", "flux-scan", "free-energy", "limits", "perturb")
SUITES = ("lattice", "hopping", "fock", "grassmann", "scales", "fluxphase", "freenergy")
# couplings used by suites and experiments when the configured ones all vanish
REFERENCE_COUPLINGS = (1.0, 0.3, 0.2, 0.0, 0.1)

DEFAULT_TOLERANCES = {
    "half_filling": 1e-10,
    "multiband": 1e-10,
    "gauge": 1e-10,
    "equal_flux": 1e-10,
    "hopping_closed_form": 1e-12,
    "covariance": 1e-8,
    "identity_part": 1e-12,
    "partition": 1e-12,
    "reordering": 1e-12,
    "wick": 1e-12,
    "tree": 1e-10,
    "perturb": 1e-6,
    "grassmann_order": 0.8,
    "limit_L": 1e-3,
    "limit_beta": 5e-2,
    "position_momentum": 1e-12,
    "temperature_shift": 1e-12,
}

DEFAULTS = {
    "lattice": {"d": "2", "size": "2", "beta": "1", "h": "4", "hopping": "", "flux": "", "eps": "", "M": "2"},
    "couplings": {"values": "0,0,0,0,0", "preset": "reflection-positive-combo"},
    "run": {
        "suite": "all",
        "seed": "0",
        "out": "fluxrg-out",
        "grid": "16",
        "n": "2",
        "trials": "20",
        "samples": "1000",
        "Ls": "4,8,16,32",
        "betas": "2,4,8,16",
    },
}


class UsageError(Exception):
    """Invalid flags or configuration; maps to exit code 2."""


# ------------------------------------------------------------ configuration


def _floats(text: str, what: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"{what} must be a comma-separated list of numbers, got {text!r}") from None


def _ints(text: str, what: str) -> tuple:
    vals = _floats(text, what)
    if any(v != int(v) for v in vals):
        raise UsageError(f"{what} must be integers, got {text!r}")
    return tuple(int(v) for v in vals)


@dataclass
class RunConfig:
    lattice: LatticeConfig
    hs: tuple
    couplings: tuple
    preset: str
    suite: str
    seed: int
    out: str
    grid: int
    n: int
    trials: int
    samples: int
    Ls: tuple
    betas: tuple
    tolerances: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lattice"] = asdict(self.lattice)
        d["lattice"]["size"] = self.lattice.size
        return _jsonable(d)

    @property
    def family(self):
        return fock.PRESETS[self.preset](self.lattice.d, self.lattice.L)

    @property
    def active_couplings(self) -> tuple:
        """The configured couplings, or the reference mixture when they all vanish."""
        if any(self.couplings):
            return self.couplings
        if self.preset == "reflection-positive-combo":
            return REFERENCE_COUPLINGS
        return (1.0,) * self.family.n_v


def _read_sections(path: str | None) -> dict:
    merged = {sec: dict(vals) for sec, vals in DEFAULTS.items()}
    merged["tolerances"] = {}
    if path is None:
        return merged
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    for sec in parser.sections():
        if sec not in merged:
            raise UsageError(f"unknown config section [{sec}]")
        for key, val in parser.items(sec):
            if sec != "tolerances" and key not in merged[sec]:
                raise UsageError(f"unknown key {key!r} in [{sec}]")
            merged[sec][key] = val
    return merged


FLAG_KEYS = {
    "d": ("lattice", "d"),
    "size": ("lattice", "size"),
    "beta": ("lattice", "beta"),
    "h": ("lattice", "h"),
    "hopping": ("lattice", "hopping"),
    "flux": ("lattice", "flux"),
    "eps": ("lattice", "eps"),
    "couplings": ("couplings", "values"),
    "preset": ("couplings", "preset"),
    "suite": ("run", "suite"),
    "seed": ("run", "seed"),
    "out": ("run", "out"),
    "grid": ("run", "grid"),
    "n": ("run", "n"),
    "trials": ("run", "trials"),
    "samples": ("run", "samples"),
    "Ls": ("run", "Ls"),
    "betas": ("run", "betas"),
}


def resolve(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, the config file and flags, then validate."""
    sec = _read_sections(args.config)
    for flag, (s, k) in FLAG_KEYS.items():
        val = getattr(args, flag, None)
        if val is not None:
            sec[s][k] = str(val)
    for item in args.tol_override or []:
        if "=" not in item:
            raise UsageError(f"--tol-override expects key=val, got {item!r}")
        k, v = item.split("=", 1)
        sec["tolerances"][k.strip()] = v.strip()

    tol = dict(DEFAULT_TOLERANCES)
    for k, v in sec["tolerances"].items():
        if k not in tol:
            raise UsageError(f"unknown tolerance key {k!r}; known: {', '.join(sorted(tol))}")
        try:
            tol[k] = float(v)
        except ValueError:
            raise UsageError(f"tolerance {k} must be a number, got {v!r}") from None

    lat = sec["lattice"]
    d = _ints(lat["d"], "d")
    size = _ints(lat["size"], "size")
    if len(d) != 1 or len(size) != 1:
        raise UsageError("d and size take one integer each")
    d, size = d[0], size[0]
    if d < 1 or size < 2 or size % 2:
        raise UsageError("need d >= 1 and an even size 2L >= 2")
    L = size // 2
    beta = _floats(lat["beta"], "beta")
    hs = _floats(lat["h"], "h")
    if len(beta) != 1 or not hs:
        raise UsageError("beta takes one value and h at least one")
    kw = {"beta": beta[0], "h": hs[0], "M": _floats(lat["M"], "M")[0]}
    if lat["hopping"]:
        kw["t"] = _floats(lat["hopping"], "hopping")
    if lat["flux"]:
        kw["theta"] = _floats(lat["flux"], "flux")
    if lat["eps"]:
        kw["eps"] = _ints(lat["eps"], "eps")
    try:
        config = LatticeConfig.default(d, L, **kw)
    except (ValueError, CheckError) as exc:
        raise UsageError(f"invalid lattice parameters: {exc}") from None
    if config.margin >= 1:
        raise UsageError(f"flux margin {config.margin:.3g} must be < 1")

    preset = sec["couplings"]["preset"]
    if preset not in fock.PRESETS:
        raise UsageError(f"unknown preset {preset!r}; known: {', '.join(fock.PRESETS)}")
    n_v = fock.PRESETS[preset](1, 1).n_v
    if sec["couplings"]["values"] == DEFAULTS["couplings"]["values"]:
        sec["couplings"]["values"] = ",".join(["0"] * n_v)
    couplings = _floats(sec["couplings"]["values"], "couplings")
    if len(couplings) != n_v:
        raise UsageError(f"preset {preset} takes {n_v} couplings, got {len(couplings)}")

    run = sec["run"]
    suite = run["suite"]
    if suite != "all" and suite not in SUITES:
        raise UsageError(f"unknown suite {suite!r}; known: all, {', '.join(SUITES)}")
    ints = {k: _ints(run[k], k) for k in ("seed", "grid", "n", "trials", "samples")}
    if any(len(v) != 1 for v in ints.values()):
        raise UsageError("seed, grid, n, trials and samples take one integer each")
    ints = {k: v[0] for k, v in ints.items()}
    if ints["grid"] < 2 or ints["grid"] % 2:
        raise UsageError("grid must be an even number of points so that pi lies on it")
    if not 1 <= ints["n"] <= 3:
        raise UsageError("n must be 1, 2 or 3")
    if ints["trials"] < 1 or ints["samples"] < 1:
        raise UsageError("trials and samples must be positive")
    Ls = _ints(run["Ls"], "Ls")
    betas = _floats(run["betas"], "betas")
    if not Ls or min(Ls) < 1 or not betas or min(betas) <= 0:
        raise UsageError("Ls must be positive integers and betas positive numbers")
    return RunConfig(
        config, tuple(hs), couplings, preset, suite, ints["seed"], run["out"], ints["grid"], ints["n"],
        ints["trials"], ints["samples"], Ls, tuple(betas), tol,
    )


# ------------------------------------------------------------ reporting


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (complex, np.complexfloating)):
        return {"re": _jsonable(float(x.real)), "im": _jsonable(float(x.imag))}
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def check(suite: str, name: str, passed: bool, measured=None, tolerance=None, witness=None) -> dict:
    out = {"suite": suite, "name": name, "pass": bool(passed)}
    if measured is not None:
        out["measured"] = measured
    if tolerance is not None:
        out["tolerance"] = tolerance
    if witness is not None:
        out["witness"] = witness
    return out


def write_csv(path: Path, header: list, rows: list) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def write_report(out: Path, command: str, rc: RunConfig, checks: list, results: dict, tables: list) -> dict:
    report = {
        "tool": "fluxrg",
        "version": __version__,
        "command": command,
        "seed": rc.seed,
        "config": rc.to_dict(),
        "checks": checks,
        "results": results,
        "tables": sorted(tables),
        "passed": all(c["pass"] for c in checks),
    }
    report = _jsonable(report)
    (out / "report.json").write_text(json.dumps(report, sort_keys=True, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return report


def _rng(rc: RunConfig, tag: int) -> np.random.Generator:
    return np.random.default_rng([rc.seed, tag])


# ------------------------------------------------------------ verification suites


def suite_lattice(rc: RunConfig, rng) -> list:
    cfg = rc.lattice
    phase = lattice.chessboard_phase(cfg)
    rep = lattice.flux_report(phase, cfg)
    T = phase.torus
    want = np.array(
        [[(-1.0) ** (T.coords[x, j] + T.coords[x, k]) * cfg.theta_jk(j, k) for x in range(T.nsites)]
         for k in range(cfg.d) for j in range(k)]
    ).reshape(rep.plaquette.shape)
    out = [check("lattice", "chessboard_plaquette_flux", lattice.angles_equal(rep.plaquette, want))]
    circ = np.repeat(np.pi * np.asarray(cfg.eps, dtype=float)[:, None], T.nsites, axis=1)
    out.append(check("lattice", "chessboard_circle_flux", lattice.angles_equal(rep.circle, circ)))
    worst = 0.0
    for _ in range(20):
        theta0 = rng.uniform(-np.pi, np.pi, size=T.nsites)
        shifted = phase.gauge_shift(theta0)
        g = lattice.find_gauge(shifted, phase)
        worst = max(worst, float(np.max(np.abs(lattice.canonical_angle(g - (theta0 - theta0[0]))))))
        path = lattice.random_closed_path(T, 12, rng, start=int(rng.integers(T.nsites)))
        worst = max(worst, abs(float(lattice.canonical_angle(lattice.path_sum(shifted, path) - lattice.path_sum(phase, path)))))
    out.append(check("lattice", "gauge_recovery_and_loop_sums", worst < 1e-9, worst, 1e-9))
    return out


def suite_hopping(rc: RunConfig, rng) -> list:
    tol = rc.tolerances["hopping_closed_form"]
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 6))
        a = rng.normal(size=n) + 1j * rng.normal(size=n)
        g = rng.uniform(-np.pi, np.pi, size=n * (n - 1) // 2)
        worst = max(worst, float(np.max(np.abs(hopping.build_M(a, g) - hopping.closed_form_M(a, g)))))
    out = [check("hopping", "recursive_vs_closed_form", worst <= tol, worst, tol)]
    sq = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 5))
        a = rng.normal(size=n + 1) + 1j * rng.normal(size=n + 1)
        g = rng.uniform(-np.pi, np.pi, size=(n + 1) * n // 2)
        sq = max(sq, hopping.squared_block_check(a, g))
    out.append(check("hopping", "squared_block_identities", sq <= 1e-10, sq, 1e-10))
    rep = hopping.spectral_report(rc.lattice, rc.samples, rng=rng, random_flux=True)
    out.append(check("hopping", "spectral_norm_bound", rep.norm_violations == 0, rep.max_norm_ratio, 1.0))
    out.append(check("hopping", "spectral_derivative_bound", rep.derivative_violations == 0, rep.max_derivative_ratio, 1.0))
    out.append(check("hopping", "spectral_lower_bound", rep.lower_violations == 0, rep.min_lower_ratio, 1.0))
    out.append(check("hopping", "chiral_symmetry", rep.symmetry_violations == 0, rep.symmetry_violations))
    return out


def _ed_config(rc: RunConfig) -> LatticeConfig:
    cfg = rc.lattice
    if 2 * (2 * cfg.L) ** cfg.d > fock.MAX_MODES:
        raise TooLarge(f"exact diagonalisation needs 2 (2L)^d <= {fock.MAX_MODES} modes")
    return cfg


def suite_fock(rc: RunConfig, rng) -> list:
    cfg = _ed_config(rc)
    fam, U = rc.family, rc.active_couplings
    H, _, fs = fock.build_hamiltonian(cfg, fam, U, form="one-band")
    th = fock.thermodynamics(H, cfg, fs)
    hf = float(np.max(np.abs(th.densities - 0.5)))
    tol = rc.tolerances["half_filling"]
    out = [check("fock", "half_filling", hf <= tol, hf, tol)]
    Hm, _, fsm = fock.build_hamiltonian(cfg, fam, U, form="multi-band")
    lz1 = fock.diagonalize(H, fs).log_z(cfg.beta)
    lz2 = fock.diagonalize(Hm, fsm).log_z(cfg.beta)
    rel = float(abs(np.expm1(lz2 - lz1)))
    tol = rc.tolerances["multiband"]
    out.append(check("fock", "multiband_trace", rel <= tol, rel, tol))
    conds = fock.check_conditions(fam, U, rng=rng)
    for key in sorted(conds):
        out.append(check("fock", f"kernel_{key}", conds[key]))
    tol = rc.tolerances["reordering"]
    worst = 0.0
    try:
        for m in (1, 2, 3):
            for n in (1, 2, 3):
                worst = max(worst, fock.normal_order_check(m, n, count=2, rng=rng, tol=tol))
        ok = True
    except CheckError:
        ok = False
    out.append(check("fock", "reordering_identity", ok, worst, tol))
    return out


def suite_grassmann(rc: RunConfig, rng) -> list:
    out = []
    n0 = 6
    C = rng.normal(size=(n0, n0)) + 1j * rng.normal(size=(n0, n0))
    worst = 0.0
    for _ in range(100):
        k = int(rng.integers(1, 4))
        X, Y = rng.choice(n0, k, replace=False), rng.choice(n0, k, replace=False)
        seq = [2 * int(x) for x in X] + [2 * int(y) + 1 for y in Y]
        rng.shuffle(seq)
        s, mask = grassmann.sort_sign(seq)
        worst = max(worst, abs(s * grassmann.wick(mask, C) - grassmann.wick_pairing(seq, C)))
    tol = rc.tolerances["wick"]
    out.append(check("grassmann", "wick_vs_pairing", worst <= tol * max(1.0, np.abs(C).max() ** 3), float(worst), tol))

    cfg = rc.lattice.replace(L=1, eps=(0,) * rc.lattice.d, beta=1.0, h=4.0) if rc.lattice.d == 2 else None
    if cfg is None:
        return out
    fam = fock.onsite_family(2, 1)
    rows = grassmann.partition_ratio_vs_trace(cfg, fam, [0.05], [4, 8])
    ratio = float(np.log2(rows[0].discrepancy / rows[1].discrepancy))
    tol = rc.tolerances["grassmann_order"]
    out.append(check("grassmann", "partition_vs_trace_order", ratio >= tol, ratio, tol,
                     [[r.h, r.discrepancy] for r in rows]))
    Ccov = scales.covariance("C", cfg)
    direct = grassmann.perturb_coeff(2, cfg, fam, [1.0], C=Ccov)
    tree = grassmann.perturb_coeff(2, cfg, fam, [1.0], method="tree-formula", C=Ccov)
    diff = float(abs(direct - tree))
    tol = rc.tolerances["tree"]
    out.append(check("grassmann", "tree_vs_wick_second_order", diff <= tol, diff, tol))
    bcfg = cfg.replace(beta=0.25, h=8.0)
    recs, c1 = grassmann.interaction_bound_suite(bcfg, grassmann.restrict_family(fam, [0]), [0.5], norm_family=fam)
    bad = [[r.delta, r.alpha, r.lhs, r.rhs] for r in recs if not r.ok]
    out.append(check("grassmann", "interaction_bounds", not bad, c1, None, bad or None))
    Ct = scales.antisymmetric_extension(Ccov)
    res = grassmann.temperature_shift_residual(Ct, cfg, 1)
    tol = rc.tolerances["temperature_shift"]
    out.append(check("grassmann", "temperature_shift", res <= tol, res, tol))
    return out


def suite_scales(rc: RunConfig, rng) -> list:
    cfg = rc.lattice
    out = []
    r = scales.uv_partition_residual(cfg)
    tol = rc.tolerances["partition"]
    out.append(check("scales", "uv_partition", r <= tol, r, tol))
    r = scales.ir_partition_residual(cfg, rng=rng)
    out.append(check("scales", "ir_partition", r <= tol, r, tol))
    bad = scales.annulus_violations(cfg, samples=rc.samples, rng=rng)
    out.append(check("scales", "annulus_support", bad == 0, bad, 0))
    if 2 * cfg.n_bands * cfg.L**cfg.d <= fock.MAX_MODES:
        C = scales.covariance("C", cfg)
        Ced = fock.thermal_covariance_ed(cfg)
        err = float(np.max(np.abs(C - Ced)))
        tol = rc.tolerances["covariance"]
        out.append(check("scales", "covariance_vs_ed", err <= tol, err, tol))
    J = scales.covariance("C>0+h", cfg) - scales.covariance("C>0-", cfg)
    err = float(np.max(np.abs(J - np.eye(len(J)))))
    tol = rc.tolerances["identity_part"]
    out.append(check("scales", "split_difference_is_identity_part", err <= tol, err, tol))
    return out


def suite_fluxphase(rc: RunConfig, rng) -> list:
    cfg = _ed_config(rc)
    fam, U = rc.family, rc.active_couplings
    out = []
    tol = rc.tolerances["gauge"]
    try:
        rep = fluxphase.gauge_invariance_check(cfg, fam, U, trials=rc.trials, rng=rng, tol=tol)
        out.append(check("fluxphase", "gauge_invariance", True, rep.max_rel_error, tol))
    except CheckError as exc:
        out.append(check("fluxphase", "gauge_invariance", False, None, tol, str(exc)))
    err = fluxphase.equal_flux_pairs(cfg, pairs=rc.trials, rng=rng)
    tol = rc.tolerances["equal_flux"]
    out.append(check("fluxphase", "equal_flux_pairs", err <= tol, err, tol))
    res = fluxphase.flux_scan(fluxphase.FluxScanSpec(cfg, fluxphase.flux_grid(rc.grid)))
    out.append(check("fluxphase", "free_scan_pi_minimum", res.pi_is_min, res.argmin))
    return out


def suite_freenergy(rc: RunConfig, rng) -> list:
    out = []
    d = rc.lattice.d
    for tag in ("on-site", "density-density", "spin-spin"):
        rep = freenergy.interaction_norms(lambda L, tag=tag: fock.PRESETS[tag](d, L), [0.0, 1.0], [1, 2])
        for c in (0.0, 1.0):
            b = freenergy.closed_form_bounds(tag, d, c)
            got = {"v0": rep.v0_sup, "v1": rep.sup(1, c), "v2": rep.sup(2, c)}
            ok = all(got[k] <= b[k] * (1 + 1e-12) + 1e-15 for k in got)
            out.append(check("freenergy", f"norm_bounds_{tag}_c{int(c)}", ok, got, b))
    gap = freenergy.position_momentum_gap(rc.lattice)
    tol = rc.tolerances["position_momentum"]
    out.append(check("freenergy", "position_vs_momentum_density", gap <= tol, gap, tol))
    return out


SUITE_FUNCS = {
    "lattice": suite_lattice,
    "hopping": suite_hopping,
    "fock": suite_fock,
    "grassmann": suite_grassmann,
    "scales": suite_scales,
    "fluxphase": suite_fluxphase,
    "freenergy": suite_freenergy,
}


# ------------------------------------------------------------ subcommands


def cmd_verify(rc: RunConfig, out: Path):
    names = SUITES if rc.suite == "all" else (rc.suite,)
    checks = []
    for i, name in enumerate(SUITES):
        if name in names:
            checks.extend(SUITE_FUNCS[name](rc, _rng(rc, i)))
    rows = [[c["suite"], c["name"], int(c["pass"])] for c in checks]
    write_csv(out / "checks.csv", ["suite", "check", "pass"], rows)
    return checks, {"suites": list(names)}, ["checks.csv"]


def cmd_spectrum(rc: RunConfig, out: Path):
    cfg = rc.lattice
    rng = _rng(rc, 100)
    checks = suite_hopping(rc, rng)
    ks = hopping.sample_momenta(cfg.d, rc.samples, rng)
    rows = []
    for k in ks:
        E = hopping.dispersion(cfg, k)
        rows.append([*k.tolist(), hopping.opnorm(E), hopping.min_singular(E),
                     hopping.lower_bound(cfg.t, cfg.L, cfg.eps, cfg.theta, k)])
    header = [f"k{j + 1}" for j in range(cfg.d)] + ["opnorm", "min_singular", "lower_bound"]
    write_csv(out / "spectrum.csv", header, rows)
    return checks, {"f_t": hopping.f_t(cfg)}, ["spectrum.csv"]


def cmd_flux_scan(rc: RunConfig, out: Path):
    cfg = rc.lattice
    grid = fluxphase.flux_grid(rc.grid)
    if any(rc.couplings):
        if rc.preset != "reflection-positive-combo":
            raise UsageError("interacting flux scans use the reflection-positive-combo preset")
        spec = fluxphase.FluxScanSpec(_ed_config(rc), grid, rc.family, rc.couplings, "ED")
    else:
        spec = fluxphase.FluxScanSpec(cfg, grid)
    try:
        res = fluxphase.flux_scan(spec)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rows = [[th, f, res.argmin] for th, f in res.rows]
    write_csv(out / "flux_scan.csv", ["theta", "free_energy", "argmin"], rows)
    checks = [
        check("fluxphase", "pi_is_argmin", res.pi_is_min, res.argmin, np.pi),
        check("fluxphase", "monotone_in_distance_to_pi", res.monotone_in_distance),
    ]
    return checks, {"argmin": res.argmin, "method": spec.method}, ["flux_scan.csv"]


def cmd_free_energy(rc: RunConfig, out: Path):
    cfg = rc.lattice
    checks = suite_freenergy(rc, _rng(rc, 200))
    rep = freenergy.interaction_norms(lambda L: fock.PRESETS[rc.preset](cfg.d, L), [0.0, 1.0], [1, 2, 4])
    rows = []
    for L in sorted(rep.vm):
        for (m, c), v in sorted(rep.vm[L].items()):
            rows.append([L, m, c, v])
        rows.append([L, 0, 0.0, rep.v0[L]])
    write_csv(out / "norms.csv", ["L", "m", "c", "value"], rows)
    results = {
        "free_density_position": freenergy.free_density_position(cfg),
        "free_density_momentum": freenergy.free_density_momentum(cfg),
    }
    try:
        results["coupling_radius"] = freenergy.coupling_radius(cfg, rep).R
    except CheckError as exc:
        results["coupling_radius"] = str(exc)
    if any(rc.couplings) and 2 * (2 * cfg.L) ** cfg.d <= fock.MAX_MODES:
        H, _, fs = fock.build_hamiltonian(cfg, rc.family, rc.couplings, form="one-band")
        results["interacting_density"] = fock.thermodynamics(H, cfg, fs).free_energy_density
    return checks, results, ["norms.csv"]


def cmd_limits(rc: RunConfig, out: Path):
    cfg = rc.lattice
    sL = freenergy.limit_study("L", cfg, rc.Ls)
    sb = freenergy.limit_study("beta", cfg, rc.betas)
    rows = []
    for s in (sL, sb):
        for i, (p, v, g) in enumerate(zip(s.sequence, s.values, s.gaps)):
            rows.append([s.axis, p, v, g, s.cauchy[i - 1] if i else ""])
    tabs = ["limits.csv"]
    tolL = rc.tolerances["limit_L"]
    tolb = rc.tolerances["limit_beta"] * max(rc.betas) ** -0.5
    checks = [
        check("freenergy", "L_cauchy_shrinking", sL.shrinking, sL.cauchy),
        check("freenergy", "L_final_gap", sL.gaps[-1] <= tolL, sL.gaps[-1], tolL),
        check("freenergy", "beta_cauchy_shrinking", sb.shrinking, sb.cauchy),
        check("freenergy", "beta_final_gap", sb.gaps[-1] <= tolb, sb.gaps[-1], tolb),
    ]
    results = {"L_target": sL.target, "beta_target": sb.target}
    if len(rc.hs) >= 2 and any(rc.couplings):
        sh = freenergy.limit_study("h", cfg, rc.hs, rc.family, rc.couplings)
        for p, v, g in zip(sh.sequence, sh.values, sh.gaps):
            rows.append(["h", p, v, g, ""])
        checks.append(check("grassmann", "h_gap_decreasing", all(b < a for a, b in zip(sh.gaps, sh.gaps[1:])), sh.gaps))
        results["h_target"] = sh.target
    write_csv(out / "limits.csv", ["axis", "parameter", "value", "gap", "cauchy"], rows)
    return checks, results, tabs


def cmd_perturb(rc: RunConfig, out: Path):
    cfg = rc.lattice
    if cfg.d != 2 or cfg.L != 1:
        raise UsageError("perturb runs at d=2, size=2")
    fam, U = rc.family, rc.active_couplings
    ed = grassmann.ed_perturb_coeff(rc.n, cfg, fam, U)
    rows, vals = [], []
    for h in rc.hs:
        try:
            c = cfg.replace(h=h)
            c.n_time
        except ValueError as exc:
            raise UsageError(f"h={h}: {exc}") from None
        a = grassmann.perturb_coeff(rc.n, c, fam, U).real
        vals.append(a)
        rows.append([h, a, ed, abs(a - ed)])
    tol = rc.tolerances["perturb"]
    disc = [r[3] for r in rows]
    shrinking = all(b < a for a, b in zip(disc, disc[1:])) or max(disc) <= tol
    checks = [check("grassmann", "discrepancy_decreasing", shrinking, disc)]
    results = {"ed": ed, "values": vals}
    if len(rc.hs) >= 3:
        # even powers when the observed order is two, else all integer powers
        order = grassmann.convergence_order(rc.hs, vals) if max(disc) > tol else 2.0
        powers = range(2, 2 * len(vals), 2) if order > 1.5 else range(1, len(vals))
        ext = grassmann.richardson(rc.hs, vals, powers=powers).real
        results["observed_order"] = order
        rows.append(["extrapolated", ext, ed, abs(ext - ed)])
        checks.append(check("grassmann", "extrapolated_vs_ed", abs(ext - ed) <= tol, abs(ext - ed), tol))
        results["extrapolated"] = ext
    write_csv(out / "perturb.csv", ["h", f"a{rc.n}", "ed", "discrepancy"], rows)
    return checks, results, ["perturb.csv"]


COMMANDS = {
    "verify": cmd_verify,
    "spectrum": cmd_spectrum,
    "flux-scan": cmd_flux_scan,
    "free-energy": cmd_free_energy,
    "limits": cmd_limits,
    "perturb": cmd_perturb,
}


# ------------------------------------------------------------ entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fluxrg", description=__doc__)
    p.add_argument("command", choices=SUBCOMMANDS)
    p.add_argument("--config", help="sectioned key-value config file; flags override it")
    p.add_argument("--d", help="lattice dimension")
    p.add_argument("--size", help="side 2L of the one-band torus")
    p.add_argument("--beta", help="inverse temperature")
    p.add_argument("--h", help="time-lattice resolution; a comma list for perturb and limits")
    p.add_argument("--hopping", help="t1,t2,...")
    p.add_argument("--flux", help="theta12,theta13,...")
    p.add_argument("--eps", help="circle flux indicators e1,e2,...")
    p.add_argument("--couplings", help="Uo,Ud,Us1,Us2,Us3 for the default preset")
    p.add_argument("--preset", help="interaction preset name")
    p.add_argument("--suite", help="verification suite or 'all'")
    p.add_argument("--seed", help="RNG seed")
    p.add_argument("--tol-override", action="append", metavar="KEY=VAL")
    p.add_argument("--out", help="output directory")
    p.add_argument("--grid", help="number of flux grid points")
    p.add_argument("--n", help="perturbation order")
    p.add_argument("--trials", help="random trials for gauge checks")
    p.add_argument("--samples", help="random samples for spectral and support checks")
    p.add_argument("--Ls", help="L sequence for the limit study")
    p.add_argument("--betas", help="beta sequence for the limit study")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    try:
        rc = resolve(args)
        out = Path(rc.out)
        out.mkdir(parents=True, exist_ok=True)
        checks, results, tables = COMMANDS[args.command](rc, out)
    except (UsageError, TooLarge) as exc:
        print(f"fluxrg: error: {exc}", file=sys.stderr)
        return 2
    report = write_report(out, args.command, rc, checks, results, tables)
    for c in checks:
        print(f"{'PASS' if c['pass'] else 'FAIL'} {c['suite']}.{c['name']}")
    return 0 if report["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
