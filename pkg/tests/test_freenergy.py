import numpy as np
import pytest

from fluxrg import fock
from fluxrg import freenergy as FE
from fluxrg.errors import MarginViolation
from fluxrg.lattice import LatticeConfig

COMBO = (1.0, 0.3, 0.2, 0.0, 0.1)
FACTORIES = {
    "on-site": lambda L: fock.onsite_family(2, L),
    "density-density": lambda L: fock.density_family(2, L),
    "spin-spin": lambda L: fock.spin_family(2, L),
}


@pytest.mark.parametrize("tag", sorted(FACTORIES))
def test_norms_below_closed_form(tag):
    rep = FE.interaction_norms(FACTORIES[tag], [0.0, 1.0], [1, 2, 4])
    for c in (0.0, 1.0):
        b = FE.closed_form_bounds(tag, 2, c)
        assert rep.v0_sup <= b["v0"] * (1 + 1e-12)
        assert rep.sup(1, c) <= b["v1"] * (1 + 1e-12)
        assert rep.sup(2, c) <= b["v2"] * (1 + 1e-12)


def test_onsite_norm_values():
    rep = FE.interaction_norms(FACTORIES["on-site"], [1.0], [1, 2])
    assert rep.v0_sup == 1.0
    assert rep.sup(1, 1.0) == 0.5 and rep.sup(2, 1.0) == 0.5


def test_norm_grows_with_weight():
    rep = FE.interaction_norms(FACTORIES["density-density"], [0.0, 0.5, 1.0], [2])
    vals = [rep.sup(2, c) for c in (0.0, 0.5, 1.0)]
    assert vals == sorted(vals)


def test_closed_form_unknown_tag():
    with pytest.raises(ValueError):
        FE.closed_form_bounds("custom", 2, 0.0)


def test_single_L_needs_factory():
    with pytest.raises(ValueError):
        FE.interaction_norms(fock.onsite_family(2, 1), [0.0], [1, 2])


def test_coupling_radius_onsite():
    rep = FE.interaction_norms(FACTORIES["on-site"], [1.0], [1, 2])
    R = FE.coupling_radius(LatticeConfig.default(2, 1), rep)
    assert np.isclose(R.R, 1.0)


def test_coupling_radius_shrinks_with_margin():
    rep = FE.interaction_norms(FACTORIES["on-site"], [1.0], [1])
    base = FE.coupling_radius(LatticeConfig.default(2, 1), rep).R
    off = FE.coupling_radius(LatticeConfig.default(2, 1, theta=[2.5]), rep).R
    assert off < base


def test_coupling_radius_margin_violation():
    rep = FE.interaction_norms(FACTORIES["on-site"], [1.0], [1])
    with pytest.raises(MarginViolation):
        FE.coupling_radius(LatticeConfig.default(2, 1, theta=[0.0]), rep)


@pytest.mark.parametrize("L", [1, 2, 3])
def test_position_equals_momentum(L):
    assert FE.position_momentum_gap(LatticeConfig.default(2, L)) <= 1e-12


def test_L_limit_study():
    s = FE.limit_study("L", LatticeConfig.default(2, 1), [1, 2, 4, 8])
    assert s.shrinking and s.gaps[-1] <= 1e-6
    assert s.gaps == sorted(s.gaps, reverse=True)


def test_beta_limit_study():
    seq = [1, 2, 4, 8]
    s = FE.limit_study("beta", LatticeConfig.default(2, 1), seq)
    assert s.shrinking
    assert s.gaps[-1] <= 5e-2 * 8**-0.5
    assert FE.decay_exponent(seq, s.gaps) < -2


def test_h_limit_study():
    cfg = LatticeConfig.default(2, 1, beta=0.5)
    s = FE.limit_study("h", cfg, [4, 8], fock.onsite_family(2, 1), [1.0])
    assert s.gaps[1] < s.gaps[0]


def test_limit_study_unknown_axis():
    with pytest.raises(ValueError):
        FE.limit_study("t", LatticeConfig.default(2, 1), [1])


def test_decay_exponent_power_law():
    seq = np.array([1.0, 2.0, 4.0, 8.0])
    assert np.isclose(FE.decay_exponent(seq, 3 * seq**-1.5), -1.5)


def test_interpolation_bound_holds():
    cfg = LatticeConfig.default(2, 1)
    fam = fock.reflection_positive_family(2, 1)
    for beta in (1.0, 2.5, 3.9):
        lhs, rhs = FE.interpolation_check(cfg, fam, COMBO, beta)
        assert lhs <= rhs
    assert FE.interpolation_check(cfg, fam, COMBO, 2.0)[0] == 0.0
    with pytest.raises(ValueError):
        FE.interpolation_check(cfg, fam, COMBO, 0.5)


def test_free_energy_analytic_in_coupling():
    cfg = LatticeConfig.default(2, 1)
    assert FE.analyticity_residual(cfg, fock.reflection_positive_family(2, 1), COMBO) <= 1e-9


def test_interacting_log_ratio_vanishes_at_zero():
    cfg = LatticeConfig.default(2, 1)
    assert abs(FE.interacting_log_ratio(cfg, fock.onsite_family(2, 1), [0.0], 1.0)) <= 1e-12
