"""Tests for the two independent ground-truth solvers (monotone finite
differences and the dynamic-programming min formula) and the field comparator.

Frozen constants come from closed forms: linear data rides the flow exactly
(u = a x - t H(a)); the stationary-shock datum v = -|x| with H = p^2/2 has
u(t, x) = -|x| - t/2; and the single-stage min formula is exact when the
optimal predecessor lands on a grid node.
"""

import numpy as np
import pytest

from hjminmax.family import PiecewiseFunction
from hjminmax.flow import HamiltonianModel
from hjminmax.oracles import (
    ComparisonReport,
    FDConfig,
    compare,
    fd_viscosity,
    lax_oleinik_min,
)
from hjminmax.scheme import make_field

FREE = HamiltonianModel.from_source("p^2/2", 1.0, p_only=True, convex_in_p=True)
CUBIC = HamiltonianModel.from_source("-p^3+p^2+p", 11.0, p_only=True)


def vee():
    return PiecewiseFunction.from_expressions([0.0], ["x", "-x"], 1.0)


def test_fd_config_validation():
    with pytest.raises(ValueError, match="dx"):
        FDConfig(dx=0.0)
    with pytest.raises(ValueError, match="cfl"):
        FDConfig(cfl=1.5)
    with pytest.raises(ValueError, match="alpha"):
        FDConfig(alpha=-1.0)


def test_fd_rejects_alpha_below_wave_speed():
    xg = np.linspace(-1.0, 1.0, 11)
    with pytest.raises(ValueError, match="monotonicity"):
        fd_viscosity(FREE, vee(), 1.0, xg, FDConfig(dx=0.01, alpha=0.1))


def test_fd_record_times_validation():
    xg = np.linspace(-1.0, 1.0, 11)
    with pytest.raises(ValueError, match="record times"):
        fd_viscosity(FREE, vee(), 0.5, xg, FDConfig(dx=0.01),
                     record_times=[0.7])


def test_fd_plane_wave_exact_transport():
    # constant-gradient data makes both difference quotients equal, the
    # artificial viscosity vanish, and the update exact: u = a x - t H(a)
    xg = np.linspace(-1.0, 1.0, 21)
    a = 0.5
    v = PiecewiseFunction.from_expressions([], [f"{a}*x"], abs(a) + 0.1)
    fd = fd_viscosity(CUBIC, v, 0.75, xg, FDConfig(dx=5e-3),
                      record_times=[0.25, 0.5])
    assert fd.times == pytest.approx([0.0, 0.25, 0.5, 0.75])
    for k, t in enumerate(fd.times):
        exact = a * xg - float(t) * (-a**3 + a**2 + a)
        assert np.max(np.abs(fd.u[k] - exact)) <= 1e-9


def test_fd_stationary_shock_first_order():
    # v = -|x|, H = p^2/2: u(t, x) = -|x| - t/2; the measured sup error is
    # ~0.58 dx, so <= dx pins first-order accuracy with real margin
    xg = np.linspace(-1.0, 1.0, 21)
    exact = -np.abs(xg) - 0.5
    errs = []
    for dx in (5e-3, 2e-3):
        fd = fd_viscosity(FREE, vee(), 1.0, xg, FDConfig(dx=dx))
        err = float(np.max(np.abs(fd.u[-1] - exact)))
        assert err <= dx
        errs.append(err)
    assert errs[1] < errs[0]


def test_fd_zero_hamiltonian_freezes_data():
    model = HamiltonianModel.from_source("0*p", 1.0, p_only=True)
    xg = np.linspace(-1.0, 1.0, 21)
    fd = fd_viscosity(model, vee(), 1.0, xg, FDConfig(dx=0.01))
    # only the floor artificial viscosity (1e-9) acts, and only at the kink
    assert np.max(np.abs(fd.u - vee()(xg)[None, :])) <= 1e-8


def test_fd_comparison_principle():
    # vee <= 0 pointwise, so the monotone scheme must keep the order
    xg = np.linspace(-1.0, 1.0, 21)
    zero = PiecewiseFunction.from_expressions([], ["0*x"], 0.1)
    rec = np.linspace(0.0, 1.0, 5)
    fd_low = fd_viscosity(FREE, vee(), 1.0, xg, FDConfig(dx=5e-3),
                          record_times=rec)
    fd_high = fd_viscosity(FREE, zero, 1.0, xg, FDConfig(dx=5e-3),
                           record_times=rec)
    assert np.all(fd_low.u <= fd_high.u + 1e-12)


def test_min_formula_exact_on_aligned_grid():
    # the continuum minimizer z = x -+ t sits on the grid, so the discrete
    # min equals the exact solution to bisection precision
    xg = np.linspace(-2.0, 2.0, 81)
    lo = lax_oleinik_min(FREE, vee(), 0.0, 1.0, xg)
    exact = -np.abs(xg) - 0.5
    assert np.max(np.abs(lo.u[-1] - exact)) <= 1e-12
    assert lo.scheme == "min_oracle"
    assert np.max(np.abs(lo.u[0] - vee()(xg))) <= 1e-12


def test_min_formula_multistage_consistency():
    # chaining stages loses only the grid-min resolution per stage
    xg = np.linspace(-2.0, 2.0, 81)
    lo = lax_oleinik_min(FREE, vee(), 0.0, 1.0, xg, n_sub=8)
    exact = -np.abs(xg) - 0.5
    assert lo.times.size == 9
    assert np.max(np.abs(lo.u[-1] - exact)) <= 3e-2


def test_min_formula_matches_fd_independently():
    # the two oracles share no machinery; their gap is the FD shock error
    xg = np.linspace(-2.0, 2.0, 81)
    lo = lax_oleinik_min(FREE, vee(), 0.0, 1.0, xg)
    fd = fd_viscosity(FREE, vee(), 1.0, xg, FDConfig(dx=2e-3),
                      record_times=lo.times)
    rep = compare(fd, lo)
    assert rep.sup_error <= 5e-3


def test_min_formula_requires_convex_state_free():
    xg = np.linspace(-1.0, 1.0, 11)
    with pytest.raises(ValueError, match="convex_in_p"):
        lax_oleinik_min(CUBIC, vee(), 0.0, 1.0, xg)
    rot = HamiltonianModel.from_source("x^2+p^2", 2.0, convex_in_p=True)
    with pytest.raises(ValueError, match="p_only"):
        lax_oleinik_min(rot, vee(), 0.0, 0.1, xg)
    with pytest.raises(ValueError, match="n_sub"):
        lax_oleinik_min(FREE, vee(), 0.0, 1.0, xg, n_sub=0)
    with pytest.raises(ValueError, match="t > s"):
        lax_oleinik_min(FREE, vee(), 1.0, 1.0, xg)


def test_compare_reports_sup_l1_and_worst_point():
    times = np.array([0.0, 1.0])
    xg = np.array([0.0, 1.0, 2.0])
    a = make_field(times, xg, np.zeros((2, 3)), "a")
    b = make_field(times, xg, np.array([[0.0, 0.0, 0.0], [0.0, 0.5, 0.1]]),
                   "b")
    rep = compare(a, b)
    assert isinstance(rep, ComparisonReport)
    assert rep.sup_error == pytest.approx(0.5)
    assert rep.l1_error == pytest.approx(0.6 / 6.0)
    assert rep.worst_point == (1.0, 1.0)
    assert rep.per_time == [(0.0, 0.0), (1.0, 0.5)]


def test_compare_requires_identical_grids():
    times = np.array([0.0, 1.0])
    a = make_field(times, np.array([0.0, 1.0]), np.zeros((2, 2)), "a")
    b = make_field(times, np.array([0.0, 2.0]), np.zeros((2, 2)), "b")
    with pytest.raises(ValueError, match="share"):
        compare(a, b)
