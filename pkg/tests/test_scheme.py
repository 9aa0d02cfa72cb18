"""Tests for subdivision schedules, the one-step operator, iteration with
piecewise-linear resampling, and the semigroup/Lipschitz diagnostics.

The convex stationary-shock case H = p^2/2, v = -|x| has the closed form
u(t, x) = -|x| - t/2 whose kink sits on a grid node, so the whole iterate
pipeline (solve, snap, resample) reproduces it to machine precision; the
cubic-Hamiltonian case is genuinely non-semigroup and its defect is pinned
from measurement.
"""

import numpy as np
import pytest

from hjminmax.family import PiecewiseFunction
from hjminmax.flow import FlowConfig, HamiltonianModel
from hjminmax.scheme import (
    SubdivisionSchedule,
    iterate,
    lipschitz_report,
    make_field,
    momentum_window,
    resample_step,
    sample_at_time,
    semigroup_defect,
    step_operator,
    _padded_grid,
)

FREE = HamiltonianModel.from_source("p^2/2", 1.0, p_only=True, convex_in_p=True)
CUBIC = HamiltonianModel.from_source("-p^3+p^2+p", 11.0, p_only=True)
ROTATION = HamiltonianModel.from_source("x^2+p^2", 2.0)
CFG = FlowConfig(5e-3)


def vee():
    return PiecewiseFunction.from_expressions([0.0], ["x", "-x"], 1.0)


def double_well_v():
    return PiecewiseFunction.from_expressions(
        [-0.25, 0.0, 1.25],
        ["1.5*x+0.0625", "-x^2+x", "x^2-x", "1.5*x-1.5625"],
        1.5,
    )


# ---------------------------------------------------------------------------
# Schedules, fields, windows


def test_schedule_construction_and_validation():
    sch = SubdivisionSchedule.uniform(1.0, 4)
    assert sch.n_steps == 4
    assert sch.mesh == pytest.approx(0.25)
    assert sch.times[0] == 0.0 and sch.times[-1] == 1.0
    with pytest.raises(ValueError, match="at least one step"):
        SubdivisionSchedule.uniform(1.0, 0)
    with pytest.raises(ValueError, match="increase strictly"):
        SubdivisionSchedule(np.array([0.0, 0.5, 0.5]))
    with pytest.raises(ValueError, match="at least two"):
        SubdivisionSchedule(np.array([0.0]))


def test_make_field_validation_and_moduli():
    times = np.array([0.0, 0.5])
    xg = np.array([0.0, 1.0])
    with pytest.raises(ValueError, match="shape"):
        make_field(times, xg, np.zeros((3, 2)), "bad")
    with pytest.raises(FloatingPointError):
        make_field(times, xg, np.array([[0.0, np.nan], [0.0, 0.0]]), "bad")
    f = make_field(times, xg, np.array([[0.0, 2.0], [1.0, 2.0]]), "ok")
    assert f.lip_space == pytest.approx(2.0)
    assert f.lip_time == pytest.approx(2.0)


def test_sample_at_time_exact_and_interpolated():
    f = make_field(np.array([0.0, 0.5, 1.0]), np.array([0.0, 1.0]),
                   np.array([[0.0, 0.0], [1.0, 2.0], [3.0, 6.0]]), "f")
    assert sample_at_time(f, 0.5) == pytest.approx([1.0, 2.0])
    assert sample_at_time(f, 0.75) == pytest.approx([2.0, 4.0])
    with pytest.raises(ValueError, match="outside"):
        sample_at_time(f, 1.5)


def test_momentum_window_uses_one_sided_slope_hull():
    win = momentum_window(CUBIC, double_well_v(), 0.75, (-1.0, 1.0))
    # slopes of the datum span [-1, 1.5]; H is state-free so no drift
    assert win["y_lo"] == pytest.approx(-1.0, abs=1e-6)
    assert win["y_hi"] == pytest.approx(1.5, abs=1e-6)
    assert win["max_Hx"] == 0.0
    # |H'| = |-3p^2+2p+1| peaks at p = -1 on the window: 4, plus 5% headroom
    assert win["speed"] == pytest.approx(4.2, rel=1e-3)
    assert win["max_H"] == pytest.approx(1.0, rel=1e-3)


def test_step_gate_for_state_dependent_hamiltonian():
    xg = np.linspace(-0.2, 0.2, 3)
    v = PiecewiseFunction.from_expressions([], ["0.2*x"], 0.2)
    # delta_H = ln 2 / c_H = 0.3466 for c_H = 2; 0.35 exceeds the 90% gate
    with pytest.raises(ValueError, match="subdivide"):
        step_operator(ROTATION, v, 0.0, 0.35, xg, FlowConfig(1e-3))
    with pytest.raises(ValueError, match="backwards"):
        step_operator(FREE, v, 0.5, 0.2, xg, CFG)


def test_step_operator_zero_length_step_returns_data():
    xg = np.linspace(-1.0, 1.0, 5)
    st = step_operator(FREE, vee(), 0.3, 0.3, xg, CFG)
    assert st.values == pytest.approx(vee()(xg))
    assert st.tolerance == 0.0 and st.value_error == 0.0


def test_step_operator_snaps_with_tiny_value_error():
    xg = np.linspace(-1.0, 1.0, 21)
    st = step_operator(FREE, vee(), 0.0, 1.0, xg, CFG)
    assert st.values == pytest.approx(-np.abs(xg) - 0.5, abs=1e-9)
    assert st.tolerance > 0.0
    assert st.value_error <= 1e-8
    assert len(st.diagnostics) == xg.size


# ---------------------------------------------------------------------------
# Iteration


def test_iterate_single_step_matches_step_operator():
    xg = np.linspace(-1.0, 1.0, 21)
    fld = iterate(FREE, vee(), SubdivisionSchedule.uniform(1.0, 1), xg, CFG)
    st = step_operator(FREE, vee(), 0.0, 1.0, xg, CFG)
    assert np.max(np.abs(fld.u[1] - st.values)) <= 1e-7
    assert fld.scheme == "minmax_1step"


def test_iterate_convex_shock_is_exact_at_every_time():
    # closed form u(t, x) = -|x| - t/2; kink on a node, branches linear, so
    # solve + snap + resample compound to machine precision
    xg = np.linspace(-1.0, 1.0, 21)
    fld = iterate(FREE, vee(), SubdivisionSchedule.uniform(1.0, 4), xg, CFG)
    assert fld.scheme == "iterated(n=4)"
    for k, t in enumerate(fld.times):
        exact = -np.abs(xg) - 0.5 * float(t)
        assert np.max(np.abs(fld.u[k] - exact)) <= 1e-9


def test_iterate_rejects_nonuniform_grid():
    with pytest.raises(ValueError, match="uniform"):
        iterate(FREE, vee(), SubdivisionSchedule.uniform(1.0, 2),
                np.array([0.0, 0.1, 0.3]), CFG)


def test_resample_step_recovers_off_node_corner():
    # datum kink at x = 0.013 stays off every node of the 0.05-pitch grid;
    # plain linear resampling cuts the moving corner by ~2e-2, the secant
    # refinement pins it exactly (two locally linear branches)
    voff = PiecewiseFunction.from_expressions(
        [0.013], ["x-0.013", "-(x-0.013)"], 1.0)
    xs, _ = _padded_grid(np.linspace(-1.0, 1.0, 41), 1.0)
    st = step_operator(FREE, voff, 0.0, 0.5, xs, CFG)
    plain = PiecewiseFunction.from_samples(xs, st.values)
    refined = resample_step(FREE, voff, 0.0, 0.5, xs, st.values, CFG)
    probe = np.linspace(-0.5, 0.5, 2001)
    exact = -np.abs(probe - 0.013) - 0.25
    assert np.max(np.abs(plain(probe) - exact)) > 5e-3
    assert np.max(np.abs(refined(probe) - exact)) <= 1e-9


def test_resample_step_smooth_data_adds_no_nodes():
    xs = np.linspace(-1.0, 1.0, 41)
    values = 0.1 * xs
    datum = resample_step(FREE, vee(), 0.0, 0.5, xs, values, CFG)
    assert np.max(np.abs(datum(xs) - values)) <= 1e-12
    assert len(datum.kink_points()) == 0


# ---------------------------------------------------------------------------
# Semigroup defect and Lipschitz diagnostics


def test_semigroup_defect_validates_times():
    xg = np.linspace(-1.0, 1.0, 5)
    with pytest.raises(ValueError, match="0 < s < t"):
        semigroup_defect(FREE, vee(), 0.0, 1.0, xg, CFG)


def test_semigroup_defect_vanishes_for_convex_case():
    xg = np.linspace(-1.0, 1.0, 21)
    d = semigroup_defect(FREE, vee(), 0.5, 1.0, xg, CFG)
    assert d <= 1e-4


def test_semigroup_defect_positive_for_cubic_case():
    # measured 3.6e-3 on this grid; the failure of the one-step semigroup
    # property is what iteration repairs
    xg = np.linspace(-1.0, 1.0, 41)
    d = semigroup_defect(CUBIC, double_well_v(), 0.375, 0.75, xg, CFG)
    assert 2e-3 <= d <= 1e-2


def test_convergence_study_rows_and_validation():
    from hjminmax.scheme import convergence_study

    xg = np.linspace(-1.0, 1.0, 21)
    times = np.linspace(0.0, 1.0, 5)
    exact = make_field(times, xg,
                       np.array([-np.abs(xg) - 0.5 * t for t in times]),
                       "closed_form")
    schedules = [SubdivisionSchedule.uniform(1.0, n) for n in (1, 2, 4)]
    rows = convergence_study(FREE, vee(), schedules, xg, exact, CFG,
                             target=1e-6)
    assert [r.n_steps for r in rows] == [1, 2, 4]
    assert rows[0].rate is None
    # exact up to the noise of nearly-merged critical values near the shock
    assert all(r.sup_error <= 1e-4 for r in rows)
    with pytest.raises(ValueError, match="decrease"):
        convergence_study(FREE, vee(), schedules[::-1], xg, exact, CFG,
                          target=1e-6)
    other = make_field(times, xg + 1.0, exact.u, "shifted")
    with pytest.raises(ValueError, match="share"):
        convergence_study(FREE, vee(), schedules, xg, other, CFG, target=1e-6)


def test_lipschitz_report_within_a_priori_bounds():
    xg = np.linspace(-1.0, 1.0, 41)
    fld = iterate(CUBIC, double_well_v(), SubdivisionSchedule.uniform(0.75, 2),
                  xg, CFG)
    rep = lipschitz_report(fld, CUBIC, double_well_v(), value_tol=1e-6)
    assert rep["space_ok"] and rep["time_ok"]
    assert rep["lip_space_measured"] <= rep["lip_space_bound"] + 0.2
    assert rep["lip_time_measured"] <= rep["lip_time_bound"] + 0.2
