"""Tests for piecewise initial data, one-step families, critical points,
wavefronts, and the certified fiber box."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hjminmax.family import (
    CertificationError,
    OneStepFamily,
    PiecewiseFunction,
    critical_points,
    critical_points_batch,
    deep_components,
    eval_S,
    fiber_box,
    fiber_values,
    wavefront,
    _phi_row,
    _phi_row_clamped,
)
from hjminmax.flow import FlowConfig, HamiltonianModel

CFG = FlowConfig(5e-3)
FREE = HamiltonianModel.from_source("p^2/2", 1.0, p_only=True, convex_in_p=True)
CUBIC = HamiltonianModel.from_source("-p^3+p^2+p", 11.0, p_only=True)
ROTATION = HamiltonianModel.from_source("x^2+p^2", 2.0)


def vee():
    return PiecewiseFunction.from_expressions([0.0], ["x", "-x"], 1.0)


def double_well_v():
    # C^0 datum: quadratic bumps with slope clamped to +-1.5 outside
    return PiecewiseFunction.from_expressions(
        [-0.25, 0.0, 1.25],
        ["1.5*x+0.0625", "-x^2+x", "x^2-x", "1.5*x-1.5625"],
        1.5,
    )


# ---------------------------------------------------------------------------
# PiecewiseFunction


def test_piecewise_eval_and_derivative():
    v = vee()
    xs = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
    assert np.allclose(v(xs), [-2.0, -0.5, 0.0, -0.5, -2.0])
    assert v(0.25) == pytest.approx(-0.25)
    assert v.derivative(-1.0) == pytest.approx(1.0)
    assert v.derivative(1.0) == pytest.approx(-1.0)


def test_piecewise_continuity_enforced():
    with pytest.raises(ValueError, match="disagree"):
        PiecewiseFunction.from_expressions([0.0], ["x+1", "-x"], 1.0)


def test_piecewise_breakpoints_must_increase():
    with pytest.raises(ValueError, match="increasing"):
        PiecewiseFunction.from_expressions([1.0, 0.0], ["x", "x", "x"], 1.0)


def test_piecewise_rejects_extra_variables():
    with pytest.raises(ValueError, match="may only use x"):
        PiecewiseFunction.from_expressions([], ["x+p"], 1.0)


def test_clarke_interval_and_kinks():
    v = vee()
    assert v.clarke_interval(0.0) == (-1.0, 1.0)
    assert v.one_sided_slopes(0.0) == (1.0, -1.0)
    assert list(v.kink_points()) == [0.0]
    w = double_well_v()
    # slope-matched joints at -0.25 and 1.25 are not kinks
    assert list(w.kink_points()) == [0.0]
    assert w.clarke_interval(0.0) == (-1.0, 1.0)


def test_lipschitz_validation():
    v = vee()
    assert v.validate_lipschitz((-3.0, 3.0)) == pytest.approx(1.0)
    bad = PiecewiseFunction.from_expressions([], ["x^2"], 1.0)
    with pytest.raises(ValueError, match="lipschitz"):
        bad.validate_lipschitz((-3.0, 3.0))


def test_sampled_linear_matches_expression_data():
    v = vee()
    xs = np.linspace(-2.0, 2.0, 161)
    w = PiecewiseFunction.from_samples(xs, v(xs))
    probe = np.linspace(-1.9, 1.9, 401)
    assert np.allclose(w(probe), v(probe), atol=1e-12)
    assert w.lipschitz_bound == pytest.approx(1.0)
    # extrapolation continues the end slopes
    assert w(-3.0) == pytest.approx(-3.0)
    assert w(3.0) == pytest.approx(-3.0)
    assert w.is_piecewise_linear()
    kinks = w.kink_points()
    assert len(kinks) == 1 and kinks[0] == pytest.approx(0.0)


def test_sampled_linear_clarke():
    xs = np.array([0.0, 1.0, 2.0])
    w = PiecewiseFunction.from_samples(xs, np.array([0.0, 2.0, 1.0]))
    assert w.clarke_interval(1.0) == (-1.0, 2.0)
    assert w.lipschitz_bound == pytest.approx(2.0)


# ---------------------------------------------------------------------------
# eval_S and critical points


def test_eval_S_free_closed_form():
    fam = OneStepFamily(0.0, 1.0, FREE, vee(), CFG)
    # S = v(x0) - t y0^2/2 + (x - x0) y0
    x0, y0 = 0.3, -0.4
    expect = -0.3 - 0.08 + (0.7 - 0.3) * (-0.4)
    assert eval_S(fam, 0.7, x0, y0) == pytest.approx(expect, abs=1e-12)


def test_plane_wave_single_critical_point():
    v = PiecewiseFunction.from_expressions([], ["0.5*x"], 0.5)
    fam = OneStepFamily(0.0, 1.0, FREE, v, CFG)
    cps = critical_points(fam, 0.7)
    assert len(cps) == 1
    cp = cps[0]
    assert cp.x0 == pytest.approx(0.2, abs=1e-9)
    assert cp.y0 == pytest.approx(0.5, abs=1e-12)
    assert cp.value == pytest.approx(0.5 * 0.7 - 0.5 * 0.25, abs=1e-10)
    assert not cp.from_kink


def test_rarefaction_criticals_expression_and_sampled():
    # v = -|x|, H = p^2/2, t = 1: two smooth branches and the kink fan
    for v in (vee(), PiecewiseFunction.from_samples(
            np.linspace(-3, 3, 241), -np.abs(np.linspace(-3, 3, 241)))):
        fam = OneStepFamily(0.0, 1.0, FREE, v, CFG)
        cps = critical_points(fam, 0.4)
        got = sorted((round(c.value, 9), c.from_kink) for c in cps)
        assert got == [(-0.9, False), (-0.1, False), (0.08, True)]
        for c in cps:
            # residual check: the characteristic really arrives at x
            assert c.x0 + 1.0 * c.y0 == pytest.approx(0.4, abs=1e-8)


def test_identity_step_criticals():
    fam = OneStepFamily(0.5, 0.5, FREE, vee(), CFG)
    cps = critical_points(fam, 0.3)
    assert len(cps) == 1
    assert cps[0].value == pytest.approx(-0.3, abs=1e-12)
    assert cps[0].x0 == pytest.approx(0.3)


def test_cubic_kinked_criticals_hand_values():
    # H = -p^3 + p^2 + p, tau = 1/4, kink at 0 with Clarke interval [-1, 1]
    fam = OneStepFamily(0.0, 0.25, CUBIC, double_well_v(), FlowConfig(5e-3))
    cps = critical_points(fam, 1.0)
    got = sorted(round(c.value, 10) for c in cps)
    # smooth branches: x0 = 2/3 (value -2/9 + 1/108), x0 = 1 (value -1/4),
    # x0 = 27/16 on the clamped piece (value -5/32)
    assert got == pytest.approx([-0.25, -2.0 / 9.0 + 1.0 / 108.0, -5.0 / 32.0],
                                abs=1e-9)
    cps0 = critical_points(fam, 0.0)
    fan = sorted(round(c.value, 10) for c in cps0 if c.from_kink)
    # fan roots solve H'(y) = 0: y = 1 (value -1/4), y = -1/3 (value 5/108)
    assert fan == pytest.approx([-0.25, 5.0 / 108.0], abs=1e-9)


def test_cubic_fast_path_matches_generic():
    # the same piecewise-linear datum via expressions (generic sweep) and
    # via samples (closed-form path) must give identical critical sets
    xs = np.linspace(-2.0, 2.0, 321)
    v_expr = vee()
    v_lin = PiecewiseFunction.from_samples(xs, v_expr(xs))
    fam_e = OneStepFamily(0.0, 0.2, CUBIC, v_expr, FlowConfig(5e-3))
    fam_l = OneStepFamily(0.0, 0.2, CUBIC, v_lin, FlowConfig(5e-3))
    for x in (-0.7, -0.1, 0.0, 0.33, 0.9):
        a = sorted(round(c.value, 8) for c in critical_points(fam_e, x))
        b = sorted(round(c.value, 8) for c in critical_points(fam_l, x))
        assert a == pytest.approx(b, abs=1e-7)


def test_batch_matches_single():
    fam = OneStepFamily(0.0, 1.0, FREE, vee(), CFG)
    xs = np.array([-0.3, 0.0, 0.4, 1.1])
    batch = critical_points_batch(fam, xs)
    for i, x in enumerate(xs):
        single = critical_points(fam, float(x))
        assert batch[i][2].size == len(single)
        assert sorted(batch[i][2]) == pytest.approx(
            sorted(c.value for c in single), abs=1e-10)


def test_rotation_criticals_via_rk4():
    # H = x^2 + p^2, v = 0.2 x, short step: single critical point whose
    # characteristic must arrive at x (residual via the flow itself)
    from hjminmax.flow import flow_batch

    v = PiecewiseFunction.from_expressions([], ["0.2*x"], 0.2)
    fam = OneStepFamily(0.0, 0.3, ROTATION, v, FlowConfig(1e-3))
    cps = critical_points(fam, 0.5)
    assert len(cps) == 1
    cp = cps[0]
    assert cp.y0 == pytest.approx(0.2, abs=1e-12)
    X, _ = flow_batch(ROTATION, 0.0, 0.3, cp.x0, cp.y0, FlowConfig(1e-3))
    assert float(X) == pytest.approx(0.5, abs=1e-8)


def test_wavefront_rows():
    fam = OneStepFamily(0.0, 1.0, FREE, vee(), CFG)
    rows = wavefront(fam, (-0.5, 0.5), 5)
    assert all(len(r) == 4 for r in rows)
    xs = sorted({r[0] for r in rows})
    assert xs == pytest.approx(np.linspace(-0.5, 0.5, 5))
    at_zero = [r for r in rows if abs(r[0]) < 1e-12]
    assert sorted(round(r[1], 9) for r in at_zero) == [-0.5, -0.5, 0.0]
    assert any(r[3] for r in at_zero)  # the fan branch is flagged


@given(x=st.floats(-1.0, 1.0), t=st.floats(0.05, 1.0))
@settings(max_examples=25, deadline=None)
def test_rarefaction_criticals_property(x, t):
    # smooth branches at x0 = x -+ t (value -|x0| + t/2) whenever the
    # characteristic starts on the matching side, fan root when |x| <= t
    fam = OneStepFamily(0.0, t, FREE, vee(), CFG)
    cps = critical_points(fam, x)
    vals = {}
    for c in cps:
        vals.setdefault(c.from_kink, []).append(c.value)
    expected_smooth = []
    if x - t < 0:
        expected_smooth.append(-(abs(x - t)) + t / 2.0)
    if x + t > 0:
        expected_smooth.append(-(abs(x + t)) + t / 2.0)
    assert sorted(vals.get(False, [])) == pytest.approx(
        sorted(expected_smooth), abs=1e-8)
    if abs(x) < t - 1e-9:
        assert vals.get(True) == pytest.approx([x * x / (2.0 * t)], abs=1e-8)


# ---------------------------------------------------------------------------
# Fiber box


def test_fiber_box_corner_components_certify():
    fam = OneStepFamily(0.0, 1.0, FREE, vee(), CFG)
    box = fiber_box(fam, (-1.0, 1.0))
    assert box.resolution == 257
    for x in (-1.0, 0.0, 1.0):
        vals = fiber_values(fam, float(x), box)
        pos, neg = deep_components(vals, box.lam)
        assert pos.any() and neg.any()
        assert not (pos & neg).any()
        # the ends hold their corners and everything inside them is deep
        assert pos[-1, -1] and neg[0, 0]
        assert vals[pos].max() <= -box.lam
        assert vals[neg].max() <= -box.lam


def test_fiber_box_core_contains_criticals_with_margin():
    fam = OneStepFamily(0.0, 1.0, FREE, vee(), CFG)
    box = fiber_box(fam, (-1.0, 1.0))
    for x in np.linspace(-1.0, 1.0, 9):
        for c in critical_points(fam, float(x)):
            assert abs(c.x0 - float(x)) <= box.core_xi / 1.2
            assert abs(c.y0) <= box.core_y0 / 1.2
    assert box.y_cap >= box.core_y0


def test_phi_clamp_inactive_inside_linear_outside():
    fam = OneStepFamily(0.0, 0.25, CUBIC, double_well_v(), CFG)
    box = fiber_box(fam, (-1.0, 1.0))
    inside = np.linspace(-box.y_cap, box.y_cap, 9)
    assert np.allclose(_phi_row_clamped(fam, 0.0, inside, box.y_cap),
                       _phi_row(fam, 0.0, inside), atol=1e-12)
    out = np.array([box.y_cap + 0.5, box.y_cap + 1.5, box.y_cap + 2.5,
                    -box.y_cap - 0.5, -box.y_cap - 1.5, -box.y_cap - 2.5])
    ph = _phi_row_clamped(fam, 0.0, out, box.y_cap)
    # equal successive differences on each side: linear extension
    assert ph[2] - ph[1] == pytest.approx(ph[1] - ph[0], abs=1e-6)
    assert ph[5] - ph[4] == pytest.approx(ph[4] - ph[3], abs=1e-6)


def test_fiber_box_resolution_and_widened():
    fam = OneStepFamily(0.0, 1.0, FREE, vee(), CFG)
    box = fiber_box(fam, (-1.0, 1.0), resolution=129)
    assert box.resolution == 129
    assert box.with_resolution(257).resolution == 257
    wide = box.widened()
    assert wide.radius_xi == pytest.approx(2.0 * box.radius_xi)
    assert wide.radius_y0 == pytest.approx(2.0 * box.radius_y0)
    assert wide.lam == box.lam and wide.resolution == box.resolution
