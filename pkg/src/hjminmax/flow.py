"""Characteristic flow of H(t, x, p) and the one-step generating function.

Hamilton's equations are integrated with the sign convention

    xdot = dH/dp(tau, x, y),    ydot = -dH/dx(tau, x, y)

by classical fixed-step RK4 (the last partial step is shortened so the sweep
lands exactly on the requested time; reverse time just negates the step).
The same sweep can accumulate the action integral

    action = integral_s^t (Y Xdot - H) dtau

along the trajectory, which is the critical value increment of the one-step
variational family.  The generating function of the step,

    phi_s^t(X, y) = integral_s^t ((Y - y) Xdot - H) dtau
                  = action - y (X - x0),

is evaluated along the characteristic that *arrives* at position X with
initial momentum y; its starting point x0 is recovered by inverting
x0 |-> X_s^t(x0, y) with a damped Newton iteration.  That inversion is a
diffeomorphism only for |t - s| below delta_H = ln2 / c_H, where c_H bounds
the second derivatives of H in (x, p); models flagged ``p_only`` (H = H(p))
bypass the restriction because X = x0 + (t-s) H'(y) is globally invertible.

Models carrying a ``p_only`` flag also take exact closed-form shortcuts
(momentum is conserved, so flow, action and phi are all explicit); the RK4
path reproduces them to rounding, which the tests check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from hjminmax.expressions import Expression, eval_plain, eval_with_grad, parse

__all__ = [
    "HamiltonianModel",
    "PhasePoint",
    "FlowConfig",
    "flow",
    "flow_batch",
    "flow_with_action",
    "flow_with_action_batch",
    "alpha_inverse",
    "alpha_inverse_batch",
    "generating_function_phi",
    "phi_batch",
    "verify_phi_derivatives",
    "check_cH_bound",
    "sample_bounds",
    "spot_check_p_only",
    "spot_check_convex_in_p",
]


@dataclass(frozen=True)
class HamiltonianModel:
    """Hamiltonian evaluator plus user-declared bounds and structure flags."""

    expr: Expression
    c_H_bound: float
    support_radius: float | None = None  # None means unbounded
    p_only: bool = False
    convex_in_p: bool = False

    def __post_init__(self):
        if not self.c_H_bound > 0:
            raise ValueError(f"c_H_bound must be positive, got {self.c_H_bound}")

    @classmethod
    def from_source(cls, source: str, c_H_bound: float, **flags) -> "HamiltonianModel":
        return cls(parse(source), c_H_bound, **flags)

    @property
    def delta_H(self) -> float:
        """Short-time threshold ln2 / c_H for the generating-function step."""
        return math.log(2.0) / self.c_H_bound

    def value(self, t, x, p):
        return eval_plain(self.expr, t, x, p)

    def grad(self, t, x, p):
        """(H, dH/dt, dH/dx, dH/dp)."""
        return eval_with_grad(self.expr, t, x, p)


@dataclass(frozen=True)
class PhasePoint:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite phase point ({self.x}, {self.y})")


@dataclass(frozen=True)
class FlowConfig:
    step: float
    newton_tol: float = 1e-10
    newton_max_iter: int = 60
    method: str = "RK4"

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError(f"integrator step must be positive, got {self.step}")
        if self.method != "RK4":
            raise ValueError(f"only method 'RK4' is supported, got {self.method!r}")


def _check_step(model: HamiltonianModel, cfg: FlowConfig) -> None:
    limit = model.delta_H / 8.0
    if cfg.step > limit * (1.0 + 1e-12):
        raise ValueError(
            f"integrator step {cfg.step} exceeds delta_H/8 = {limit:.6g} "
            f"(c_H_bound {model.c_H_bound})"
        )


# ---------------------------------------------------------------------------
# RK4 sweep (scalars or same-shape arrays), with action accumulation


def _rk4_sweep(model: HamiltonianModel, s: float, t: float, x, y, cfg: FlowConfig):
    """Integrate from s to t; returns (X, Y, action) as floats/arrays."""
    expr = model.expr

    def rhs(tau, xx, yy):
        val, _, dx, dp = eval_with_grad(expr, tau, xx, yy)
        return dp, -dx, yy * dp - val

    x = x + 0.0
    y = y + 0.0
    action = x * 0.0
    span = t - s
    if span == 0.0:
        return x, y, action
    n = max(1, int(math.ceil(abs(span) / cfg.step - 1e-12)))
    sign = 1.0 if span > 0 else -1.0
    tau = s
    for i in range(n):
        h = (t - tau) if i == n - 1 else sign * cfg.step
        k1x, k1y, k1a = rhs(tau, x, y)
        k2x, k2y, k2a = rhs(tau + 0.5 * h, x + 0.5 * h * k1x, y + 0.5 * h * k1y)
        k3x, k3y, k3a = rhs(tau + 0.5 * h, x + 0.5 * h * k2x, y + 0.5 * h * k2y)
        k4x, k4y, k4a = rhs(tau + h, x + h * k3x, y + h * k3y)
        x = x + (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        y = y + (h / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        action = action + (h / 6.0) * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
        tau += h
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise FloatingPointError(
                f"non-finite state during flow integration at tau={tau:.6g}"
            )
    return x, y, action


def _p_only_sweep(model: HamiltonianModel, s: float, t: float, x, y):
    """Closed form for H = H(p): momentum is conserved, xdot is constant."""
    val, _, _, dp = eval_with_grad(model.expr, 0.0, 0.0, y)
    span = t - s
    X = x + span * dp
    action = span * (y * dp - val)
    return X, y + (x * 0.0), action


def flow_with_action_batch(model, s, t, x, y, cfg):
    """(X, Y, action) arrays for arrays of initial conditions."""
    _check_step(model, cfg)
    if model.p_only:
        return _p_only_sweep(model, s, t, x, y)
    return _rk4_sweep(model, s, t, x, y, cfg)


def flow_batch(model, s, t, x, y, cfg):
    X, Y, _ = flow_with_action_batch(model, s, t, x, y, cfg)
    return X, Y


def flow(model: HamiltonianModel, s: float, t: float, z: PhasePoint, cfg: FlowConfig) -> PhasePoint:
    X, Y = flow_batch(model, s, t, z.x, z.y, cfg)
    return PhasePoint(float(X), float(Y))


def flow_with_action(model, s, t, z: PhasePoint, cfg) -> tuple[PhasePoint, float]:
    X, Y, action = flow_with_action_batch(model, s, t, z.x, z.y, cfg)
    return PhasePoint(float(X), float(Y)), float(action)


# ---------------------------------------------------------------------------
# Inverting x0 |-> X_s^t(x0, y)


def _require_short_step(model, s, t, op: str) -> None:
    if model.p_only:
        return
    if abs(t - s) >= model.delta_H:
        raise ValueError(
            f"{op} needs |t-s| < delta_H = {model.delta_H:.6g} "
            f"(got |t-s| = {abs(t - s):.6g}); only p-only Hamiltonians "
            "admit larger steps"
        )


def alpha_inverse(model, s, t, X: float, y: float, cfg) -> float:
    """Starting position x0 with X_s^t(x0, y) = X, by damped Newton from X."""
    _check_step(model, cfg)
    _require_short_step(model, s, t, "alpha_inverse")
    if model.p_only:
        _, _, _, dp = eval_with_grad(model.expr, 0.0, 0.0, y)
        return float(X - (t - s) * dp)

    def end_x(x0):
        Xe, _, _ = _rk4_sweep(model, s, t, x0, y, cfg)
        return Xe

    x0 = float(X)
    r = end_x(x0) - X
    for _ in range(cfg.newton_max_iter):
        if abs(r) <= cfg.newton_tol:
            return x0
        h = 1e-6 * (1.0 + abs(x0))
        slope = (end_x(x0 + h) - end_x(x0 - h)) / (2.0 * h)
        if slope == 0.0:
            slope = 1.0
        step = -r / slope
        lam = 1.0
        x_new, r_new = x0, r
        for _ in range(30):
            x_new = x0 + lam * step
            r_new = end_x(x_new) - X
            if abs(r_new) < abs(r):
                break
            lam *= 0.5
        x0, r = x_new, r_new
    raise RuntimeError(
        f"alpha_inverse Newton failed to reach tol {cfg.newton_tol} after "
        f"{cfg.newton_max_iter} iterations (residual {r:.3g}); |t-s| too "
        "large or c_H_bound too optimistic"
    )


def alpha_inverse_batch(model, s, t, X, y, cfg):
    """Vectorized alpha_inverse; X scalar or array, y array (same shape out)."""
    _check_step(model, cfg)
    _require_short_step(model, s, t, "alpha_inverse")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if model.p_only:
        _, _, _, dp = eval_with_grad(model.expr, 0.0, 0.0, y)
        return X - (t - s) * dp

    x0 = np.broadcast_to(X, np.broadcast_shapes(X.shape, y.shape)).astype(float).copy()
    yb = np.broadcast_to(y, x0.shape)
    target = np.broadcast_to(X, x0.shape)
    r = _rk4_sweep(model, s, t, x0, yb, cfg)[0] - target
    for _ in range(cfg.newton_max_iter):
        if np.max(np.abs(r)) <= cfg.newton_tol:
            return x0
        h = 1e-6 * (1.0 + np.abs(x0))
        rp = _rk4_sweep(model, s, t, x0 + h, yb, cfg)[0] - target
        rm = _rk4_sweep(model, s, t, x0 - h, yb, cfg)[0] - target
        slope = (rp - rm) / (2.0 * h)
        slope = np.where(slope == 0.0, 1.0, slope)
        x0 = x0 - r / slope
        r = _rk4_sweep(model, s, t, x0, yb, cfg)[0] - target
    raise RuntimeError(
        f"batch alpha_inverse failed: max residual {np.max(np.abs(r)):.3g} "
        f"after {cfg.newton_max_iter} Newton iterations"
    )


# ---------------------------------------------------------------------------
# Generating function of one step


def generating_function_phi(model, s, t, X: float, y: float, cfg) -> float:
    """phi_s^t(X, y) along the characteristic arriving at X."""
    x0 = alpha_inverse(model, s, t, X, y, cfg)
    Xe, _, action = flow_with_action_batch(model, s, t, x0, y, cfg)
    return float(action - y * (Xe - x0))


def phi_batch(model, s, t, X, y, cfg):
    """Vectorized phi; broadcasts X against an array of momenta y."""
    x0 = alpha_inverse_batch(model, s, t, X, y, cfg)
    yb = np.broadcast_to(np.asarray(y, dtype=float), x0.shape)
    Xe, _, action = flow_with_action_batch(model, s, t, x0, yb, cfg)
    return action - yb * (Xe - x0)


def verify_phi_derivatives(model, s, t, sample_points, cfg, fd_step: float = 1e-4,
                           tolerance: float = 1e-5) -> dict:
    """Check d(phi)/ds = H(s, x0, y) and d(phi)/dt = -H(t, X, Y) by central FD.

    sample_points is an iterable of (X, y) pairs; returns a report dict, never
    raises on discrepancies.
    """
    h = fd_step
    rows = []
    for X, y in sample_points:
        x0 = alpha_inverse(model, s, t, X, y, cfg)
        _, Y_end, _ = flow_with_action_batch(model, s, t, x0, y, cfg)
        ds_num = (
            generating_function_phi(model, s + h, t, X, y, cfg)
            - generating_function_phi(model, s - h, t, X, y, cfg)
        ) / (2.0 * h)
        dt_num = (
            generating_function_phi(model, s, t + h, X, y, cfg)
            - generating_function_phi(model, s, t - h, X, y, cfg)
        ) / (2.0 * h)
        ds_exact = float(model.value(s, x0, y))
        dt_exact = -float(model.value(t, X, float(Y_end)))
        rows.append(
            {
                "X": float(X),
                "y": float(y),
                "ds_numeric": float(ds_num),
                "ds_exact": ds_exact,
                "dt_numeric": float(dt_num),
                "dt_exact": dt_exact,
            }
        )
    max_s = max((abs(r["ds_numeric"] - r["ds_exact"]) for r in rows), default=0.0)
    max_t = max((abs(r["dt_numeric"] - r["dt_exact"]) for r in rows), default=0.0)
    return {
        "fd_step": h,
        "tolerance": tolerance,
        "max_s_discrepancy": max_s,
        "max_t_discrepancy": max_t,
        "pass": bool(max_s <= tolerance and max_t <= tolerance),
        "samples": rows,
    }


# ---------------------------------------------------------------------------
# Sampled bounds on H and its derivatives


def _box_grids(box, samples: int):
    (t0, t1), (x0, x1), (p0, p1) = box
    ts = np.linspace(t0, t1, samples)
    xs = np.linspace(x0, x1, samples)
    ps = np.linspace(p0, p1, samples)
    return np.meshgrid(ts, xs, ps, indexing="ij")


def check_cH_bound(model: HamiltonianModel, box, samples: int = 9) -> float:
    """Max operator norm of the FD Hessian of H in (x, p) over a sampled box.

    box = ((t0, t1), (x0, x1), (p0, p1)).  Raises if the measured value
    exceeds the declared c_H_bound by more than 5%.
    """
    T, Xg, Pg = _box_grids(box, samples)
    hx = 1e-4 * (1.0 + np.max(np.abs(Xg)))
    hp = 1e-4 * (1.0 + np.max(np.abs(Pg)))

    def H(xo, po):
        return eval_plain(model.expr, T, Xg + xo, Pg + po)

    h00 = H(0.0, 0.0)
    hxx = (H(hx, 0.0) - 2.0 * h00 + H(-hx, 0.0)) / hx**2
    hpp = (H(0.0, hp) - 2.0 * h00 + H(0.0, -hp)) / hp**2
    hxp = (H(hx, hp) - H(hx, -hp) - H(-hx, hp) + H(-hx, -hp)) / (4.0 * hx * hp)
    mean = 0.5 * (hxx + hpp)
    rad = np.sqrt((0.5 * (hxx - hpp)) ** 2 + hxp**2)
    measured = float(np.max(np.abs(mean) + rad))
    if measured > model.c_H_bound * 1.05:
        raise ValueError(
            f"declared c_H_bound {model.c_H_bound} violated: measured "
            f"sup|D^2 H| = {measured:.6g} on the sampled box"
        )
    return measured


def sample_bounds(model: HamiltonianModel, box, samples: int = 9) -> dict:
    """Sampled sup of |H|, |dH/dx|, |dH/dp| over box = ((t0,t1),(x0,x1),(p0,p1))."""
    T, Xg, Pg = _box_grids(box, samples)
    val, _, dx, dp = eval_with_grad(model.expr, T, Xg, Pg)
    zero = np.zeros_like(T)
    return {
        "max_H": float(np.max(np.abs(val + zero))),
        "max_Hx": float(np.max(np.abs(dx + zero))),
        "max_Hp": float(np.max(np.abs(dp + zero))),
    }


def spot_check_p_only(model: HamiltonianModel, box, samples: int = 5,
                      tol: float = 1e-9) -> None:
    """Raise unless dH/dt and dH/dx vanish on a sample grid (p_only models)."""
    if not model.p_only:
        return
    T, Xg, Pg = _box_grids(box, samples)
    _, dt, dx, _ = eval_with_grad(model.expr, T, Xg, Pg)
    worst = max(float(np.max(np.abs(dt + 0.0 * T))), float(np.max(np.abs(dx + 0.0 * T))))
    if worst > tol:
        raise ValueError(
            f"model is flagged p_only but |dH/dt|, |dH/dx| reach {worst:.3g} "
            "on the sampled box"
        )


def spot_check_convex_in_p(model: HamiltonianModel, box, samples: int = 9,
                           tol: float = 1e-8) -> None:
    """Raise unless the second difference of H in p is nonnegative on a grid."""
    if not model.convex_in_p:
        return
    T, Xg, Pg = _box_grids(box, samples)
    hp = 1e-4 * (1.0 + np.max(np.abs(Pg)))
    second = (
        eval_plain(model.expr, T, Xg, Pg + hp)
        - 2.0 * eval_plain(model.expr, T, Xg, Pg)
        + eval_plain(model.expr, T, Xg, Pg - hp)
    ) / hp**2
    worst = float(np.min(second + 0.0 * T))
    if worst < -tol:
        raise ValueError(
            f"model is flagged convex_in_p but d^2H/dp^2 reaches {worst:.3g} "
            "on the sampled box"
        )
