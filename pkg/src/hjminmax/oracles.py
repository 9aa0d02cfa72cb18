"""Independent ground-truth solvers for validating the saddle-value scheme.

Two routes to the viscosity solution that share nothing with the generating
family machinery: a monotone Lax-Friedrichs finite-difference marcher (works
for arbitrary Hamiltonians given a bound on |dH/dp|) and the discrete
min-formula by dynamic programming (convex Hamiltonians only, where the min
over characteristics IS the viscosity solution).  Both operate on a padded
grid sized by the finite propagation speed so the requested window never
feels the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hjminmax.expressions import eval_with_grad
from hjminmax.family import PiecewiseFunction
from hjminmax.flow import HamiltonianModel
from hjminmax.scheme import (
    SolutionField,
    make_field,
    momentum_window,
    _padded_grid,
)

__all__ = [
    "FDConfig",
    "ComparisonReport",
    "fd_viscosity",
    "lax_oleinik_min",
    "compare",
]


@dataclass(frozen=True)
class FDConfig:
    """Lax-Friedrichs parameters: cell size, CFL number, and the artificial
    viscosity coefficient (None = 1.05 x sampled max |dH/dp| on the momentum
    window)."""

    dx: float = 1e-3
    cfl: float = 0.9
    alpha: float | None = None

    def __post_init__(self):
        if self.dx <= 0:
            raise ValueError(f"dx must be positive, got {self.dx}")
        if not 0.0 < self.cfl <= 1.0:
            raise ValueError(f"cfl must lie in (0, 1], got {self.cfl}")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


def _record_times(T: float, record_times) -> np.ndarray:
    extra = [] if record_times is None else np.asarray(record_times, float)
    times = np.unique(np.concatenate([[0.0, T], extra]))
    if times[0] < 0 or times[-1] > T + 1e-12:
        raise ValueError(f"record times must lie in [0, {T}]")
    return times


def fd_viscosity(model: HamiltonianModel, v: PiecewiseFunction, T: float,
                 x_grid, cfg: FDConfig = FDConfig(),
                 record_times=None) -> SolutionField:
    """Monotone Lax-Friedrichs viscosity solution on [0, T] x x_grid.

    Update u <- u - dt [ H(t, x, (D+ + D-)/2) - (alpha/2)(D+ - D-) ] with
    one-sided difference quotients D+-, constant extrapolation at the padded
    boundary, and dt adjusted per segment to land exactly on record times.
    """
    x_grid = np.asarray(x_grid, dtype=float)
    if x_grid.size < 2:
        raise ValueError("x_grid needs at least two points")
    if T < 0:
        raise ValueError(f"horizon must be nonnegative, got {T}")
    times = _record_times(T, record_times)

    win = momentum_window(model, v, T, (x_grid[0], x_grid[-1]))
    speed = win["speed"]
    alpha = cfg.alpha if cfg.alpha is not None else max(speed, 1e-9)
    if alpha + 1e-12 < speed / 1.05:
        raise ValueError(
            f"alpha={alpha:.4g} is below the sampled max |dH/dp| = "
            f"{speed / 1.05:.4g} on the momentum window; scheme would lose "
            f"monotonicity")

    dx = cfg.dx
    # march on the solver's own uniform grid at cfg.dx, padded by the
    # propagation reach; sample back onto x_grid at the end
    lo, hi = float(x_grid[0]), float(x_grid[-1])
    reach = T * speed + 0.25 + 4.0 * dx
    n_cells = int(np.ceil((hi - lo) / dx))
    xs = lo + dx * np.arange(-int(np.ceil(reach / dx)),
                             n_cells + int(np.ceil(reach / dx)) + 1)
    u = np.asarray(v(xs), dtype=float)

    dt_max = cfg.cfl * dx / alpha
    rows = []
    t_now = 0.0
    for t_rec in times:
        seg = float(t_rec) - t_now
        if seg > 1e-14:
            n_steps = max(1, int(np.ceil(seg / dt_max)))
            dt = seg / n_steps
            for _ in range(n_steps):
                dplus = np.empty_like(u)
                dminus = np.empty_like(u)
                dplus[:-1] = (u[1:] - u[:-1]) / dx
                dplus[-1] = 0.0          # constant extrapolation ghost
                dminus[1:] = dplus[:-1]
                dminus[0] = 0.0
                pm = 0.5 * (dplus + dminus)
                u = u - dt * (model.value(t_now, xs, pm)
                              - 0.5 * alpha * (dplus - dminus))
                t_now += dt
        if not np.all(np.isfinite(u)):
            raise FloatingPointError(f"finite-difference blow-up at t={t_now}")
        rows.append(np.interp(x_grid, xs, u))
    return make_field(times, x_grid, np.array(rows), "fd_viscosity")


# ---------------------------------------------------------------------------
# Discrete min formula (convex Hamiltonians)


def _stage_cost(model: HamiltonianModel, tau: float,
                offsets: np.ndarray) -> np.ndarray:
    """psi_tau(X, z) for X - z = offsets: the action of the characteristic
    joining z to X in time tau, i.e. tau (y q - H(y)) at the momentum y
    with H'(y) = q := offset/tau, found by bisection on the nondecreasing
    derivative of a convex Hamiltonian."""
    q = offsets / tau
    expr = model.expr

    def hp(p):
        _, _, _, dp = eval_with_grad(expr, 0.0, 0.0, p)
        return dp + 0.0 * p

    # bracket: expand until H' covers the requested slopes
    radius = 1.0 + float(np.max(np.abs(q)))
    for _ in range(60):
        if hp(np.array([-radius]))[0] <= q.min() \
                and hp(np.array([radius]))[0] >= q.max():
            break
        radius *= 2.0
    else:
        raise ValueError("could not bracket the momentum of a transition; "
                         "is the Hamiltonian really convex in p?")
    lo = np.full_like(q, -radius)
    hi = np.full_like(q, radius)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        go_right = hp(mid) < q
        lo = np.where(go_right, mid, lo)
        hi = np.where(go_right, hi, mid)
    y = 0.5 * (lo + hi)
    return tau * (y * q - model.value(0.0, 0.0 * y, y))


def lax_oleinik_min(model: HamiltonianModel, v: PiecewiseFunction, s: float,
                    t: float, x_grid, n_sub: int = 1) -> SolutionField:
    """Discrete min-formula solution by dynamic programming on the grid.

    u_{k+1}(x) = min_z [ u_k(z) + psi_tau(x, z) ] over grid predecessors z
    with |x - z| within the propagation reach; valid only for Hamiltonians
    declared convex in p, where this min IS the viscosity solution.
    """
    if not model.convex_in_p:
        raise ValueError("lax_oleinik_min requires a Hamiltonian declared "
                         "convex_in_p")
    if not model.p_only:
        raise ValueError("the min oracle's translation-invariant stage cost "
                         "needs a state-independent (p_only) Hamiltonian")
    if n_sub < 1:
        raise ValueError(f"need at least one stage, got n_sub={n_sub}")
    if t <= s:
        raise ValueError(f"need t > s, got s={s}, t={t}")
    tau = (t - s) / n_sub

    x_grid = np.asarray(x_grid, dtype=float)
    dx = float(x_grid[1] - x_grid[0])
    win = momentum_window(model, v, t - s, (x_grid[0], x_grid[-1]))
    # each stage erodes up to k_max cells of validity at the padded edges
    reach = (t - s) * win["speed"] + 0.25 + (2.0 * n_sub + 4.0) * dx
    xs, _ = _padded_grid(x_grid, reach)
    n = xs.size

    k_max = int(np.ceil((tau * win["speed"] + 2.0 * dx) / dx))
    offsets = dx * np.arange(-k_max, k_max + 1)
    psi = _stage_cost(model, tau, offsets)

    u = np.asarray(v(xs), dtype=float)
    times = [s]
    rows = [np.interp(x_grid, xs, u)]
    for stage in range(n_sub):
        best = np.full(n, np.inf)
        for j, k in enumerate(range(-k_max, k_max + 1)):
            # z = x - k dx: the source row shifted by k cells
            if k >= 0:
                best[k:] = np.minimum(best[k:], u[:n - k] + psi[j])
            else:
                best[:k] = np.minimum(best[:k], u[-k:] + psi[j])
        u = best
        if not np.all(np.isfinite(u)):
            raise FloatingPointError("min formula produced non-finite values")
        times.append(s + (stage + 1) * tau)
        rows.append(np.interp(x_grid, xs, u))
    return make_field(np.array(times), x_grid, np.array(rows), "min_oracle")


# ---------------------------------------------------------------------------
# Field comparison


@dataclass(frozen=True)
class ComparisonReport:
    sup_error: float
    l1_error: float                      # mean absolute error over samples
    worst_point: tuple[float, float]     # (t, x) of the sup
    per_time: list[tuple[float, float]]  # (t, sup at t)


def compare(a: SolutionField, b: SolutionField) -> ComparisonReport:
    """Sup/L1 discrepancy between two fields on identical grids."""
    if not (np.allclose(a.times, b.times, rtol=0, atol=1e-12)
            and np.array_equal(a.x_grid, b.x_grid)):
        raise ValueError("fields must share times and x_grid exactly")
    diff = np.abs(a.u - b.u)
    it, ix = np.unravel_index(int(np.argmax(diff)), diff.shape)
    per_time = [(float(t), float(np.max(diff[k])))
                for k, t in enumerate(a.times)]
    return ComparisonReport(
        sup_error=float(diff[it, ix]),
        l1_error=float(np.mean(diff)),
        worst_point=(float(a.times[it]), float(a.x_grid[ix])),
        per_time=per_time,
    )
