"""One-step variational families for the Hamilton-Jacobi Cauchy problem.

For a Lipschitz piecewise-C^2 initial datum v and a single time step [s, t]
the family over the two-dimensional fiber (x0, y0) is

    S(x; x0, y0) = v(x0) + phi_s^t(x, y0) + (x - x0) y0,

whose fiber-critical points are exactly the characteristics arriving at x:

    X_s^t(x0, y0) = x   with   y0 in dv(x0)

(dv is the Clarke interval [min, max] of one-sided slopes at kinks, the
classical derivative elsewhere), and the critical values are

    v(x0) + integral_s^t (Y Xdot - H) dtau

along those characteristics.  At infinity the family agrees with the
nondegenerate quadratic form Q(x0, y0) = -x0 y0 up to a term with bounded
fiber derivative, which is what makes the saddle (minmax) value well posed.

This module enumerates critical points (smooth branches by sweeping seeds of
x0 and bracketing sign changes of X - x, kink fans by sweeping y0 across the
Clarke interval), samples multivalued wavefronts, and certifies a fiber box.
The box works in base-point-shifted coordinates xi = x0 - x with the values
normalized by v(x), so radii and depth do not drift with |x|.  Outside the
momentum window |y0| <= y_cap (which contains every critical momentum) the
Hamiltonian contribution phi is extended linearly; this finite-propagation
modification leaves every critical value untouched while pinning the far
field to the hyperbolic profile of Q(xi, y0) = -xi y0.  The certificate picks
a depth lambda above the whole core landscape such that the sublevel set
{S - v(x) <= -lambda} splits into two separate connected components holding
the (+, +) and (-, -) grid corners: these are the fixed "ends at -infinity"
between which descending paths of the saddle selector run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hjminmax.expressions import Expression, eval_plain, eval_with_grad, parse
from hjminmax.flow import (
    FlowConfig,
    HamiltonianModel,
    flow_with_action_batch,
    phi_batch,
    sample_bounds,
)

__all__ = [
    "PiecewiseFunction",
    "OneStepFamily",
    "CriticalPoint",
    "FiberBox",
    "CertificationError",
    "eval_S",
    "critical_points",
    "critical_points_batch",
    "wavefront",
    "fiber_box",
]

_KINK_TOL = 1e-9
_BISECT_ITERS = 52  # brackets start O(1) wide; 2^-52 reaches ~1e-16 relative


class CertificationError(RuntimeError):
    """Fiber box could not certify the two-deep-ends separation."""


# ---------------------------------------------------------------------------
# Piecewise-C^2 initial data


class PiecewiseFunction:
    """Continuous piecewise-C^2 function of x with Clarke intervals at kinks.

    Two representations share one interface: expression pieces between
    breakpoints (scenario input), and sampled piecewise-linear data (the
    resampled output of an iteration step, where every interior node is a
    potential kink).  End pieces extend with their own expression / end slope.
    """

    def __init__(self, breakpoints, pieces, lipschitz_bound, _samples=None):
        self.breakpoints = np.asarray(breakpoints, dtype=float)
        self.pieces = pieces
        self.lipschitz_bound = float(lipschitz_bound)
        self._samples = _samples
        if self._samples is None:
            if len(pieces) != len(self.breakpoints) + 1:
                raise ValueError(
                    f"need {len(self.breakpoints) + 1} pieces for "
                    f"{len(self.breakpoints)} breakpoints, got {len(pieces)}"
                )
            if np.any(np.diff(self.breakpoints) <= 0):
                raise ValueError("breakpoints must be strictly increasing")
            self._check_continuity()

    # -- constructors

    @classmethod
    def from_expressions(cls, breakpoints, sources, lipschitz_bound):
        pieces = []
        for src in sources:
            e = src if isinstance(src, Expression) else parse(src)
            from hjminmax.expressions import variables

            extra = variables(e) - {"x"}
            if extra:
                raise ValueError(
                    f"initial-datum piece {e.source!r} may only use x, "
                    f"found {sorted(extra)}"
                )
            pieces.append(e)
        return cls(breakpoints, pieces, lipschitz_bound)

    @classmethod
    def from_samples(cls, xs, us):
        xs = np.asarray(xs, dtype=float)
        us = np.asarray(us, dtype=float)
        if xs.ndim != 1 or xs.shape != us.shape or xs.size < 2:
            raise ValueError("need matching 1-d sample arrays with >= 2 nodes")
        if np.any(np.diff(xs) <= 0):
            raise ValueError("sample nodes must be strictly increasing")
        slopes = np.diff(us) / np.diff(xs)
        obj = cls.__new__(cls)
        obj.breakpoints = xs[1:-1]
        obj.pieces = None
        obj.lipschitz_bound = float(np.max(np.abs(slopes))) if slopes.size else 0.0
        obj._samples = (xs, us, slopes)
        return obj

    # -- invariants

    def _check_continuity(self):
        for i, b in enumerate(self.breakpoints):
            left = eval_plain(self.pieces[i], 0.0, b, 0.0)
            right = eval_plain(self.pieces[i + 1], 0.0, b, 0.0)
            if abs(left - right) > 1e-12 * (1.0 + abs(left)):
                raise ValueError(
                    f"pieces disagree at breakpoint {b}: {left} vs {right}"
                )

    def validate_lipschitz(self, x_range, n: int = 2001) -> float:
        """Sampled max |v'|; raises if it exceeds the declared bound."""
        xs = np.linspace(x_range[0], x_range[1], n)
        measured = float(np.max(np.abs(self.derivative(xs))))
        for b in self.breakpoints:
            lo, hi = self.clarke_interval(b)
            measured = max(measured, abs(lo), abs(hi))
        if measured > self.lipschitz_bound * (1.0 + 1e-9) + 1e-12:
            raise ValueError(
                f"declared lipschitz_bound {self.lipschitz_bound} violated: "
                f"sampled slope {measured:.6g}"
            )
        return measured

    # -- evaluation

    def _piece_index(self, x):
        return np.searchsorted(self.breakpoints, x, side="right")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        if self._samples is not None:
            xs, us, slopes = self._samples
            idx = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, slopes.size - 1)
            out = us[idx] + slopes[idx] * (x - xs[idx])
        else:
            out = np.empty_like(x)
            idx = self._piece_index(x)
            for k in np.unique(idx):
                m = idx == k
                out[m] = eval_plain(self.pieces[k], 0.0, x[m], 0.0)
        return float(out[0]) if scalar else out

    def derivative(self, x):
        """Classical derivative a.e. (at a node: slope of the right piece)."""
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        if self._samples is not None:
            xs, _, slopes = self._samples
            idx = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, slopes.size - 1)
            out = slopes[idx].astype(float)
        else:
            out = np.empty_like(x)
            idx = self._piece_index(x)
            for k in np.unique(idx):
                m = idx == k
                _, _, dx, _ = eval_with_grad(self.pieces[k], 0.0, x[m], 0.0)
                out[m] = dx
        return float(out[0]) if scalar else out

    def one_sided_slopes(self, b: float) -> tuple[float, float]:
        if self._samples is not None:
            xs, _, slopes = self._samples
            i = int(np.searchsorted(xs, b))
            if not (0 < i < xs.size - 1 and abs(xs[i] - b) < 1e-12):
                raise ValueError(f"{b} is not an interior sample node")
            return float(slopes[i - 1]), float(slopes[i])
        i = int(np.searchsorted(self.breakpoints, b))
        if not (i < self.breakpoints.size and abs(self.breakpoints[i] - b) < 1e-12):
            raise ValueError(f"{b} is not a breakpoint")
        _, _, dl, _ = eval_with_grad(self.pieces[i], 0.0, b, 0.0)
        _, _, dr, _ = eval_with_grad(self.pieces[i + 1], 0.0, b, 0.0)
        return float(dl), float(dr)

    def clarke_interval(self, b: float) -> tuple[float, float]:
        left, right = self.one_sided_slopes(b)
        return (min(left, right), max(left, right))

    def slope_range(self, span: float = 10.0, n: int = 2001) -> tuple[float, float]:
        """Sampled (min, max) slope over all pieces, clipped to the declared
        Lipschitz bound.

        One-sided momentum bounds: characteristics seeded on v (smooth points
        and Clarke fans alike) carry momenta inside this interval, which is
        often much narrower than [-L, L] and shrinks propagation padding
        accordingly.  Expression end pieces are sampled `span` beyond the
        outermost breakpoints (same contract as validate_lipschitz).
        """
        if self._samples is not None:
            _, _, slopes = self._samples
            return float(np.min(slopes)), float(np.max(slopes))
        if self.breakpoints.size:
            edges = (float(self.breakpoints[0]) - span,
                     float(self.breakpoints[-1]) + span)
        else:
            edges = (-span, span)
        d = self.derivative(np.linspace(edges[0], edges[1], n))
        lo, hi = float(np.min(d)), float(np.max(d))
        for b in self.breakpoints:
            dl, dr = self.one_sided_slopes(float(b))
            lo, hi = min(lo, dl, dr), max(hi, dl, dr)
        L = self.lipschitz_bound
        return max(lo, -L), min(hi, L)

    def kink_points(self, tol: float = _KINK_TOL) -> np.ndarray:
        out = []
        for b in self.breakpoints:
            lo, hi = self.clarke_interval(b)
            if hi - lo > tol:
                out.append(b)
        return np.asarray(out, dtype=float)

    def is_piecewise_linear(self) -> bool:
        return self._samples is not None


# ---------------------------------------------------------------------------
# One-step family


@dataclass(frozen=True)
class OneStepFamily:
    s: float
    t: float
    model: HamiltonianModel
    v: PiecewiseFunction
    cfg: FlowConfig

    def __post_init__(self):
        if self.t < self.s:
            raise ValueError(f"need s <= t, got s={self.s}, t={self.t}")

    @property
    def tau(self) -> float:
        return self.t - self.s


def _phi_row(fam: OneStepFamily, x, y0):
    """phi_s^t(x, y0) for an array of momenta (x scalar or same-shape array)."""
    if fam.model.p_only:
        return -fam.tau * eval_plain(fam.model.expr, 0.0, 0.0, np.asarray(y0, float)) + 0.0 * np.asarray(y0, float)
    if fam.tau == 0.0:
        return np.zeros_like(np.asarray(y0, float))
    return phi_batch(fam.model, fam.s, fam.t, x, y0, fam.cfg)


def eval_S(fam: OneStepFamily, x, x0, y0):
    """S(x; x0, y0) = v(x0) + phi_s^t(x, y0) + (x - x0) y0, vectorized."""
    x0 = np.asarray(x0, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    out = fam.v(x0) + _phi_row(fam, x, y0) + (x - x0) * y0
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Critical points


@dataclass(frozen=True)
class CriticalPoint:
    x0: float
    y0: float
    value: float
    branch_id: int
    from_kink: bool


def _sweep_with_action(fam: OneStepFamily, x0, y0, split_at=None):
    """(X, Y, action) along characteristics from (x0, y0); with split_at the
    sweep restarts its integration at the intermediate time and the actions
    add, which must leave critical values unchanged."""
    if split_at is None:
        return flow_with_action_batch(fam.model, fam.s, fam.t, x0, y0, fam.cfg)
    if not fam.s < split_at < fam.t:
        raise ValueError(f"split time {split_at} outside ({fam.s}, {fam.t})")
    X1, Y1, a1 = flow_with_action_batch(fam.model, fam.s, split_at, x0, y0,
                                        fam.cfg)
    X2, Y2, a2 = flow_with_action_batch(fam.model, split_at, fam.t, X1, Y1,
                                        fam.cfg)
    return X2, Y2, a1 + a2


def _end_x(fam: OneStepFamily, x0, y0, split_at=None):
    """X_s^t(x0, y0) for arrays."""
    X, _, _ = _sweep_with_action(fam, x0, y0, split_at)
    return X


def _value_at(fam: OneStepFamily, x0, y0, split_at=None):
    """Critical value v(x0) + action along the characteristic from (x0, y0)."""
    _, _, action = _sweep_with_action(fam, x0, y0, split_at)
    return fam.v(x0) + action


def _x0_window(fam: OneStepFamily, xs) -> tuple[float, float]:
    """Finite-propagation window of starting positions feeding xs."""
    s_lo, s_hi = fam.v.slope_range()
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    lo, hi = float(np.min(xs)), float(np.max(xs))
    reach = 1.0
    for _ in range(2):  # one refinement of the momentum/space sampling box
        box = ((fam.s, max(fam.t, fam.s + 1e-9)), (lo - reach, hi + reach),
               (s_lo - 0.5, s_hi + 0.5))
        reach = fam.tau * sample_bounds(fam.model, box)["max_Hp"] + 0.25
    return lo - reach, hi + reach


def _piece_intervals(v: PiecewiseFunction, window):
    """Per-piece closed intervals clipped to the window."""
    if v._samples is not None:
        xs = v._samples[0]
        edges = np.concatenate(([window[0] - 1.0], xs[1:-1], [window[1] + 1.0]))
        # sampled-linear: pieces are the sample cells, end cells extrapolate
        lo_edges, hi_edges = edges[:-1], edges[1:]
    else:
        b = v.breakpoints
        lo_edges = np.concatenate(([window[0] - 1.0], b))
        hi_edges = np.concatenate((b, [window[1] + 1.0]))
    out = []
    for k in range(lo_edges.size):
        lo = max(float(lo_edges[k]), window[0])
        hi = min(float(hi_edges[k]), window[1])
        if hi > lo:
            out.append((k, lo, hi))
    return out


def _bisect_on_segment(eval_g, lo, hi, iters=_BISECT_ITERS):
    """Vectorized bisection for arrays of brackets [lo, hi] with g(lo) sign
    opposite to g(hi); returns midpoints after `iters` halvings."""
    glo = eval_g(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        gmid = eval_g(mid)
        take_left = (glo <= 0) == (gmid <= 0)
        lo = np.where(take_left, mid, lo)
        glo = np.where(take_left, gmid, glo)
        hi = np.where(take_left, hi, mid)
    return 0.5 * (lo + hi)


def _per_piece_seeds(lo, hi, n_seeds):
    span = hi - lo
    eps = 1e-12 * (1.0 + abs(lo) + abs(hi))
    return np.linspace(lo + eps, hi - eps, max(4, n_seeds))


def _enumerate_batch(fam: OneStepFamily, xs, n_seeds: int = 64,
                     x0_range=None, split_at=None):
    """Critical points of S(x, .) for every x in xs.

    Returns a list (per x) of (x0, y0, value, from_kink) float arrays, plus a
    dict of sweep-wide summaries used by the fiber-box construction.
    """
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    v = fam.v
    found: list[list[tuple[float, float, bool]]] = [[] for _ in xs]

    if fam.tau == 0.0:
        # identity step: unique critical value v(x) at x0 = x
        for i, x in enumerate(xs):
            found[i].append((float(x), float(v.derivative(x)), False))
        return _finalize(fam, xs, found)

    window = x0_range if x0_range is not None else _x0_window(fam, xs)

    if split_at is None and fam.model.p_only and v.is_piecewise_linear():
        _enumerate_fast_linear(fam, xs, found, window)
        return _finalize(fam, xs, found)

    # (a) smooth branches: bracket sign changes of X(x0, v'(x0)) - x per piece
    for _, lo, hi in _piece_intervals(v, window):
        seeds = _per_piece_seeds(lo, hi, n_seeds)
        yseeds = v.derivative(seeds)
        Xs = _end_x(fam, seeds, yseeds, split_at)

        def g_smooth(x0_arr, target):
            return _end_x(fam, x0_arr, v.derivative(x0_arr), split_at) - target

        _collect_segment_roots(xs, seeds, Xs, g_smooth, found, fam, kink=None)

    # (b) kink fans: at each breakpoint b, bracket roots of X(b, y0) - x for
    # y0 in the Clarke interval
    for b in v.kink_points():
        if not (window[0] <= b <= window[1]):
            continue
        c, d = v.clarke_interval(b)
        yseeds = np.linspace(c, d, max(4, n_seeds))
        Xs = _end_x(fam, np.full_like(yseeds, b), yseeds, split_at)

        def g_fan(y0_arr, target, _b=b):
            return _end_x(fam, np.full_like(y0_arr, _b), y0_arr,
                          split_at) - target

        _collect_segment_roots(xs, yseeds, Xs, g_fan, found, fam, kink=b)

    return _finalize(fam, xs, found, split_at)


def _collect_segment_roots(xs, params, Xvals, g, found, fam, kink):
    """Shared bracketing: params is the sweep variable (x0 or y0), Xvals the
    arrival positions at the seeds; for each seed segment and each target x
    inside its arrival range, bisect g(param) = X(param) - x to a root."""
    for k in range(params.size - 1):
        plo, phi_ = params[k], params[k + 1]
        xlo = min(Xvals[k], Xvals[k + 1])
        xhi = max(Xvals[k], Xvals[k + 1])
        hit = np.flatnonzero((xs >= xlo) & (xs <= xhi))
        if hit.size == 0:
            continue
        targets = xs[hit]
        lo = np.full(targets.shape, plo)
        hi = np.full(targets.shape, phi_)
        roots = _bisect_on_segment(lambda a, t=targets: g(a, t), lo, hi)
        for j, i in enumerate(hit):
            param = float(roots[j])
            if kink is None:
                found[i].append((param, float(fam.v.derivative(param)), False))
            else:
                found[i].append((float(kink), param, True))


def _monotone_runs(vals: np.ndarray):
    """Maximal monotone index ranges (a, b inclusive) of a sampled function,
    each extended by one cell so roots near a fold are caught from both sides.
    Flat stretches attach to the neighboring run."""
    d = np.diff(vals)
    sgn = np.sign(d)
    runs = []
    i = 0
    n = d.size
    while i < n:
        if sgn[i] == 0:
            i += 1
            continue
        j = i
        while j + 1 < n and sgn[j + 1] != -sgn[i]:
            j += 1
        runs.append((max(i - 1, 0), min(j + 2, n)))
        i = j + 1
    return runs


def _hp(expr, p):
    """dH/dp for a p_only Hamiltonian, broadcast to the shape of p."""
    _, _, _, dp = eval_with_grad(expr, 0.0, 0.0, p)
    return dp + 0.0 * np.asarray(p, dtype=float)


def _enumerate_fast_linear(fam: OneStepFamily, xs, found, window):
    """p_only Hamiltonian + piecewise-linear v: smooth roots in closed form
    (x0 = x - tau H'(m) per linear cell of slope m), kink fans by inverting
    H' on its monotone runs for all kinks and targets at once."""
    v = fam.v
    tau = fam.tau
    nodes, _, slopes = v._samples
    expr = fam.model.expr
    hp_m = _hp(expr, slopes)

    lo_edges = np.concatenate(([window[0] - 1.0], nodes[1:-1]))
    hi_edges = np.concatenate((nodes[1:-1], [window[1] + 1.0]))
    X0 = xs[None, :] - tau * hp_m[:, None]
    valid = (X0 >= lo_edges[:, None]) & (X0 <= hi_edges[:, None])
    for k, i in zip(*np.nonzero(valid)):
        found[i].append((float(X0[k, i]), float(slopes[k]), False))

    kinks = v.kink_points()
    if kinks.size == 0:
        return
    ik = np.searchsorted(nodes, kinks)
    cl_all = np.minimum(slopes[ik - 1], slopes[ik])
    dl_all = np.maximum(slopes[ik - 1], slopes[ik])
    P = float(max(np.max(np.abs(cl_all)), np.max(np.abs(dl_all)))) + 1e-9
    pg = np.linspace(-P, P, 1025)
    dpg = _hp(expr, pg)
    A = (xs[None, :] - kinks[:, None]) / tau
    for a, b in _monotone_runs(dpg):
        cl = np.maximum(cl_all, pg[a])
        dl = np.minimum(dl_all, pg[b])
        ok = cl < dl
        if not np.any(ok):
            continue
        h_cl = _hp(expr, cl)
        h_dl = _hp(expr, dl)
        mask = ok[:, None] & ((A - h_cl[:, None]) * (A - h_dl[:, None]) <= 0.0)
        kj, xi = np.nonzero(mask)
        if kj.size == 0:
            continue
        target = A[kj, xi]
        roots = _bisect_on_segment(lambda y, tt=target: _hp(expr, y) - tt,
                                   cl[kj], dl[kj])
        for m in range(kj.size):
            found[xi[m]].append((float(kinks[kj[m]]), float(roots[m]), True))


def _finalize(fam: OneStepFamily, xs, found, split_at=None):
    """Dedupe, evaluate values, and package per-x arrays."""
    out = []
    for i in range(xs.size):
        pts = found[i]
        if not pts:
            out.append((np.empty(0), np.empty(0), np.empty(0),
                        np.empty(0, dtype=bool)))
            continue
        x0 = np.array([p[0] for p in pts])
        y0 = np.array([p[1] for p in pts])
        kf = np.array([p[2] for p in pts], dtype=bool)
        # dedupe near-identical fiber points, keeping first (sweep order)
        keep = np.ones(x0.size, dtype=bool)
        for a in range(x0.size):
            if not keep[a]:
                continue
            close = (np.abs(x0 - x0[a]) < 1e-7) & (np.abs(y0 - y0[a]) < 1e-7)
            close[: a + 1] = False
            keep[close] = False
        x0, y0, kf = x0[keep], y0[keep], kf[keep]
        vals = np.asarray(_value_at(fam, x0, y0, split_at), dtype=float)
        out.append((x0, y0, vals, kf))
    return out


def critical_points(fam: OneStepFamily, x: float, sweep: dict | None = None,
                    split_at: float | None = None):
    """All critical points of S(x, .): list of CriticalPoint, sweep order.

    split_at re-derives the same set through characteristics restarted at an
    intermediate time (values must agree: the construction is independent of
    the time subdivision)."""
    sweep = sweep or {}
    per_x = _enumerate_batch(
        fam,
        [x],
        n_seeds=sweep.get("n_seeds", 64),
        x0_range=sweep.get("x0_range"),
        split_at=split_at,
    )
    x0, y0, vals, kf = per_x[0]
    return [
        CriticalPoint(float(x0[k]), float(y0[k]), float(vals[k]), k, bool(kf[k]))
        for k in range(x0.size)
    ]


def critical_points_batch(fam: OneStepFamily, xs, n_seeds: int = 64):
    """Per-x critical data arrays (x0, y0, value, from_kink) for a grid."""
    return _enumerate_batch(fam, xs, n_seeds=n_seeds)


def wavefront(fam: OneStepFamily, x_range, n_x: int, n_seeds: int = 64):
    """Multivalued front samples: rows (x, u, branch_id, from_kink)."""
    xs = np.linspace(x_range[0], x_range[1], n_x)
    per_x = _enumerate_batch(fam, xs, n_seeds=n_seeds)
    rows = []
    for i, x in enumerate(xs):
        _, _, vals, kf = per_x[i]
        for k in range(vals.size):
            rows.append((float(x), float(vals[k]), k, bool(kf[k])))
    return rows


# ---------------------------------------------------------------------------
# Fiber box: shifted coordinates, momentum clamp, radii, and depth


@dataclass(frozen=True)
class FiberBox:
    """Certified fiber window in base-point-shifted coordinates.

    The fiber grid for base point x lives in (xi, y0) with xi = x0 - x, and
    carries the values S(x; x + xi, y0) - v(x).  Beyond |y0| = y_cap the
    Hamiltonian contribution is extended linearly (the finite-propagation
    modification off the momentum window: no critical point has |y0| > y_cap,
    so critical values are untouched while the far field stays dominated by
    the hyperbolic term -xi y0).
    """

    radius_xi: float
    radius_y0: float
    lam: float            # terminal depth: deep ends are components of {<= -lam}
    resolution: int       # grid is resolution x resolution
    core_xi: float        # critical hull (with margin) in xi = x0 - x
    core_y0: float
    y_cap: float          # momentum radius beyond which phi is linearized
    x_range: tuple        # base interval the certification covered

    def with_resolution(self, m: int) -> "FiberBox":
        return FiberBox(self.radius_xi, self.radius_y0, self.lam, m,
                        self.core_xi, self.core_y0, self.y_cap, self.x_range)

    def widened(self, factor: float = 2.0) -> "FiberBox":
        return FiberBox(factor * self.radius_xi, factor * self.radius_y0,
                        self.lam, self.resolution, self.core_xi, self.core_y0,
                        self.y_cap, self.x_range)


def _cell_centers(radius: float, m: int) -> np.ndarray:
    edges = np.linspace(-radius, radius, m + 1)
    return 0.5 * (edges[:-1] + edges[1:])


def _phi_row_clamped(fam: OneStepFamily, x, y0, y_cap: float):
    """phi_s^t(x, y0) with linear extension beyond |y0| = y_cap."""
    y = np.asarray(y0, dtype=float)
    out = np.array(_phi_row(fam, x, np.clip(y, -y_cap, y_cap)), dtype=float)
    h = 1e-5 * max(1.0, y_cap)
    for sign, mask in ((1.0, y > y_cap), (-1.0, y < -y_cap)):
        if np.any(mask):
            cap = sign * y_cap
            val = float(_phi_row(fam, x, np.array([cap]))[0])
            slope = (val - float(_phi_row(fam, x, np.array([cap - sign * h]))[0])) \
                / (sign * h)
            out[mask] = val + slope * (y[mask] - cap)
    return out


def fiber_values(fam: OneStepFamily, x: float, box: FiberBox,
                 xic=None, y0c=None, phi_row=None) -> np.ndarray:
    """Normalized family values S(x; x + xi, y0) - v(x) on the box grid."""
    if xic is None:
        xic = _cell_centers(box.radius_xi, box.resolution)
    if y0c is None:
        y0c = _cell_centers(box.radius_y0, box.resolution)
    if phi_row is None:
        phi_row = _phi_row_clamped(fam, x, y0c, box.y_cap)
    vrow = fam.v(x + xic) - fam.v(x)
    values = vrow[:, None] + phi_row[None, :] - np.outer(xic, y0c)
    if not np.all(np.isfinite(values)):
        raise FloatingPointError(f"non-finite fiber grid at x={x}")
    return values


def deep_components(values: np.ndarray, lam: float):
    """The two terminal ends: connected components of {values <= -lam}
    holding the (+, +) and (-, -) corners of the grid.

    Raises CertificationError when a corner fails to reach the depth or the
    two components touch (the box is then too small for this landscape).
    """
    from scipy import ndimage

    deep = values <= -lam
    labels, _ = ndimage.label(deep)
    lab_pos = int(labels[-1, -1])
    lab_neg = int(labels[0, 0])
    if lab_pos == 0 or lab_neg == 0:
        raise CertificationError(
            f"corner cell not below -lam = {-lam:.3g}: corners are "
            f"{values[-1, -1]:.3g} and {values[0, 0]:.3g}")
    if lab_pos == lab_neg:
        raise CertificationError("the two deep ends connect inside the box")
    return labels == lab_pos, labels == lab_neg


def fiber_box(fam: OneStepFamily, x_range, resolution: int = 257,
              margin: float = 0.25, max_doublings: int = 5,
              criticals=None, xs=None) -> FiberBox:
    """Certified box: critical hull inside the core with margin, corner deep
    ends present and disjoint at representative base points.

    criticals may pass precomputed critical_points_batch output (with xs the
    matching base points) so the hull needs no re-enumeration.
    """
    x_range = (float(x_range[0]), float(x_range[1]))
    if criticals is None:
        xs = np.linspace(x_range[0], x_range[1], 41)
        criticals = _enumerate_batch(fam, xs)
    elif xs is None:
        raise ValueError("xs must accompany precomputed criticals")
    xs = np.atleast_1d(np.asarray(xs, dtype=float))

    hull_xi = 0.0
    hull_y = 0.0
    max_val = 0.0
    n_points = 0
    for xi_base, (x0, y0, vals, _) in zip(xs, criticals):
        if x0.size:
            hull_xi = max(hull_xi, float(np.max(np.abs(x0 - xi_base))))
            hull_y = max(hull_y, float(np.max(np.abs(y0))))
            max_val = max(max_val, float(np.max(np.abs(
                vals - fam.v(xi_base)))))
            n_points += x0.size
    if n_points == 0:
        # legal but reported: fall back to propagation-sized radii
        hull_xi = 1.0
        hull_y = fam.v.lipschitz_bound + 1.0
    core_xi = (1.0 + margin) * max(hull_xi, 0.25)
    core_y = (1.0 + margin) * max(hull_y, fam.v.lipschitz_bound, 0.25)
    y_cap = core_y

    lam = _depth_lambda(fam, core_xi, core_y, x_range, max_val, y_cap)

    # first guess for the radii: the corner product -xi y0 must clear lam
    # plus the linear growth of v and the clamped phi along the edges
    L = fam.v.lipschitz_bound
    radius_y = 2.0 * core_y + 0.5
    probe_x = (x_range[0], 0.5 * (x_range[0] + x_range[1]), x_range[1])
    phi_edge = max(
        abs(float(_phi_row_clamped(fam, x, np.array([sy * radius_y]),
                                   y_cap)[0]))
        for x in (probe_x[1],) for sy in (1.0, -1.0))
    slack = max(radius_y - L - 0.25, 0.5)
    radius_xi = max(2.0 * core_xi, (lam + phi_edge + 1.0) / slack)

    for _ in range(max_doublings + 1):
        box = FiberBox(radius_xi, radius_y, lam, resolution, core_xi, core_y,
                       y_cap, x_range)
        try:
            for x in probe_x:
                deep_components(fiber_values(fam, float(x), box), lam)
            return box
        except CertificationError:
            radius_xi *= 2.0
            radius_y *= 1.5
    raise CertificationError(
        f"could not certify two disjoint deep ends after {max_doublings} "
        f"doublings (lam={lam:.3g}, radii=({radius_xi:.3g}, {radius_y:.3g}))"
    )


def _depth_lambda(fam: OneStepFamily, core_xi: float, core_y: float,
                  x_range, max_crit: float, y_cap: float) -> float:
    """lam = 2 (sup over the core of |S - Q| + the largest normalized
    critical magnitude) + 1, sampled on a coarse core grid at representative
    base points; S - Q = v(x + xi) - v(x) + phi(x, y0) in shifted coordinates."""
    m = 65
    xic = _cell_centers(core_xi, m)
    y0c = _cell_centers(core_y, m)
    xa, xb = x_range
    diff_max = 0.0
    for x in (xa, 0.5 * (xa + xb), xb):
        vrow = fam.v(x + xic) - fam.v(x)
        phirow = _phi_row_clamped(fam, x, y0c, y_cap)
        diff = vrow[:, None] + phirow[None, :]
        diff_max = max(diff_max, float(np.max(np.abs(diff))))
    return 2.0 * (diff_max + max_crit) + 1.0
