"""Saddle (minmax) selection on the one-step family's fiber grid.

For each base point x the family module provides normalized values
S(x; x + xi, y0) - v(x) on a certified box in shifted fiber coordinates.
The minmax between the two deep ends — the connected components of the
sublevel set {values <= -lam} holding the (+, +) and (-, -) grid corners —
is a bottleneck (widest-path) value: the smallest threshold c at which the
ends join inside {values <= c}.  It is computed by a Kruskal-style sweep:
activate cells in ascending value order (ties broken row-major by flat
index), union 4-adjacent active cells, stop when the two ends merge.

Two certificates guard every solve.  The ends certificate (family module)
checks that the corner components exist and are disjoint.  The escape
certificate checks that every boundary cell strictly below the pass is
connected, inside the strict sublevel set, to one of the two ends; with box
radii exceeding the Lipschitz slopes of the family's linear far field, each
exterior corridor descends into exactly one end, so a certified pass cannot
be undercut by paths leaving the window.  Certification failures raise
CertificationError and the solve retries on a widened box.

The grid resolves which critical branch carries the saddle; the reported
solution value snaps to the matched critical value (computed to near
machine precision by the family module) whenever the match gap is within a
tolerance calibrated from the grid's own value modulus around the pass
cell.  A brute-force oracle (flood fill per threshold) covers small grids
for cross-checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy import ndimage

from hjminmax.family import (
    CertificationError,
    CriticalPoint,
    FiberBox,
    OneStepFamily,
    _cell_centers,
    _phi_row_clamped,
    critical_points,
    deep_components,
)

__all__ = [
    "FiberGrid",
    "MinmaxResult",
    "StepGeometry",
    "prepare_geometry",
    "build_fiber_grid",
    "minmax",
    "min_select",
    "bottleneck_on_grid",
    "exhaustive_bottleneck",
    "grid_modulus",
    "stability_gap",
]


# ---------------------------------------------------------------------------
# Geometry shared by every base point x over one fiber box


@dataclass
class StepGeometry:
    """Everything about (fam, box) that does not depend on x."""

    box: FiberBox
    xic: np.ndarray          # cell centers, xi = x0 - x axis (rows)
    y0c: np.ndarray          # cell centers, y0 axis (columns)
    Q: np.ndarray            # -outer(xic, y0c), M x M
    phi_row: np.ndarray | None  # x-independent clamped phi row for p_only


def prepare_geometry(fam: OneStepFamily, box: FiberBox) -> StepGeometry:
    m = box.resolution
    xic = _cell_centers(box.radius_xi, m)
    y0c = _cell_centers(box.radius_y0, m)
    phi_row = _phi_row_clamped(fam, 0.0, y0c, box.y_cap) \
        if fam.model.p_only else None
    return StepGeometry(box, xic, y0c, -np.outer(xic, y0c), phi_row)


@dataclass
class FiberGrid:
    box: FiberBox
    values: np.ndarray       # normalized family values at cell centers
    terminal_pos: np.ndarray
    terminal_neg: np.ndarray


def _grid_values(fam: OneStepFamily, x: float, geo: StepGeometry) -> np.ndarray:
    """Normalized values S(x; x + xi, y0) - v(x) over the cached geometry."""
    phi_row = geo.phi_row if geo.phi_row is not None else _phi_row_clamped(
        fam, x, geo.y0c, geo.box.y_cap)
    vrow = fam.v(x + geo.xic) - fam.v(x)
    values = vrow[:, None] + phi_row[None, :] + geo.Q
    if not np.all(np.isfinite(values)):
        raise FloatingPointError(f"non-finite fiber grid at x={x}")
    return values


def build_fiber_grid(fam: OneStepFamily, x: float, box: FiberBox,
                     geometry: StepGeometry | None = None) -> FiberGrid:
    geo = geometry if geometry is not None else prepare_geometry(fam, box)
    values = _grid_values(fam, x, geo)
    pos, neg = deep_components(values, box.lam)
    return FiberGrid(box, values, pos, neg)


def grid_modulus(values: np.ndarray) -> float:
    """Max |difference| between 4-adjacent cells: the grid's value resolution."""
    return max(float(np.max(np.abs(np.diff(values, axis=0)))),
               float(np.max(np.abs(np.diff(values, axis=1)))))


def _local_modulus(values: np.ndarray, stop: int) -> float:
    """Max |difference| to the pass cell over its 8-neighborhood."""
    nrows, ncols = values.shape
    i, j = stop // ncols, stop % ncols
    window = values[max(i - 1, 0): i + 2, max(j - 1, 0): j + 2]
    return float(np.max(np.abs(window - values[i, j])))


def _terminal_id(pos: np.ndarray, neg: np.ndarray) -> np.ndarray:
    term_id = np.zeros(pos.size, dtype=np.int8)
    term_id[pos.ravel()] = 1
    term_id[neg.ravel()] = 2
    return term_id


def _escape_certificate(values: np.ndarray, pos: np.ndarray, neg: np.ndarray,
                        grid_value: float, tol: float) -> None:
    """Every boundary cell strictly below the pass must connect, inside the
    strict sublevel set, to one of the two deep ends."""
    strict = values < grid_value - 2.0 * tol
    labels, _ = ndimage.label(strict)
    anchored = np.unique(labels[(pos | neg) & strict])
    edge = np.concatenate([labels[0, :], labels[-1, :],
                           labels[1:-1, 0], labels[1:-1, -1]])
    loose = np.setdiff1d(edge[edge > 0], anchored)
    if loose.size:
        n_cells = int(np.isin(labels, loose).sum())
        raise CertificationError(
            f"{n_cells} below-pass cells reach the box boundary without "
            f"connecting to either deep end (pass {grid_value:.6g})")


# ---------------------------------------------------------------------------
# Union-find sweep (Kruskal bottleneck) and path recovery


@numba.njit(cache=True, nogil=True)
def _find(parent, a):
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


@numba.njit(cache=True, nogil=True)
def _union(parent, size, a, b):
    ra = _find(parent, a)
    rb = _find(parent, b)
    if ra == rb:
        return ra
    if size[ra] < size[rb]:
        ra, rb = rb, ra
    parent[rb] = ra
    size[ra] += size[rb]
    return ra


@numba.njit(cache=True, nogil=True)
def _sweep_kernel(order, term_id, nrows, ncols):
    """Activate cells in the given order; return the index into `order` at
    which the two virtual terminals first connect (-1 if never)."""
    n = nrows * ncols
    tpos = n
    tneg = n + 1
    parent = np.empty(n + 2, dtype=np.int32)
    for i in range(n + 2):
        parent[i] = i
    size = np.ones(n + 2, dtype=np.int32)
    active = np.zeros(n, dtype=np.uint8)
    for k in range(order.size):
        c = order[k]
        active[c] = 1
        t = term_id[c]
        if t == 1:
            _union(parent, size, c, tpos)
        elif t == 2:
            _union(parent, size, c, tneg)
        i = c // ncols
        j = c % ncols
        if i > 0 and active[c - ncols] == 1:
            _union(parent, size, c, c - ncols)
        if i < nrows - 1 and active[c + ncols] == 1:
            _union(parent, size, c, c + ncols)
        if j > 0 and active[c - 1] == 1:
            _union(parent, size, c, c - 1)
        if j < ncols - 1 and active[c + 1] == 1:
            _union(parent, size, c, c + 1)
        if _find(parent, tpos) == _find(parent, tneg):
            return k
    return -1


@numba.njit(cache=True, nogil=True)
def _bfs_path(active, term_id, nrows, ncols):
    """Shortest 4-adjacent path inside the active set from the positive end
    to the negative end; cells as flat indices, empty if disconnected."""
    n = nrows * ncols
    prev = np.full(n, -2, dtype=np.int32)
    queue = np.empty(n, dtype=np.int32)
    head = 0
    tail = 0
    for c in range(n):
        if active[c] == 1 and term_id[c] == 1:
            prev[c] = -1
            queue[tail] = c
            tail += 1
    while head < tail:
        c = queue[head]
        head += 1
        if term_id[c] == 2:
            count = 0
            cc = c
            while cc != -1:
                count += 1
                cc = prev[cc]
            out = np.empty(count, dtype=np.int32)
            cc = c
            for idx in range(count - 1, -1, -1):
                out[idx] = cc
                cc = prev[cc]
            return out
        i = c // ncols
        j = c % ncols
        if i > 0 and active[c - ncols] == 1 and prev[c - ncols] == -2:
            prev[c - ncols] = c
            queue[tail] = c - ncols
            tail += 1
        if i < nrows - 1 and active[c + ncols] == 1 and prev[c + ncols] == -2:
            prev[c + ncols] = c
            queue[tail] = c + ncols
            tail += 1
        if j > 0 and active[c - 1] == 1 and prev[c - 1] == -2:
            prev[c - 1] = c
            queue[tail] = c - 1
            tail += 1
        if j < ncols - 1 and active[c + 1] == 1 and prev[c + 1] == -2:
            prev[c + 1] = c
            queue[tail] = c + 1
            tail += 1
    return np.empty(0, dtype=np.int32)


def _bottleneck(values: np.ndarray, term_id: np.ndarray,
                guess: float | None):
    """Bottleneck threshold, activated sublevel mask, and stop cell.

    When `guess` is given, only cells with value <= guess are sorted and
    swept (a superset of everything at or below the expected saddle); falls
    back to the full sweep if the ends fail to connect within the subset.
    """
    nrows, ncols = values.shape
    flat = values.ravel()
    if guess is not None:
        cand = np.flatnonzero(flat <= guess)
        if cand.size:
            sub = cand[np.argsort(flat[cand], kind="stable")].astype(np.int32)
            k = _sweep_kernel(sub, term_id, nrows, ncols)
            if k >= 0:
                stop = int(sub[k])
                active = np.zeros(flat.size, dtype=np.uint8)
                active[sub[: k + 1]] = 1
                return float(flat[stop]), active, stop
    order = np.argsort(flat, kind="stable").astype(np.int32)
    k = _sweep_kernel(order, term_id, nrows, ncols)
    if k < 0:
        raise RuntimeError("fiber ends never connect; grid is inconsistent")
    stop = int(order[k])
    active = np.zeros(flat.size, dtype=np.uint8)
    active[order[: k + 1]] = 1
    return float(flat[stop]), active, stop


def bottleneck_on_grid(values, pos_mask, neg_mask, want_path: bool = False):
    """Bottleneck value between two terminal cell sets on an arbitrary grid.

    The public entry point for plain value grids (tests, demos): ascending
    activation with row-major ties, virtual terminals, 4-adjacency.  Returns
    the value, or (value, path-as-(i, j)-list) when want_path is set.
    """
    values = np.asarray(values, dtype=float)
    pos_mask = np.asarray(pos_mask, dtype=bool)
    neg_mask = np.asarray(neg_mask, dtype=bool)
    if values.ndim != 2 or pos_mask.shape != values.shape \
            or neg_mask.shape != values.shape:
        raise ValueError("values and terminal masks must share a 2-d shape")
    if not (pos_mask.any() and neg_mask.any()):
        raise ValueError("both terminal sets must be nonempty")
    term_id = _terminal_id(pos_mask, neg_mask)
    value, active, _ = _bottleneck(values, term_id, None)
    if not want_path:
        return value
    flat_path = _bfs_path(active, term_id, values.shape[0], values.shape[1])
    ncols = values.shape[1]
    return value, [(int(c) // ncols, int(c) % ncols) for c in flat_path]


# ---------------------------------------------------------------------------
# The minmax selector


@dataclass
class MinmaxResult:
    value: float                     # reported solution value (snapped)
    grid_value: float                # raw bottleneck threshold (absolute)
    match_gap: float                 # |grid_value - matched critical value|
    matched_critical: CriticalPoint | None
    tolerance: float                 # calibrated snap/match tolerance
    path: list                       # [(i, j)] grid cells realizing the pass
    refined: bool                    # True if the grid was refined/widened
    box: FiberBox                    # the box actually used


def _run_once(fam, x, geo, crit_norm_max, want_path):
    """One certified bottleneck solve; returns normalized pass data."""
    values = _grid_values(fam, x, geo)
    pos, neg = deep_components(values, geo.box.lam)
    term_id = _terminal_id(pos, neg)
    guess = None if crit_norm_max is None else crit_norm_max + 1.0
    grid_norm, active, stop = _bottleneck(values, term_id, guess)
    tol = 4.0 * _local_modulus(values, stop) + 1e-9
    _escape_certificate(values, pos, neg, grid_norm, tol)
    path = []
    if want_path:
        m = geo.box.resolution
        flat_path = _bfs_path(active, term_id, m, m)
        path = [(int(c) // m, int(c) % m) for c in flat_path]
    return grid_norm, tol, path


def _solve(fam, x, box, crit_norm_max, want_path, geometry=None,
           max_widenings: int = 2):
    """Certified solve with automatic box widening on certification failure."""
    widened = False
    last = None
    for attempt in range(max_widenings + 1):
        geo = geometry if (geometry is not None and attempt == 0) \
            else prepare_geometry(fam, box)
        try:
            grid_norm, tol, path = _run_once(fam, x, geo, crit_norm_max,
                                             want_path)
            return grid_norm, tol, path, box, widened
        except CertificationError as exc:
            last = exc
            box = box.widened()
            widened = True
    raise CertificationError(
        f"still uncertified after {max_widenings} box widenings at "
        f"x={x:.6g}: {last}")


def minmax(fam: OneStepFamily, x: float, box: FiberBox,
           criticals: list[CriticalPoint] | None = None,
           geometry: StepGeometry | None = None,
           refine: bool = True, want_path: bool = False) -> MinmaxResult:
    """Saddle value of the one-step family at base point x.

    criticals may pass a precomputed critical_points(fam, x) list; geometry a
    prepare_geometry(fam, box) cache shared across x.  The grid refines once
    (M <- 2M-1) if the bottleneck fails to land within the calibrated
    tolerance of a critical value, and widens automatically when a
    certificate fails.
    """
    if criticals is None:
        criticals = critical_points(fam, x)
    vx = float(fam.v(x))
    crit_norm_max = max((c.value - vx for c in criticals), default=None)

    grid_norm, tol, path, used_box, widened = _solve(
        fam, x, box, crit_norm_max, want_path, geometry=geometry)
    grid_value = grid_norm + vx

    def _match(value):
        if not criticals:
            return None, np.inf
        vals = np.array([c.value for c in criticals])
        k = int(np.argmin(np.abs(vals - value)))
        return criticals[k], abs(float(vals[k]) - value)

    matched, gap = _match(grid_value)

    refined = widened
    if refine and criticals and gap > tol:
        fine_box = used_box.with_resolution(2 * used_box.resolution - 1)
        grid_norm, tol, path, used_box, _ = _solve(
            fam, x, fine_box, crit_norm_max, want_path)
        grid_value = grid_norm + vx
        matched, gap = _match(grid_value)
        refined = True

    value = matched.value if (matched is not None and gap <= tol) else grid_value
    return MinmaxResult(value, grid_value, gap, matched, tol, path, refined,
                        used_box)


def min_select(fam: OneStepFamily, x: float,
               criticals: list[CriticalPoint] | None = None) -> float:
    """Least critical value: the Hopf-Lax/Oleinik selection, valid only for
    Hamiltonians declared convex in p."""
    if not fam.model.convex_in_p:
        raise ValueError(
            "min_select requires a Hamiltonian declared convex_in_p; use "
            "minmax for general models")
    if criticals is None:
        criticals = critical_points(fam, x)
    if not criticals:
        raise ValueError(f"no critical points at x={x}; widen the sweep")
    return min(c.value for c in criticals)


# ---------------------------------------------------------------------------
# Brute-force oracle and stability


def exhaustive_bottleneck(values: np.ndarray, pos_mask: np.ndarray,
                          neg_mask: np.ndarray) -> float:
    """Reference bottleneck by flood fill at every threshold (grids <= 12x12).

    Independent of the union-find sweep: for each candidate threshold in
    ascending order, BFS over {values <= c} from the positive cells and test
    whether any negative cell is reached.
    """
    values = np.asarray(values, dtype=float)
    if values.shape[0] > 12 or values.shape[1] > 12:
        raise ValueError(f"oracle limited to 12x12 grids, got {values.shape}")
    if not (pos_mask.any() and neg_mask.any()):
        raise ValueError("both terminal sets must be nonempty")
    for c in np.unique(values):
        allowed = values <= c
        seen = pos_mask & allowed
        frontier = list(zip(*np.nonzero(seen)))
        while frontier:
            i, j = frontier.pop()
            for ni, nj in ((i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)):
                if 0 <= ni < values.shape[0] and 0 <= nj < values.shape[1] \
                        and allowed[ni, nj] and not seen[ni, nj]:
                    seen[ni, nj] = True
                    frontier.append((ni, nj))
        if np.any(seen & neg_mask):
            return float(c)
    raise RuntimeError("terminals never connect")


def stability_gap(fam_a: OneStepFamily, fam_b: OneStepFamily, x: float,
                  box: FiberBox) -> dict:
    """Compare saddle values of two families on one shared certified box.

    Both bottlenecks run against the terminal components of the first
    family's grid, so the sweep sees two value arrays on identical
    terminals: the bottleneck is 1-Lipschitz in the values, and the gap can
    exceed the sup difference only by the discretization modulus.
    """
    geo_a = prepare_geometry(fam_a, box)
    geo_b = prepare_geometry(fam_b, box)
    va = _grid_values(fam_a, x, geo_a)
    vb = _grid_values(fam_b, x, geo_b)
    pos, neg = deep_components(va, box.lam)
    term_id = _terminal_id(pos, neg)
    ga, _, _ = _bottleneck(va, term_id, None)
    gb, _, _ = _bottleneck(vb, term_id, None)
    vxa = float(fam_a.v(x))
    vxb = float(fam_b.v(x))
    sup = float(np.max(np.abs((va + vxa) - (vb + vxb))))
    modulus = max(grid_modulus(va), grid_modulus(vb))
    gap = abs((ga + vxa) - (gb + vxb))
    if gap > sup + 2.0 * modulus + 1e-9:
        raise AssertionError(
            f"bottleneck moved by {gap:.3g} > sup {sup:.3g} + 2 modulus "
            f"{modulus:.3g}")
    return {"gap": gap, "sup_diff": sup, "modulus": modulus,
            "value_a": ga + vxa, "value_b": gb + vxb}
