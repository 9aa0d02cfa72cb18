"""Scenario-driven command line: solve fields, export fronts, run
convergence studies, and report property checks, all as deterministic files.

A scenario is a single JSON document naming the Hamiltonian (expression
source plus declared bounds/flags), the piecewise initial datum, the horizon
and spatial window, grid parameters, subdivision schedules, and numeric
targets.  Every run writes its outputs plus a manifest carrying all
parameters and tolerances that shaped the numbers.

Exit codes: 0 success, 2 configuration error, 3 numeric target failure,
4 selector certification failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import json
import numpy as np

from hjminmax.expressions import ParseError
from hjminmax.family import (
    CertificationError,
    OneStepFamily,
    PiecewiseFunction,
    critical_points_batch,
    fiber_box,
    wavefront,
)
from hjminmax.flow import FlowConfig, HamiltonianModel, check_cH_bound
from hjminmax.oracles import FDConfig, compare, fd_viscosity, lax_oleinik_min
from hjminmax.output import field_rows, front_rows, write_csv, write_json
from hjminmax.scheme import (
    SubdivisionSchedule,
    convergence_study,
    iterate,
    lipschitz_report,
    momentum_window,
    semigroup_defect,
    step_operator,
    study_violations,
)
from hjminmax.selector import stability_gap

__all__ = ["Scenario", "load_scenario", "main",
           "cmd_solve", "cmd_front", "cmd_study", "cmd_check"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_CERTIFICATION = 4


class ScenarioError(ValueError):
    """Configuration problem, reported with the offending field path."""


# ---------------------------------------------------------------------------
# Scenario loading


@dataclass(frozen=True)
class Scenario:
    name: str
    model: HamiltonianModel
    v: PiecewiseFunction
    horizon: float
    x_domain: tuple[float, float]
    n_x: int
    fiber_resolution: int
    fd_dx: float
    cfl: float
    flow_dt: float
    schedules: list[int]
    target: float
    value_tolerance: float
    raw: dict

    @property
    def x_grid(self) -> np.ndarray:
        return np.linspace(self.x_domain[0], self.x_domain[1], self.n_x)

    @property
    def flow_config(self) -> FlowConfig:
        return FlowConfig(self.flow_dt)

    @property
    def fd_config(self) -> FDConfig:
        return FDConfig(dx=self.fd_dx, cfl=self.cfl)


def _get(doc: dict, path: str, kind, where: str = ""):
    node = doc
    seen = []
    for key in path.split("."):
        seen.append(key)
        if not isinstance(node, dict) or key not in node:
            raise ScenarioError(f"missing field {'.'.join(seen)}{where}")
        node = node[key]
    if kind is float:
        if not isinstance(node, (int, float)) or isinstance(node, bool):
            raise ScenarioError(f"{path} must be a number, got {node!r}")
        return float(node)
    if kind is int:
        if not isinstance(node, int) or isinstance(node, bool):
            raise ScenarioError(f"{path} must be an integer, got {node!r}")
        return node
    if not isinstance(node, kind):
        raise ScenarioError(
            f"{path} must be {kind.__name__}, got {type(node).__name__}")
    return node


def _positive(value, path: str):
    if not value > 0:
        raise ScenarioError(f"{path} must be positive, got {value}")
    return value


def _verify_convex_flag(model: HamiltonianModel, y_radius: float) -> None:
    p = np.linspace(-y_radius, y_radius, 201)
    h = model.value(0.0, 0.0 * p, p)
    d2 = np.diff(h, 2)
    scale = max(1.0, float(np.max(np.abs(h))))
    if np.min(d2) < -1e-9 * scale:
        raise ScenarioError(
            "hamiltonian.flags.convex_in_p: sampled second difference of H "
            f"is negative ({float(np.min(d2)):.3g}) on |p| <= {y_radius:.3g}")


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path} is not valid JSON: {exc}") from exc

    name = _get(doc, "name", str)
    expr = _get(doc, "hamiltonian.expr", str)
    c_h = _positive(_get(doc, "hamiltonian.c_H_bound", float),
                    "hamiltonian.c_H_bound")
    flags = doc.get("hamiltonian", {}).get("flags", {})
    if not isinstance(flags, dict):
        raise ScenarioError("hamiltonian.flags must be an object")
    for key in flags:
        if key not in ("p_only", "convex_in_p"):
            raise ScenarioError(f"hamiltonian.flags.{key}: unknown flag")
    try:
        model = HamiltonianModel.from_source(
            expr, c_h, p_only=bool(flags.get("p_only", False)),
            convex_in_p=bool(flags.get("convex_in_p", False)))
    except ParseError as exc:
        raise ScenarioError(f"hamiltonian.expr: {exc}") from exc

    breakpoints = _get(doc, "initial_datum.breakpoints", list)
    pieces = _get(doc, "initial_datum.pieces", list)
    lip = _positive(_get(doc, "initial_datum.lipschitz_bound", float),
                    "initial_datum.lipschitz_bound")
    try:
        v = PiecewiseFunction.from_expressions(breakpoints, pieces, lip)
    except (ParseError, ValueError) as exc:
        raise ScenarioError(f"initial_datum: {exc}") from exc

    horizon = _positive(_get(doc, "horizon", float), "horizon")
    x_dom = _get(doc, "x_domain", list)
    if len(x_dom) != 2 or not all(isinstance(z, (int, float)) for z in x_dom) \
            or not float(x_dom[0]) < float(x_dom[1]):
        raise ScenarioError(f"x_domain must be [lo, hi] with lo < hi, "
                            f"got {x_dom}")

    n_x = _get(doc, "grids.n_x", int)
    if n_x < 2:
        raise ScenarioError(f"grids.n_x must be at least 2, got {n_x}")
    resolution = _get(doc, "grids.fiber_resolution", int)
    if resolution < 17:
        raise ScenarioError(
            f"grids.fiber_resolution must be at least 17, got {resolution}")
    fd_dx = _positive(_get(doc, "grids.fd_dx", float), "grids.fd_dx")
    cfl = _get(doc, "grids.cfl", float)
    if not 0.0 < cfl <= 1.0:
        raise ScenarioError(f"grids.cfl must lie in (0, 1], got {cfl}")
    flow_dt = _positive(_get(doc, "grids.flow_dt", float), "grids.flow_dt")

    schedules = _get(doc, "schedules", list)
    if not schedules or not all(isinstance(n, int) and not isinstance(n, bool)
                                and n >= 1 for n in schedules):
        raise ScenarioError(f"schedules must be positive integers, "
                            f"got {schedules}")
    if sorted(schedules) != schedules or len(set(schedules)) != len(schedules):
        raise ScenarioError(f"schedules must increase strictly: {schedules}")

    target = _positive(_get(doc, "targets.convergence_sup_error", float),
                       "targets.convergence_sup_error")
    value_tol = _positive(_get(doc, "targets.value_tolerance", float),
                          "targets.value_tolerance")

    scen = Scenario(name, model, v, horizon,
                    (float(x_dom[0]), float(x_dom[1])), n_x, resolution,
                    fd_dx, cfl, flow_dt, list(schedules), target, value_tol,
                    doc)
    if model.convex_in_p:
        win = momentum_window(model, v, horizon, scen.x_domain)
        _verify_convex_flag(model, win["y_radius"] + 1.0)
    return scen


def _base_manifest(scen: Scenario) -> dict:
    win = momentum_window(scen.model, scen.v, scen.horizon, scen.x_domain)
    return {
        "scenario": scen.raw,
        "x_grid": {"lo": scen.x_domain[0], "hi": scen.x_domain[1],
                   "n_x": scen.n_x,
                   "dx": (scen.x_domain[1] - scen.x_domain[0])
                         / (scen.n_x - 1)},
        "fiber_resolution": scen.fiber_resolution,
        "flow_dt": scen.flow_dt,
        "momentum_window": win,
        "delta_H": scen.model.delta_H,
    }


# ---------------------------------------------------------------------------
# Commands


def _parse_scheme(text: str, scen: Scenario):
    if text == "iterated":
        return "iterated", max(scen.schedules)
    if text.startswith("iterated:"):
        tail = text.split(":", 1)[1]
        try:
            n = int(tail)
        except ValueError:
            raise ScenarioError(f"--scheme iterated:n needs an integer, "
                                f"got {tail!r}") from None
        if n < 1:
            raise ScenarioError(f"--scheme iterated:{n}: n must be >= 1")
        return "iterated", n
    if text in ("minmax", "min", "fd"):
        return text, None
    raise ScenarioError(
        f"unknown scheme {text!r}; expected minmax, iterated[:n], min, or fd")


def cmd_solve(scen: Scenario, scheme_text: str, out: Path) -> int:
    kind, n = _parse_scheme(scheme_text, scen)
    xg = scen.x_grid
    manifest = _base_manifest(scen)
    manifest["scheme"] = scheme_text

    if kind in ("minmax", "iterated"):
        n_steps = 1 if kind == "minmax" else n
        sched = SubdivisionSchedule.uniform(scen.horizon, n_steps)
        report: dict = {}
        field = iterate(scen.model, scen.v, sched, xg, scen.flow_config,
                        resolution=scen.fiber_resolution, report=report)
        manifest["mesh"] = sched.mesh
        manifest["selector"] = report
    elif kind == "fd":
        rec = np.linspace(0.0, scen.horizon, 9)
        field = fd_viscosity(scen.model, scen.v, scen.horizon, xg,
                             scen.fd_config, record_times=rec)
        manifest["fd"] = {"dx": scen.fd_dx, "cfl": scen.cfl,
                          "record_times": rec}
    else:  # min
        field = lax_oleinik_min(scen.model, scen.v, 0.0, scen.horizon, xg)
        fd = fd_viscosity(scen.model, scen.v, scen.horizon, xg,
                          scen.fd_config, record_times=field.times)
        rep = compare(field, fd)
        dx = float(xg[1] - xg[0])
        tol = 5.0 * scen.fd_dx + dx
        manifest["min_vs_fd"] = {"sup_error": rep.sup_error,
                                 "l1_error": rep.l1_error,
                                 "tolerance": tol,
                                 "agrees": rep.sup_error <= tol}

    manifest["lipschitz"] = lipschitz_report(
        field, scen.model, scen.v, value_tol=scen.value_tolerance)
    tag = scheme_text.replace(":", "")
    write_csv(out / f"{scen.name}_solve_{tag}.csv", ["t", "x", "u", "scheme"],
              field_rows(field))
    write_json(out / f"{scen.name}_solve_{tag}_manifest.json", manifest)
    if kind == "min" and not manifest["min_vs_fd"]["agrees"]:
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_front(scen: Scenario, t: float, out: Path) -> int:
    if t < 0 or t > scen.horizon + 1e-12:
        raise ScenarioError(f"--t {t} outside the scenario horizon "
                            f"[0, {scen.horizon}]")
    fam = OneStepFamily(0.0, float(t), scen.model, scen.v, scen.flow_config)
    rows = wavefront(fam, scen.x_domain, scen.n_x)
    tag = f"{scen.name}_front_t{t:.6g}"
    write_csv(out / f"{tag}.csv", ["x", "u", "branch_id", "from_kink"],
              front_rows(rows))

    xg = scen.x_grid
    step = step_operator(scen.model, scen.v, 0.0, float(t), xg,
                         scen.flow_config, resolution=scen.fiber_resolution)
    write_csv(out / f"{tag}_minmax.csv", ["x", "u"],
              [(float(x), float(u)) for x, u in zip(xg, step.values)])
    manifest = _base_manifest(scen)
    manifest["front"] = {"t": float(t), "n_branches_max":
                         int(max((r[2] for r in rows), default=-1)) + 1,
                         "selector": {"tolerance": step.tolerance,
                                      "value_error": step.value_error}}
    write_json(out / f"{tag}_manifest.json", manifest)
    return EXIT_OK


def cmd_study(scen: Scenario, out: Path) -> int:
    if len(scen.schedules) < 3:
        raise ScenarioError(
            f"a study needs at least 3 schedules, got {scen.schedules}")
    xg = scen.x_grid
    scheds = [SubdivisionSchedule.uniform(scen.horizon, n)
              for n in scen.schedules]
    all_times = np.unique(np.concatenate([s.times for s in scheds]))
    oracle = fd_viscosity(scen.model, scen.v, scen.horizon, xg,
                          scen.fd_config, record_times=all_times)
    rows = convergence_study(scen.model, scen.v, scheds, xg, oracle,
                             scen.flow_config, target=scen.target,
                             resolution=scen.fiber_resolution, strict=False)
    problems = study_violations(rows, scen.target)
    doc = _base_manifest(scen)
    doc["oracle"] = {"scheme": "fd_viscosity", "dx": scen.fd_dx,
                     "cfl": scen.cfl}
    doc["target"] = scen.target
    doc["slack"] = 1.2
    doc["floor"] = 1e-4
    doc["rows"] = [{"n_steps": r.n_steps, "mesh": r.mesh,
                    "sup_error": r.sup_error, "rate": r.rate} for r in rows]
    doc["violations"] = problems
    doc["pass"] = not problems
    write_json(out / f"{scen.name}_study.json", doc)
    return EXIT_OK if not problems else EXIT_NUMERIC


def cmd_check(scen: Scenario, out: Path) -> int:
    xg = scen.x_grid
    cfg = scen.flow_config
    T = scen.horizon
    win = momentum_window(scen.model, scen.v, T, scen.x_domain)
    report = _base_manifest(scen)
    flags: list[str] = []

    measured_cH = check_cH_bound(
        scen.model, ((0.0, T), scen.x_domain,
                     (win["y_lo"] - 0.5, win["y_hi"] + 0.5)))
    report["c_H"] = {"declared": scen.model.c_H_bound,
                     "measured": measured_cH}

    n_iter = min(4, max(scen.schedules))
    fld = iterate(scen.model, scen.v,
                  SubdivisionSchedule.uniform(T, n_iter), xg, cfg,
                  resolution=scen.fiber_resolution)
    lip = lipschitz_report(fld, scen.model, scen.v,
                           value_tol=scen.value_tolerance)
    report["lipschitz"] = lip
    if not (lip["space_ok"] and lip["time_ok"]):
        flags.append("LIPSCHITZ_VIOLATION")

    # critical-value snapping on a one-step solve across the window
    tau = T if scen.model.p_only else min(T, 0.45 * scen.model.delta_H)
    step = step_operator(scen.model, scen.v, 0.0, tau, xg, cfg,
                         resolution=scen.fiber_resolution)
    n_unsnapped = sum(r.match_gap > r.tolerance for r in step.diagnostics)
    report["critical_value"] = {
        "t": tau,
        "max_match_gap": max(r.match_gap for r in step.diagnostics),
        "max_tolerance": step.tolerance,
        "n_unsnapped": n_unsnapped,
        "n_refined": sum(r.refined for r in step.diagnostics),
    }
    if n_unsnapped:
        flags.append("UNSNAPPED_VALUES")

    # graph-selector measurement (reported, never asserted): when H depends
    # on p alone, d/dx S(x; x0, y0) = y0, so the slope of the selected value
    # should lie in the hull of the critical momenta at each grid point.
    fam = OneStepFamily(0.0, tau, scen.model, scen.v, cfg)
    if scen.model.p_only:
        crits = critical_points_batch(fam, xg)
        slopes = np.gradient(step.values, xg)
        dx = float(xg[1] - xg[0])
        margin = 2.0 * step.tolerance / dx + 0.5 * win["y_radius"] * dx + 1e-6
        inside = sum(
            1 for j in range(xg.size) if crits[j][1].size
            and float(np.min(crits[j][1])) - margin <= slopes[j]
            <= float(np.max(crits[j][1])) + margin)
        report["graph_selector"] = {
            "fraction_in_momentum_hull": inside / xg.size,
            "slope_margin": margin,
        }

    # C0-stability probes: uniformly small PL perturbations of the datum
    box = fiber_box(fam, scen.x_domain, resolution=scen.fiber_resolution)
    rng = np.random.default_rng(20260815)
    reach = T * win["speed"] + 1.0
    xs = np.linspace(scen.x_domain[0] - reach, scen.x_domain[1] + reach, 801)
    probes = []
    for _ in range(3):
        eps = 0.01
        bump = eps * np.cos(rng.uniform(1.0, 3.0) * xs + rng.uniform(0, 6.0))
        v_b = PiecewiseFunction.from_samples(xs, scen.v(xs) + bump)
        fam_b = OneStepFamily(0.0, tau, scen.model, v_b, cfg)
        x_probe = float(rng.uniform(scen.x_domain[0], scen.x_domain[1]))
        probes.append(stability_gap(fam, fam_b, x_probe, box))
    report["stability_probes"] = probes

    defect = semigroup_defect(scen.model, scen.v, T / 2.0, T, xg, cfg,
                              resolution=scen.fiber_resolution)
    threshold = 10.0 * scen.value_tolerance
    report["semigroup"] = {"defect": defect, "threshold": threshold}
    if defect > threshold:
        flags.append("EXPECTED_NONSEMIGROUP")
    else:
        flags.append("SEMIGROUP_OK")

    report["flags"] = sorted(flags)
    write_json(out / f"{scen.name}_check.json", report)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hjminmax",
        description="Iterated minmax solver for 1-D Hamilton-Jacobi "
                    "equations, with viscosity-solution oracles.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("solve", "solve the scenario and write a field CSV + manifest"),
            ("front", "export the multivalued wavefront and minmax section"),
            ("study", "run the subdivision convergence study"),
            ("check", "run property checks and write a report")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("scenario", help="path to a scenario JSON file")
        p.add_argument("--out", default="runs", help="output directory")
        if name == "solve":
            p.add_argument("--scheme", default="iterated",
                           help="minmax | iterated[:n] | min | fd")
        if name == "front":
            p.add_argument("--t", type=float, required=True,
                           help="front time within the horizon")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        scen = load_scenario(args.scenario)
        out = Path(args.out)
        if args.command == "solve":
            code = cmd_solve(scen, args.scheme, out)
        elif args.command == "front":
            code = cmd_front(scen, args.t, out)
        elif args.command == "study":
            code = cmd_study(scen, out)
        else:
            code = cmd_check(scen, out)
    except CertificationError as exc:
        print(f"certification failure: {exc}", file=sys.stderr)
        return EXIT_CERTIFICATION
    except ValueError as exc:
        # ScenarioError and all library precondition/validation failures
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, AssertionError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return code


if __name__ == "__main__":
    sys.exit(main())
