"""Command-line front end: scenario loading, dispatch, CSV/JSON emission.

Scenario files are JSON documents naming a builtin system (or a plugin
registered at build time through ``register_plugin``) plus command-specific
blocks.  Tabulated vector fields are rejected; dynamics must be executable
code.  All artifacts are written atomically (temp file + rename) together
with a run manifest recording versions, tolerances and the input hash.

Exit codes: 0 success, 2 validation error, 3 numeric failure, 4 condition
violation (failed A2/A6 or a branch crossing).
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys as _sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .core import (PerturbedFamily, SampleSpec, SystemDef, builtin_names,
                   builtin_system, validate_conditions)
from .integrate import (SimOptions, b_distance, events_csv, simulate,
                        simulate_backward, trajectory_csv)
from .graze import find_grazing_on_orbit, classify_point, axial_flag
from .linearize import (A2VerificationError, LinearizeOptions,
                        assemble_branches, w_jacobian)
from .floquet import monodromy, stability_verdict, liouville_defect
from .continuation import (A6ViolationError, BranchCrossingError,
                           ContinuationOptions, NoConvergence, PeriodicOrbit,
                           bifurcation_scan, builtin_seeds, find_periodic,
                           stability_of)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3
EXIT_CONDITION = 4

_PLUGINS: dict[str, object] = {}


def register_plugin(name: str, system) -> None:
    """Register a host-language system definition for scenario use."""
    _PLUGINS[name] = system


class ScenarioError(ValueError):
    pass


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def load_scenario(path: Path) -> dict:
    try:
        raw = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc}") from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a JSON object")
    if "tabulated" in doc:
        raise ScenarioError("tabulated systems are rejected; dynamics must "
                            "come from builtins or registered plugins")
    doc["_sha256"] = hashlib.sha256(raw.encode()).hexdigest()
    return doc


def resolve_system(doc: dict):
    name = doc.get("system")
    if not isinstance(name, str):
        raise ScenarioError("scenario must name a 'system'")
    if isinstance(doc.get("dynamics"), (list, dict)):
        raise ScenarioError(
            "tabulated dynamics are rejected; use a builtin or a plugin")
    if name in _PLUGINS:
        return _PLUGINS[name]
    try:
        return builtin_system(name)
    except KeyError as exc:
        raise ScenarioError(str(exc)) from exc


def _sim_options(doc: dict, tol_scale: float) -> SimOptions:
    tols = dict(doc.get("tolerances", {}))
    base = SimOptions()
    fields = {f.name for f in dataclasses.fields(SimOptions)}
    unknown = set(tols) - fields
    if unknown:
        raise ScenarioError(f"unknown tolerance keys: {sorted(unknown)}")
    for key, val in tols.items():
        if not isinstance(val, (int, float)) or val <= 0:
            raise ScenarioError(f"tolerance {key} must be positive")
    merged = dataclasses.replace(base, **tols)
    scaled = {}
    for name in ("rtol", "atol", "event_phi_tol", "event_time_tol",
                 "graze_phi_tol", "graze_rel_tol", "boundary_tol"):
        scaled[name] = getattr(merged, name) * tol_scale
    return dataclasses.replace(merged, **scaled)


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _manifest(doc: dict, args, opts: SimOptions, outputs: list[str]) -> str:
    return json.dumps({
        "tool": "grazedyn",
        "version": __version__,
        "numpy": np.__version__,
        "command": args.command,
        "scenario_sha256": doc.get("_sha256"),
        "seed": args.seed,
        "tol_scale": args.tol_scale,
        "tolerances": dataclasses.asdict(opts),
        "outputs": outputs,
    }, indent=2, sort_keys=True)


def _base_system(obj):
    return obj.base if isinstance(obj, PerturbedFamily) else obj


def _json_matrix(mat: np.ndarray) -> list[str]:
    return [_fmt(v) for v in np.asarray(mat, dtype=float).reshape(-1)]


def _cycle_block(doc: dict, sysd: SystemDef):
    blk = doc.get("cycle", {})
    meta = sysd.metadata.get("cycle", {})
    start = blk.get("start", meta.get("start"))
    period = blk.get("period", meta.get("period"))
    if start is None or period is None:
        raise ScenarioError("no cycle block and no builtin cycle metadata")
    if not (isinstance(period, (int, float)) and period > 0):
        raise ScenarioError("cycle period must be positive")
    return np.asarray(start, dtype=float), float(period)


# ---------------------------------------------------------------------------
# command implementations
# ---------------------------------------------------------------------------

def _cmd_validate(doc, system, outdir, opts, args):
    sysd = _base_system(system)
    spec = SampleSpec(seed=args.seed)
    rep = validate_conditions(sysd, spec)
    _atomic_write(outdir / "conditions.json", rep.to_json(indent=2, sort_keys=True))
    return ["conditions.json"]


def _cmd_simulate(doc, system, outdir, opts, args):
    sysd = _base_system(system)
    mu = doc.get("mu", 0.0)
    if isinstance(system, PerturbedFamily):
        sysd = system.instantiate(float(mu))
    x0 = doc.get("initial_state")
    window = doc.get("t_span")
    if x0 is None or window is None or len(window) != 2 or window[0] == window[1]:
        raise ScenarioError("simulate needs initial_state and a nonempty t_span")
    t0, t1 = float(window[0]), float(window[1])
    if t1 > t0:
        traj = simulate(sysd, np.asarray(x0, dtype=float), t0, t1, opts)
    else:
        traj = simulate_backward(sysd, np.asarray(x0, dtype=float), t0, t1, opts)
    _atomic_write(outdir / "trajectory.csv", trajectory_csv(traj))
    _atomic_write(outdir / "events.csv", events_csv(traj))
    grazes = find_grazing_on_orbit(traj)
    summary = {
        "events": len(traj.events),
        "grazing_contacts": [
            {"point": g.point.tolist(), "surface": g.surface,
             "inner_product": g.inner_product, "axial": g.axial,
             "zero_gradient_coords": list(g.zero_gradient_coords)}
            for g in grazes],
        "terminal_state": traj.terminal_state.tolist(),
        "exit": traj.arcs[-1].exit,
    }
    _atomic_write(outdir / "report.json", json.dumps(summary, indent=2))
    return ["trajectory.csv", "events.csv", "report.json"]


def _cmd_classify(doc, system, outdir, opts, args):
    sysd = _base_system(system)
    pt = doc.get("point")
    if pt is None:
        raise ScenarioError("classify needs a 'point'")
    side = doc.get("side", "forward")
    kind = classify_point(sysd, np.asarray(pt, dtype=float), side,
                          boundary_tol=opts.boundary_tol,
                          graze_rel_tol=opts.graze_rel_tol)
    out = {"point": list(map(float, pt)), "side": side, "type": kind}
    if kind.startswith("gamma"):
        ax, coords = axial_flag(sysd, np.asarray(pt, dtype=float))
        out["axial"] = ax
        out["zero_gradient_coords"] = list(coords)
    _atomic_write(outdir / "classification.json", json.dumps(out, indent=2))
    return ["classification.json"]


def _linearization(doc, system, opts):
    sysd = _base_system(system)
    start, period = _cycle_block(doc, sysd)
    lopts = LinearizeOptions(sim=dataclasses.replace(
        opts, event_phi_tol=min(opts.event_phi_tol, 1e-12),
        event_time_tol=min(opts.event_time_tol, 1e-13)))
    traj = simulate(sysd, start, 0.0, period, opts)
    branches = assemble_branches(sysd, traj, period, lopts)
    report = {"period": period, "events": [], "branches": []}
    for ev in traj.events:
        entry = {"theta": ev.theta, "patch": ev.patch, "type": ev.point_type,
                 "axial": ev.axial, "transversality": ev.transversality}
        if ev.is_grazing:
            res = w_jacobian(sysd, ev.pre_state, ev.theta, lopts)
            entry["w_jacobian"] = _json_matrix(res.matrix)
            entry["A2"] = res.condition_A2
        report["events"].append(entry)
    for br in branches:
        report["branches"].append({
            "branch": br.branch_id,
            "assignment": list(br.assignment),
            "jump_times": list(br.jump_times),
            "jump_matrices": [_json_matrix(m) for m in br.jump_matrices],
        })
    return sysd, traj, branches, report


def _cmd_linearize(doc, system, outdir, opts, args):
    _, _, _, report = _linearization(doc, system, opts)
    _atomic_write(outdir / "linearization.json", json.dumps(report, indent=2))
    return ["linearization.json"]


def _cmd_floquet(doc, system, outdir, opts, args):
    _, _, branches, report = _linearization(doc, system, opts)
    monos = [monodromy(b) for b in branches]
    verdict = stability_verdict(monos, unit_tol=doc.get("unit_tol", 5e-3))
    out = {
        "branches": [
            {"branch": m.branch_id,
             "monodromy": _json_matrix(m.U_omega),
             "multipliers": [[z.real, z.imag] for z in m.multipliers],
             "unit_multiplier_defect": m.unit_multiplier_defect,
             "liouville_defect": liouville_defect(b)}
            for m, b in zip(monos, branches)],
        "verdict": verdict.to_dict(),
        "unit_tol": doc.get("unit_tol", 5e-3),
    }
    _atomic_write(outdir / "floquet.json", json.dumps(out, indent=2))
    return ["floquet.json"]


def _cmd_continue(doc, system, outdir, opts, args):
    blk = doc.get("continue", {})
    mu = float(blk.get("mu", doc.get("mu", 0.0)))
    copts = ContinuationOptions(sim=dataclasses.replace(opts, rtol=max(opts.rtol, 1e-11)))
    if "seed" in blk:
        s = blk["seed"]
        seed = PeriodicOrbit(T=float(s["T"]), zeta=np.asarray(s["zeta"], dtype=float),
                             fixed_index=int(s.get("fixed_index", 0)),
                             fixed_value=float(s.get("fixed_value", s["zeta"][int(s.get("fixed_index", 0))])))
    else:
        seed = builtin_seeds(system, blk.get("strategy", "continuous"))
    orb = find_periodic(system, mu, seed, copts)
    sysmu = system.instantiate(mu) if isinstance(system, PerturbedFamily) else system
    try:
        orb.stability = stability_of(orb, sysmu)
    except Exception:
        pass
    out = {
        "mu": mu, "T": orb.T, "zeta": orb.zeta.tolist(),
        "residual_norm": orb.residual_norm, "det_A6": orb.det_A6,
        "events_per_period": orb.events_per_period,
        "stability": orb.stability.to_dict() if orb.stability else "unknown",
    }
    _atomic_write(outdir / "orbit.json", json.dumps(out, indent=2))
    return ["orbit.json"]


def _cmd_bifurcate(doc, system, outdir, opts, args):
    blk = doc.get("bifurcate", {})
    grid = blk.get("mu_grid")
    if not grid:
        raise ScenarioError("bifurcate needs a nonempty mu_grid")
    strategies = blk.get("seed_strategies")
    copts = ContinuationOptions(sim=dataclasses.replace(opts, rtol=max(opts.rtol, 1e-11)))
    table = bifurcation_scan(system, grid, strategies, copts)
    _atomic_write(outdir / "bifurcation.csv", table.to_csv())
    _atomic_write(outdir / "bifurcation.json", json.dumps(table.to_dict(), indent=2))
    return ["bifurcation.csv", "bifurcation.json"]


_COMMANDS = {
    "validate": _cmd_validate,
    "simulate": _cmd_simulate,
    "classify": _cmd_classify,
    "linearize": _cmd_linearize,
    "floquet": _cmd_floquet,
    "continue": _cmd_continue,
    "bifurcate": _cmd_bifurcate,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="grazedyn",
        description="impulsive dynamics with grazing orbits: simulation, "
                    "linearization, Floquet analysis, continuation")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--scenario", required=True, type=Path)
        p.add_argument("--out", required=True, type=Path)
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--tol-scale", dest="tol_scale", type=float, default=1.0)
    args = parser.parse_args(argv)

    try:
        doc = load_scenario(args.scenario)
        system = resolve_system(doc)
        opts = _sim_options(doc, args.tol_scale)
        outdir = args.out
        outputs = _COMMANDS[args.command](doc, system, outdir, opts, args)
        _atomic_write(outdir / "run-manifest.json", _manifest(doc, args, opts, outputs))
    except ScenarioError as exc:
        print(json.dumps({"error": "validation", "detail": str(exc)}),
              file=_sys.stderr)
        return EXIT_VALIDATION
    except (A2VerificationError, A6ViolationError, BranchCrossingError) as exc:
        print(json.dumps({"error": "condition-violation",
                          "detail": f"{type(exc).__name__}: {exc}"}),
              file=_sys.stderr)
        return EXIT_CONDITION
    except (NoConvergence, ArithmeticError, RuntimeError) as exc:
        print(json.dumps({"error": "numeric", "detail": f"{type(exc).__name__}: {exc}"}),
              file=_sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
