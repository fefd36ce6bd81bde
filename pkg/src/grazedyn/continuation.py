"""Periodic-orbit location and parameter scans for perturbed families.

Periodicity is imposed through the fixed-time residual S(T, zeta) =
x(T+; zeta) - zeta with one coordinate of zeta pinned, solved by a damped
Newton iteration in (T, free zeta components) with a finite-difference
Jacobian.  All residual evaluations inside one Jacobian/Newton run are
locked to the event-count signature of the base point; a probe that
changes the signature is a branch crossing and the step is shrunk.

Orbits are anchored at points away from discontinuity moments (the fixed
coordinate is the one maximising |f_j| at the anchor); anchoring on the
surface itself would put an event at the period endpoint where the
residual is one-sided.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import brentq

from .core import PerturbedFamily, StateVec, SystemDef, as_state
from .integrate import SimOptions, Trajectory, simulate
from .linearize import LinearizeOptions, assemble_branches
from .floquet import monodromy, stability_verdict, StabilityVerdict


class ResidualUnavailable(RuntimeError):
    pass


class BranchCrossingError(RuntimeError):
    pass


class A6ViolationError(RuntimeError):
    pass


class NoConvergence(RuntimeError):
    pass


@dataclass(frozen=True)
class ContinuationOptions:
    sim: SimOptions = SimOptions(rtol=1e-11, atol=1e-13)
    newton_tol: float = 1e-9
    step_tol: float = 1e-10
    max_iter: int = 50
    fd_rel_step: float = 1e-6
    det_floor: float = 1e-8
    dedup_radius: float = 1e-4
    endpoint_window: float = 1e-6     # events within this of T close the period
    max_period_factor: float = 3.0


@dataclass
class PeriodicOrbit:
    """A located (or seed) periodic orbit of one family member."""

    T: float
    zeta: StateVec
    fixed_index: int                  # 0-based pinned coordinate of zeta
    fixed_value: float
    events_per_period: int = -1
    residual_norm: float = math.inf
    det_A6: float = math.nan
    signature: tuple = ()
    stability: StabilityVerdict | None = None
    trajectory: Trajectory | None = None
    canonical: tuple | None = None    # (T, apex state) used for dedup

    def unknowns(self) -> np.ndarray:
        free = [v for i, v in enumerate(self.zeta) if i != self.fixed_index]
        return np.array([self.T] + free)

    def with_unknowns(self, u: np.ndarray) -> "PeriodicOrbit":
        zeta = np.empty_like(np.asarray(self.zeta, dtype=float))
        zeta[self.fixed_index] = self.fixed_value
        free_idx = [i for i in range(zeta.size) if i != self.fixed_index]
        for k, i in enumerate(free_idx):
            zeta[i] = u[k + 1]
        return replace(self, T=float(u[0]), zeta=zeta)


def _family_member(family: PerturbedFamily | SystemDef, mu: float) -> SystemDef:
    if isinstance(family, PerturbedFamily):
        return family.instantiate(mu)
    if mu != 0.0:
        raise ValueError("a plain SystemDef only has mu = 0")
    return family


def _end_state(traj: Trajectory, T: float, window: float) -> np.ndarray:
    x = traj.terminal_state
    if traj.events and abs(traj.events[-1].theta - T) <= window:
        x = traj.events[-1].post_state.copy()
    return x


def _signature(traj: Trajectory, T: float, window: float) -> tuple:
    counts: dict[str, int] = {}
    for ev in traj.events:
        if ev.theta <= T + window:
            counts[ev.patch] = counts.get(ev.patch, 0) + 1
    return tuple(sorted(counts.items()))


def poincare_residual(family: PerturbedFamily | SystemDef, mu: float, T: float,
                      zeta: StateVec, fixed_index: int,
                      opts: ContinuationOptions = ContinuationOptions(),
                      ) -> tuple[np.ndarray, tuple, Trajectory]:
    """Residual S = x(T+) - zeta with full event handling.

    Returns (S, event signature, trajectory).  A jump within the endpoint
    window of T is applied to the returned state, so cycles whose anchor
    sits just after a jump close exactly.
    """
    sysmu = _family_member(family, mu)
    zeta = as_state(zeta, sysmu.dim)
    if T <= 0:
        raise ResidualUnavailable("non-positive period")
    try:
        traj = simulate(sysmu, zeta, 0.0, T, opts.sim)
    except Exception as exc:  # propagate as residual failure
        raise ResidualUnavailable(str(exc)) from exc
    x_T = _end_state(traj, T, opts.endpoint_window)
    return x_T - zeta, _signature(traj, T, opts.endpoint_window), traj


def continuation_jacobian(family: PerturbedFamily | SystemDef, mu: float,
                          orbit: PeriodicOrbit,
                          opts: ContinuationOptions = ContinuationOptions(),
                          base_signature: tuple | None = None,
                          ) -> tuple[np.ndarray, float]:
    """Central-difference Jacobian of S in (T, free zeta), branch locked.

    Columns are dS/dT then dS/dzeta_i for the free coordinates in
    ascending index order.  A probe whose event-count signature differs
    from the base point is retried with a halved step, three times, then
    raises BranchCrossingError.
    """
    if base_signature is None:
        _, base_signature, _ = poincare_residual(
            family, mu, orbit.T, orbit.zeta, orbit.fixed_index, opts)
    u0 = orbit.unknowns()
    n = len(orbit.zeta)
    cols = []
    for k in range(n):
        h0 = opts.fd_rel_step * max(1.0, abs(u0[k]))
        h = h0
        for attempt in range(4):
            try:
                up = u0.copy()
                um = u0.copy()
                up[k] += h
                um[k] -= h
                op = orbit.with_unknowns(up)
                om = orbit.with_unknowns(um)
                sp, sigp, _ = poincare_residual(family, mu, op.T, op.zeta,
                                                op.fixed_index, opts)
                sm, sigm, _ = poincare_residual(family, mu, om.T, om.zeta,
                                                om.fixed_index, opts)
            except ResidualUnavailable:
                h *= 0.5
                continue
            if sigp == base_signature and sigm == base_signature:
                cols.append((sp - sm) / (2.0 * h))
                break
            h *= 0.5
        else:
            raise BranchCrossingError(
                f"finite-difference probe for unknown {k} keeps crossing the "
                f"event-count branch at mu={mu:g}")
    mat = np.column_stack(cols)
    return mat, float(np.linalg.det(mat))


def find_periodic(family: PerturbedFamily | SystemDef, mu: float,
                  seed: PeriodicOrbit,
                  opts: ContinuationOptions = ContinuationOptions(),
                  ) -> PeriodicOrbit:
    """Damped Newton refinement of a periodic orbit, branch locked to the
    seed's event-count signature."""
    orbit = seed
    s, sig, traj = poincare_residual(family, mu, orbit.T, orbit.zeta,
                                     orbit.fixed_index, opts)
    res = float(np.linalg.norm(s))
    if res <= opts.newton_tol:
        return _finalize(family, mu, orbit, res, math.nan, sig, opts)

    for _ in range(opts.max_iter):
        jac, det = continuation_jacobian(family, mu, orbit, opts, sig)
        if abs(det) < opts.det_floor:
            raise A6ViolationError(
                f"continuation Jacobian determinant {det:.3e} below the floor")
        step = np.linalg.solve(jac, -s)
        lam = 1.0
        accepted = False
        while lam >= 1e-4:
            cand = orbit.with_unknowns(orbit.unknowns() + lam * step)
            if not (0.0 < cand.T <= seed.T * opts.max_period_factor):
                lam *= 0.5
                continue
            try:
                s_new, sig_new, _ = poincare_residual(
                    family, mu, cand.T, cand.zeta, cand.fixed_index, opts)
            except ResidualUnavailable:
                lam *= 0.5
                continue
            res_new = float(np.linalg.norm(s_new))
            if sig_new == sig and (res_new < res or res_new <= opts.newton_tol):
                orbit, s, res = cand, s_new, res_new
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            raise NoConvergence(
                f"Newton stalled at residual {res:.3e} (branch-locked)")
        if res <= opts.newton_tol and lam * float(np.linalg.norm(step)) <= \
                opts.step_tol * (1.0 + float(np.linalg.norm(orbit.unknowns()))):
            return _finalize(family, mu, orbit, res, det, sig, opts)
    raise NoConvergence(f"no convergence after {opts.max_iter} iterations "
                        f"(residual {res:.3e})")


def _finalize(family, mu, orbit: PeriodicOrbit, res: float, det: float,
              sig: tuple, opts: ContinuationOptions) -> PeriodicOrbit:
    sysmu = _family_member(family, mu)
    traj = simulate(sysmu, orbit.zeta, 0.0, orbit.T, opts.sim)
    n_events = sum(cnt for _, cnt in _signature(traj, orbit.T, opts.endpoint_window))
    if math.isnan(det):
        try:
            _, det = continuation_jacobian(family, mu, orbit, opts, sig)
        except BranchCrossingError:
            det = math.nan
    canon = _canonical_anchor(traj, orbit.T, sysmu)
    return replace(orbit, residual_norm=res, det_A6=det, signature=sig,
                   events_per_period=n_events, trajectory=traj,
                   canonical=canon)


def _canonical_anchor(traj: Trajectory, T: float, sysmu: SystemDef) -> tuple:
    """Phase-independent representative: the orbit point maximising x1,
    refined as a zero of dx1/dt; used for deduplication."""
    best_t, best_x1 = traj.t_start, -np.inf
    for arc in traj.arcs:
        for t, x in zip(arc.ts, arc.states):
            if x[0] > best_x1:
                best_t, best_x1 = float(t), float(x[0])

    def dx1(t):
        return float(sysmu.field_at(traj.eval(t))[0])

    lo = max(traj.t_start, best_t - 0.5)
    hi = min(traj.t_end, best_t + 0.5)
    try:
        if dx1(lo) * dx1(hi) < 0:
            t_apex = brentq(dx1, lo, hi, xtol=1e-12)
        else:
            t_apex = best_t
    except ValueError:
        t_apex = best_t
    apex = traj.eval(t_apex)
    return (float(T), tuple(float(v) for v in apex))


def stability_of(orbit: PeriodicOrbit, sysmu: SystemDef,
                 lin_opts: LinearizeOptions = LinearizeOptions(),
                 unit_tol: float = 5e-3) -> StabilityVerdict:
    """Verdict of a located orbit from its variational branches."""
    if orbit.trajectory is None:
        raise ValueError("orbit carries no trajectory")
    branches = assemble_branches(sysmu, orbit.trajectory, orbit.T, lin_opts)
    mono = [monodromy(b) for b in branches]
    return stability_verdict(mono, unit_tol)


# ---------------------------------------------------------------------------
# Seeds and scans
# ---------------------------------------------------------------------------

def builtin_seeds(family: PerturbedFamily | SystemDef,
                  strategy: str) -> PeriodicOrbit:
    """Deterministic seeds for the builtin families, anchored off-event.

    The nudges into the impacting region are of relative size ~1e-3, large
    enough to give finite-difference probes a stable event signature.
    """
    name = family.name if hasattr(family, "name") else ""
    if name.startswith("impact-cycle"):
        if strategy == "continuous":
            return PeriodicOrbit(T=2.0 * math.pi, zeta=np.array([2.0, 0.0]),
                                 fixed_index=1, fixed_value=0.0)
        if strategy == "one-event":
            return PeriodicOrbit(T=2.0 * math.pi, zeta=np.array([1.0, -1.003]),
                                 fixed_index=0, fixed_value=1.0)
    if name.startswith("perturbed-impact"):
        if strategy == "one-event":
            return PeriodicOrbit(T=math.pi, zeta=np.array([0.95, 0.0]),
                                 fixed_index=1, fixed_value=0.0)
        if strategy == "two-event":
            return PeriodicOrbit(T=math.pi, zeta=np.array([0.35, 0.959]),
                                 fixed_index=0, fixed_value=0.35)
    if name.startswith("spiral-impact"):
        if strategy == "two-event":
            base = family.base if isinstance(family, PerturbedFamily) else family
            v0 = base.metadata["cycle"]["start"][1]
            return PeriodicOrbit(T=math.pi, zeta=np.array([0.35, 0.959 * v0 / 0.9375]),
                                 fixed_index=0, fixed_value=0.35)
    raise KeyError(f"no builtin seed strategy {strategy!r} for family {name!r}")


@dataclass
class BifurcationTable:
    mu_grid: tuple[float, ...]
    orbits: dict = field(default_factory=dict)      # mu -> list[PeriodicOrbit]
    failures: list = field(default_factory=list)    # (mu, strategy, message)

    def count(self, mu: float) -> int:
        return len(self.orbits.get(mu, []))

    def counts_by_events(self, mu: float) -> dict[int, int]:
        out: dict[int, int] = {}
        for orb in self.orbits.get(mu, []):
            out[orb.events_per_period] = out.get(orb.events_per_period, 0) + 1
        return out

    def to_csv(self) -> str:
        if not self.orbits:
            dims = 0
        else:
            dims = len(next(iter(self.orbits.values()))[0].zeta) if any(
                self.orbits.values()) else 0
        head = ["mu", "orbit_id", "T"] + [f"zeta_{i+1}" for i in range(dims)]
        head += ["events_per_period", "det_A6", "stable"]
        lines = [",".join(head)]
        for mu in self.mu_grid:
            for k, orb in enumerate(self.orbits.get(mu, [])):
                stab = orb.stability.status if orb.stability is not None else "unknown"
                row = [f"{mu:.17g}", str(k), f"{orb.T:.17g}"]
                row += [f"{v:.17g}" for v in orb.zeta]
                row += [str(orb.events_per_period), f"{orb.det_A6:.17g}", stab]
                lines.append(",".join(row))
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        out = {"mu_grid": list(self.mu_grid), "cells": [], "failures": [
            {"mu": m, "strategy": s, "error": e} for m, s, e in self.failures]}
        for mu in self.mu_grid:
            cell = []
            for orb in self.orbits.get(mu, []):
                entry = {
                    "T": orb.T, "zeta": np.asarray(orb.zeta).tolist(),
                    "events_per_period": orb.events_per_period,
                    "residual": orb.residual_norm, "det_A6": orb.det_A6,
                }
                if orb.stability is not None:
                    entry["stability"] = orb.stability.to_dict()
                cell.append(entry)
            out["cells"].append({"mu": mu, "orbits": cell})
        return out


def bifurcation_scan(family: PerturbedFamily | SystemDef,
                     mu_grid: Sequence[float],
                     seed_strategies: Sequence[str] | None = None,
                     opts: ContinuationOptions = ContinuationOptions(),
                     lin_opts: LinearizeOptions | None = None,
                     with_stability: bool = True) -> BifurcationTable:
    """Locate periodic orbits on a parameter grid from several seeds.

    Converged orbits of one grid cell are deduplicated by their canonical
    (period, apex point) representative; individual failures are recorded
    and the scan continues.
    """
    if seed_strategies is None:
        meta = getattr(family, "base", family).metadata
        seed_strategies = meta.get("seed_strategies", ("continuous",))
    lin_opts = lin_opts or LinearizeOptions(sim=opts.sim)
    table = BifurcationTable(mu_grid=tuple(float(m) for m in mu_grid))
    for mu in table.mu_grid:
        found: list[PeriodicOrbit] = []
        for strategy in seed_strategies:
            try:
                seed = builtin_seeds(family, strategy)
                orb = find_periodic(family, mu, seed, opts)
            except (A6ViolationError, BranchCrossingError, NoConvergence,
                    ResidualUnavailable, KeyError) as exc:
                table.failures.append((mu, strategy, f"{type(exc).__name__}: {exc}"))
                continue
            if any(_same_orbit(orb, o, opts.dedup_radius) for o in found):
                continue
            if with_stability:
                try:
                    orb.stability = stability_of(orb, _family_member(family, mu),
                                                 lin_opts)
                except Exception as exc:
                    table.failures.append((mu, strategy,
                                           f"stability: {type(exc).__name__}: {exc}"))
            found.append(orb)
        table.orbits[mu] = found
    return table


def _same_orbit(a: PeriodicOrbit, b: PeriodicOrbit, radius: float) -> bool:
    if a.canonical is None or b.canonical is None:
        return False
    ta, xa = a.canonical
    tb, xb = b.canonical
    gap = max(abs(ta - tb), max(abs(u - v) for u, v in zip(xa, xb)))
    return gap <= radius
