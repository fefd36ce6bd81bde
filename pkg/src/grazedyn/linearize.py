"""Linearization of the flow at discontinuity points.

The reduction map W composes flow-to-surface, jump, and flow-back at a
fixed reference moment.  At a transversal hit its Jacobian has the closed
form

    W_x = (f(x) - f(J(x))) grad_tau^T + dI/dx (Id + f(x) grad_tau^T),

with grad_tau = -grad_phi / <grad_phi, f>.  At a grazing point grad_tau
blows up; the bounded combination

    (f(x) - f(J(x))) grad_tau^T + dJ/dx (Id + f(x) grad_tau^T)

has entries polynomial in the approach coordinate along the surface, and
its one-sided limit at the tangency defines the grazing jump matrix.  The
limit annihilates the flow direction, which is the cross-check applied to
the numerically composed W map.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import StateVec, Surface, SurfacePatch, SystemDef, as_state
from .integrate import SimOptions, Trajectory, integrate_arc


class A3ViolationError(RuntimeError):
    pass


class A2VerificationError(RuntimeError):
    pass


class BranchBudgetError(RuntimeError):
    pass


@dataclass(frozen=True)
class LinearizeOptions:
    # meeting times are bracketed tighter than in plain simulation so that
    # finite differences of the composed W map stay below 1e-5 relative
    sim: SimOptions = SimOptions(event_phi_tol=1e-12, event_time_tol=1e-13)
    graze_deltas: tuple[float, ...] = (1e-2, 1e-3, 1e-4)
    a2_tol: float = 1e-3
    fd_step: float = 1e-5
    horizon: float = 2.0          # default (A3) search bound for the W map
    max_branch_events: int = 8


@dataclass
class WJacobianResult:
    matrix: np.ndarray
    mode: str                      # transversal-analytic | grazing-limit | finite-difference-check
    condition_A2: dict = field(default_factory=dict)

    def a2_verified(self) -> bool:
        return self.condition_A2.get("status") in ("verified", "not-applicable")


@dataclass
class VariationalBranch:
    """One periodic linear impulsive subsystem u' = A(t)u, Du = D_i u."""

    branch_id: int
    a_of_t: Callable[[float], np.ndarray]
    jump_times: tuple[float, ...]          # within (0, period]
    jump_matrices: tuple[np.ndarray, ...]
    period: float
    p: int
    assignment: tuple[str, ...] = ()       # N1/N2 label per beta/gamma event

    def jumps_in(self, t0: float, t1: float) -> list[tuple[float, np.ndarray]]:
        """Jump instants tiled periodically into (t0, t1]."""
        out = []
        if not self.jump_times:
            return out
        k0 = int(np.floor((t0 - max(self.jump_times)) / self.period)) - 1
        k1 = int(np.ceil((t1 - min(self.jump_times)) / self.period)) + 1
        for k in range(k0, k1 + 1):
            for jt, mat in zip(self.jump_times, self.jump_matrices):
                t = jt + k * self.period
                if t0 < t <= t1 + 1e-13:
                    out.append((t, mat))
        out.sort(key=lambda it: it[0])
        return out


def _surface_for(sys: SystemDef, x: StateVec, phi_tol: float = 1e-7,
                 bound_tol: float = 1e-6) -> Surface:
    for surf in sys.surfaces:
        if abs(surf.patch.phi(x)) <= phi_tol and surf.patch.in_bounds(x, bound_tol):
            return surf
    raise LookupError(f"point {np.asarray(x)} is not on any surface patch")


def grad_tau(sys: SystemDef, x: StateVec, patch: SurfacePatch,
             graze_rel_tol: float = 1e-7) -> np.ndarray | None:
    """Gradient of the meeting time at a surface point, or None at a
    tangency (the caller must use the grazing-limit path)."""
    x = as_state(x, sys.dim)
    grad = np.asarray(patch.grad_phi(x), dtype=float)
    f = sys.field_at(x)
    denom = float(np.dot(grad, f))
    scale = float(np.linalg.norm(grad) * np.linalg.norm(f)) + 1e-300
    if abs(denom) <= graze_rel_tol * scale:
        return None
    return -grad / denom


def w_map(sys: SystemDef, x: StateVec, theta_i: float = 0.0,
          opts: LinearizeOptions = LinearizeOptions(),
          patch: SurfacePatch | None = None,
          horizon: float | None = None) -> np.ndarray:
    """Reduction map W at a reference moment: flow to the surface meeting
    (either time direction), jump, flow back.  Zero when the solution does
    not meet the patch within the horizon."""
    x = as_state(x, sys.dim)
    if patch is None:
        patch = _surface_near(sys, x)
    surf = next(s for s in sys.surfaces if s.patch.label is patch.label
                or s.patch.label == patch.label)
    hor = opts.horizon if horizon is None else horizon
    sim = opts.sim

    if surf.patch.on_patch(x, sim.event_phi_tol, sim.boundary_tol):
        return np.asarray(surf.jump.j_of(x), dtype=float) - x

    meeting = _first_meeting(sys, surf.patch, x, hor, sim)
    if meeting is None:
        return np.zeros(sys.dim)
    tau_rel, m = meeting
    p = np.asarray(surf.jump.j_of(m), dtype=float)
    back = _flow(sys, p, -tau_rel, sim)
    return back - x


def _surface_near(sys: SystemDef, x: StateVec) -> SurfacePatch:
    best, dist = None, np.inf
    for surf in sys.surfaces:
        d = abs(surf.patch.phi(x))
        if d < dist:
            best, dist = surf.patch, d
    if best is None:
        raise LookupError("system has no surfaces")
    return best


def _flow(sys: SystemDef, x: StateVec, dt: float, sim: SimOptions) -> np.ndarray:
    """Raw flow (no events) for signed duration dt."""
    if dt == 0.0:
        return np.asarray(x, dtype=float).copy()
    fn = sys.field_at if dt > 0 else (lambda y: -sys.field_at(y))
    arc = integrate_arc(sys, x, 0.0, abs(dt), sim, patches=[], field_fn=fn)
    return arc.states[-1].copy()


def _first_meeting(sys: SystemDef, patch: SurfacePatch, x: StateVec,
                   horizon: float, sim: SimOptions):
    """Nearest in-patch meeting of the raw flow through x, searching both
    time directions up to the horizon.  Returns (tau_rel, point) or None."""
    cands = []
    for sign in (+1.0, -1.0):
        fn = sys.field_at if sign > 0 else (lambda y: -sys.field_at(y))
        arc = integrate_arc(sys, x, 0.0, horizon, sim, patches=[patch],
                            disarmed=set(), field_fn=fn)
        if arc.exit == f"surface-hit:{patch.label}":
            cands.append((sign * arc.t_end, arc.states[-1].copy()))
    if not cands:
        return None
    cands.sort(key=lambda c: abs(c[0]))
    return cands[0]


# ---------------------------------------------------------------------------
# W Jacobians
# ---------------------------------------------------------------------------

def _w_jac_transversal(sys: SystemDef, surf: Surface, x: StateVec) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    gt = grad_tau(sys, x, surf.patch)
    if gt is None:
        raise A3ViolationError("transversal formula used at a tangency")
    f_m = sys.field_at(x)
    p = np.asarray(surf.jump.j_of(x), dtype=float)
    f_p = sys.field_at(p)
    jjac = np.asarray(surf.jump.j_jacobian(x), dtype=float)
    ix = jjac - np.eye(sys.dim)
    proj = np.eye(sys.dim) + np.outer(f_m, gt)
    return np.outer(f_m - f_p, gt) + ix @ proj


def _w_jac_neutralized(sys: SystemDef, surf: Surface, x: StateVec) -> np.ndarray:
    """Bounded combination used for the grazing limit (dJ/dx in place of
    dI/dx); equals W_x + (Id + f grad_tau^T) at transversal points."""
    x = np.asarray(x, dtype=float)
    gt = grad_tau(sys, x, surf.patch)
    if gt is None:
        raise A3ViolationError("neutralized formula needs a transversal neighbor")
    f_m = sys.field_at(x)
    p = np.asarray(surf.jump.j_of(x), dtype=float)
    f_p = sys.field_at(p)
    jjac = np.asarray(surf.jump.j_jacobian(x), dtype=float)
    proj = np.eye(sys.dim) + np.outer(f_m, gt)
    return np.outer(f_m - f_p, gt) + jjac @ proj


def _project_to_patch(patch: SurfacePatch, x: StateVec, iters: int = 8) -> np.ndarray:
    y = np.asarray(x, dtype=float).copy()
    for _ in range(iters):
        val = patch.phi(y)
        if abs(val) < 1e-14:
            break
        g = np.asarray(patch.grad_phi(y), dtype=float)
        y = y - val * g / float(np.dot(g, g))
    return y


def _tangent_directions(patch: SurfacePatch, x: StateVec, dim: int,
                        rng: np.random.Generator) -> list[np.ndarray]:
    g = np.asarray(patch.grad_phi(x), dtype=float)
    g = g / np.linalg.norm(g)
    if dim == 2:
        t = np.array([-g[1], g[0]])
        return [t, -t]
    basis = [g]
    dirs = []
    while len(basis) < dim:
        v = rng.normal(size=dim)
        for b in basis:
            v -= np.dot(v, b) * b
        nrm = np.linalg.norm(v)
        if nrm > 1e-8:
            v /= nrm
            basis.append(v)
            dirs.extend([v, -v])
    return dirs


def w_jacobian_fd(sys: SystemDef, x: StateVec, theta_i: float = 0.0,
                  opts: LinearizeOptions = LinearizeOptions(),
                  patch: SurfacePatch | None = None) -> np.ndarray:
    """Central finite differences of the composed W map (check path)."""
    x = as_state(x, sys.dim)
    if patch is None:
        patch = _surface_near(sys, x)
    h = opts.fd_step
    cols = []
    for j in range(sys.dim):
        e = np.zeros(sys.dim)
        e[j] = max(h, h * abs(x[j]))
        wp = w_map(sys, x + e, theta_i, opts, patch=patch)
        wm = w_map(sys, x - e, theta_i, opts, patch=patch)
        cols.append((wp - wm) / (2.0 * e[j]))
    return np.column_stack(cols)


def w_jacobian(sys: SystemDef, x: StateVec, theta_i: float = 0.0,
               opts: LinearizeOptions = LinearizeOptions(),
               patch: SurfacePatch | None = None,
               mode: str | None = None) -> WJacobianResult:
    """Jacobian of the reduction map at a surface point.

    Transversal points use the closed form; grazing points use one-sided
    limits of the neutralized analytic formula along the surface, with the
    extrapolations of all admissible approach sides compared pairwise and
    the flow-direction annihilation cross-checked against the composed W
    map (condition A2 verification).
    """
    x = as_state(x, sys.dim)
    if patch is None:
        patch = _surface_near(sys, x)
    surf = next(s for s in sys.surfaces if s.patch.label == patch.label)

    if mode == "finite-difference-check":
        return WJacobianResult(w_jacobian_fd(sys, x, theta_i, opts, patch),
                               "finite-difference-check",
                               {"status": "not-applicable"})

    gt = grad_tau(sys, x, surf.patch, opts.sim.graze_rel_tol)
    if gt is not None and mode != "grazing-limit":
        matx = _w_jac_transversal(sys, surf, x)
        if not np.all(np.isfinite(matx)):
            raise A2VerificationError("non-finite transversal W Jacobian")
        return WJacobianResult(matx, "transversal-analytic",
                               {"status": "not-applicable"})

    # grazing limit: one-sided extrapolation along each admissible side
    rng = np.random.default_rng(0)
    deltas = np.asarray(opts.graze_deltas, dtype=float)
    w0 = w_map(sys, x, theta_i, opts, patch=surf.patch)
    side_limits = []
    for direction in _tangent_directions(surf.patch, x, sys.dim, rng):
        pts = []
        ok = True
        for d in deltas:
            y = _project_to_patch(surf.patch, x + d * direction)
            if not surf.patch.in_bounds(y, opts.sim.boundary_tol):
                ok = False
                break
            if grad_tau(sys, y, surf.patch, opts.sim.graze_rel_tol) is None:
                ok = False
                break
            pts.append(_w_jac_neutralized(sys, surf, y))
        if not ok or len(pts) != len(deltas):
            continue
        # entrywise polynomial fit in delta; constant term is the limit
        vand = np.vander(deltas, N=len(deltas), increasing=True)
        stack = np.stack(pts)                       # (k, n, n)
        coef = np.linalg.solve(vand, stack.reshape(len(deltas), -1))
        limit = coef[0].reshape(sys.dim, sys.dim)
        # consistency of nested fits (drop the coarsest delta)
        vand2 = np.vander(deltas[1:], N=len(deltas) - 1, increasing=True)
        coef2 = np.linalg.solve(vand2, stack[1:].reshape(len(deltas) - 1, -1))
        limit2 = coef2[0].reshape(sys.dim, sys.dim)
        # one-sided finite difference of the composed W map along this
        # on-surface direction; the limit exceeds the surface derivative
        # by the flow projector, which is the identity on surface tangents
        dsmall = float(deltas[-1])
        ysmall = _project_to_patch(surf.patch, x + dsmall * direction)
        fd_dir = (w_map(sys, ysmall, theta_i, opts, patch=surf.patch) - w0) / dsmall
        wmap_gap = float(np.linalg.norm(fd_dir + direction - limit @ direction))
        side_limits.append(
            (direction, limit, float(np.max(np.abs(limit - limit2))), wmap_gap))

    if not side_limits:
        raise A2VerificationError(
            "no admissible transversal approach side at the grazing point")

    matx = side_limits[0][1]
    worst_pair = 0.0
    for (_, la, _, _), (_, lb, _, _) in itertools.combinations(side_limits, 2):
        worst_pair = max(worst_pair, float(np.max(np.abs(la - lb))))
    worst_fit = max(s[2] for s in side_limits)
    worst_wmap = max(s[3] for s in side_limits)
    scale = 1.0 + float(np.max(np.abs(matx)))

    a2 = {
        "pairwise_gap": worst_pair,
        "fit_gap": worst_fit,
        "wmap_fd_gap": worst_wmap,
        "w_at_point": float(np.linalg.norm(w0)),
        "tolerance": opts.a2_tol,
    }
    if worst_pair <= opts.a2_tol * scale and worst_fit <= opts.a2_tol * scale \
            and worst_wmap <= 10.0 * opts.a2_tol * scale:
        a2["status"] = "verified"
    else:
        a2["status"] = "failed"
        a2["witness_directions"] = [s[0].tolist() for s in side_limits]
    res = WJacobianResult(matx, "grazing-limit", a2)
    if a2["status"] == "failed":
        raise A2VerificationError(
            f"directional limits disagree beyond tolerance: {a2}")
    return res


def b_matrix(sys: SystemDef, event, branch: str = "N2",
             opts: LinearizeOptions = LinearizeOptions()) -> np.ndarray:
    """Linearization jump matrix of one event.

    Alpha-type events are single-valued (the transversal W Jacobian);
    beta/gamma events are bivalued: the zero matrix on the N1 branch and
    the W Jacobian (grazing-limit for gamma) on the N2 branch.
    """
    surf = next(s for s in sys.surfaces if s.patch.label == event.patch)
    kind = event.point_type.replace("_prime", "")
    if kind == "alpha":
        return _w_jac_transversal(sys, surf, event.pre_state)
    if branch == "N1":
        return np.zeros((sys.dim, sys.dim))
    if branch != "N2":
        raise ValueError("branch must be 'N1' or 'N2'")
    if kind == "beta":
        return _w_jac_transversal(sys, surf, event.pre_state)
    return w_jacobian(sys, event.pre_state, event.theta, opts,
                      patch=surf.patch, mode="grazing-limit").matrix


def assemble_branches(sys: SystemDef, cycle_traj: Trajectory, period: float,
                      opts: LinearizeOptions = LinearizeOptions(),
                      prune: Callable[[tuple[str, ...]], bool] | None = None,
                      ) -> list[VariationalBranch]:
    """Periodic variational branches around a simulated cycle.

    One branch per admissible N1/N2 assignment over the beta/gamma events
    in one period (alpha events are single-valued).  A(t) is evaluated by
    re-interpolating the stored cycle.
    """
    t0 = cycle_traj.t_start
    events = [ev for ev in cycle_traj.events
              if t0 < ev.theta <= t0 + period + 1e-9]
    bivalued = [ev for ev in events
                if ev.point_type.replace("_prime", "") in ("beta", "gamma")]
    if len(bivalued) > opts.max_branch_events:
        raise BranchBudgetError(
            f"{len(bivalued)} bivalued events exceed the branch budget")

    def a_of_t(t: float) -> np.ndarray:
        # fold into the stored period window; left-continuous at events
        s = t0 + (t - t0) % period
        return sys.jac_at(cycle_traj.eval(s))

    alpha_mats = {}
    for ev in events:
        if ev.point_type.replace("_prime", "") == "alpha":
            alpha_mats[ev.theta] = b_matrix(sys, ev, opts=opts)
    n2_mats = {ev.theta: b_matrix(sys, ev, "N2", opts) for ev in bivalued}

    branches = []
    bid = 0
    for combo in itertools.product(("N1", "N2"), repeat=len(bivalued)):
        if prune is not None and not prune(combo):
            continue
        bid += 1
        times, mats = [], []
        for ev in events:
            kind = ev.point_type.replace("_prime", "")
            if kind == "alpha":
                times.append(ev.theta - t0)
                mats.append(alpha_mats[ev.theta])
            else:
                label = combo[bivalued.index(ev)]
                times.append(ev.theta - t0)
                mats.append(np.zeros((sys.dim, sys.dim)) if label == "N1"
                            else n2_mats[ev.theta])
        order = np.argsort(times)
        branches.append(VariationalBranch(
            branch_id=bid, a_of_t=a_of_t,
            jump_times=tuple(float(times[i]) for i in order),
            jump_matrices=tuple(mats[i] for i in order),
            period=float(period), p=len(events), assignment=combo))
    return branches
