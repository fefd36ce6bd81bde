"""Event-located time integration and trajectory assembly.

Arcs are integrated with an adaptive explicit Runge-Kutta method (DOP853,
order 8 with dense output); every accepted step interval is scanned for
surface crossings (sign changes of phi, refined by bracketed root finding)
and for tangential contacts (interior extrema of phi with |phi| below the
grazing detection threshold, located as roots of d(phi)/dt).  Jumps are
applied at refined event times and the receiving surface is disarmed until
the trajectory has moved a safe distance away.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import DOP853
from scipy.optimize import brentq

from .core import StateVec, Surface, SurfacePatch, SystemDef, as_state
from . import graze as _graze


class SimulationError(RuntimeError):
    pass


class EventBudgetExceeded(SimulationError):
    pass


class CrossingNotFound(LookupError):
    pass


@dataclass(frozen=True)
class SimOptions:
    """Tolerances and limits for event-located integration."""

    rtol: float = 1e-12
    atol: float = 1e-14
    max_step: float = 0.1
    event_phi_tol: float = 1e-10      # |phi| at an accepted event
    event_time_tol: float = 1e-10     # bracket width for refined event times
    graze_phi_tol: float = 1e-8       # |phi| at an extremum counted as a contact
    graze_rel_tol: float = 1e-7       # |<grad phi, f>| <= this * |grad phi| * |f|
    boundary_tol: float = 1e-9
    rearm_factor: float = 10.0
    blowup_norm: float = 1e6
    max_events: int = 10_000
    min_event_gap: float = 1e-9

    def rearm_tol(self) -> float:
        return self.rearm_factor * self.event_phi_tol


@dataclass
class Arc:
    """One smooth piece of a trajectory with dense interpolation."""

    t_start: float
    t_end: float
    ts: np.ndarray                    # accepted step times (monotone)
    states: np.ndarray                # states at ts, shape (len(ts), n)
    exit: str                         # time-limit | surface-hit:<label> | blow-up | stall
    dense: list = field(default_factory=list)   # (t_lo, t_hi, DenseOutput)

    @property
    def dense_states(self) -> np.ndarray:
        return self.states

    def eval(self, t: float) -> StateVec:
        lo, hi = (self.t_start, self.t_end) if self.t_start <= self.t_end else (
            self.t_end, self.t_start)
        if not (lo - 1e-12 <= t <= hi + 1e-12):
            raise ValueError(f"t={t} outside arc [{self.t_start}, {self.t_end}]")
        for a, b, seg in self.dense:
            if min(a, b) - 1e-12 <= t <= max(a, b) + 1e-12:
                return np.asarray(seg(t), dtype=float)
        # endpoint fallthrough (zero-length arcs)
        return self.states[-1].copy()


@dataclass(frozen=True)
class DiscontinuityEvent:
    """A located surface hit with its classification."""

    theta: float
    pre_state: StateVec
    post_state: StateVec
    patch: str
    point_type: str                   # alpha|beta|gamma with optional _prime
    axial: bool
    transversality: float
    zero_gradient_coords: tuple[int, ...] = ()

    @property
    def is_grazing(self) -> bool:
        return self.point_type in ("gamma", "gamma_prime")


@dataclass
class Trajectory:
    """Ordered arcs and events of a piecewise-smooth solution."""

    arcs: list
    events: list
    direction: int = 1                # +1 forward, -1 backward (times decrease)

    @property
    def b_sequence(self) -> list[float]:
        return [e.theta for e in self.events]

    @property
    def t_start(self) -> float:
        return self.arcs[0].t_start

    @property
    def t_end(self) -> float:
        return self.arcs[-1].t_end

    @property
    def terminal_state(self) -> StateVec:
        return self.arcs[-1].states[-1].copy()

    def eval(self, t: float) -> StateVec:
        """Left-continuous evaluation (the value before a jump at event times)."""
        arcs = self.arcs
        if self.direction > 0:
            for arc in arcs:
                if t <= arc.t_end + 1e-12:
                    return arc.eval(max(t, arc.t_start))
        else:
            for arc in arcs:
                if t >= arc.t_end - 1e-12:
                    return arc.eval(min(t, arc.t_start))
        return arcs[-1].eval(t)

    def check_consistency(self, tol: float = 1e-9) -> None:
        for k, ev in enumerate(self.events):
            arc = self.arcs[k]
            if abs(arc.t_end - ev.theta) > tol * (1.0 + abs(ev.theta)):
                raise AssertionError("arc/event interleaving broken")
            if k + 1 < len(self.arcs):
                nxt = self.arcs[k + 1]
                if np.linalg.norm(nxt.states[0] - ev.post_state) > tol:
                    raise AssertionError("arc does not start at post-jump state")
        thetas = self.b_sequence
        for a, b in zip(thetas, thetas[1:]):
            if self.direction > 0 and b <= a:
                raise AssertionError("b_sequence not increasing")
            if self.direction < 0 and b >= a:
                raise AssertionError("b_sequence not decreasing")


# ---------------------------------------------------------------------------
# Arc integration and event scanning
# ---------------------------------------------------------------------------

def _scan_interval(patch: SurfacePatch, f_eval, seg, ta: float, tb: float,
                   opts: SimOptions) -> tuple[float, str] | None:
    """Earliest event candidate of one patch within a dense-output interval.

    Returns (tau, kind) with kind 'crossing' or 'tangency', or None.
    """

    def phi_t(t):
        return patch.phi(seg(t))

    def dphi_t(t):
        x = seg(t)
        return float(np.dot(patch.grad_phi(x), f_eval(x)))

    pa, pb = phi_t(ta), phi_t(tb)
    if abs(pa) <= 1e-300:
        # the interval starts on the surface (handled by the previous
        # interval); shift the bracket start off the root so a later
        # crossing inside this interval is still seen
        ta = ta + 1e-9 * (tb - ta)
        pa = phi_t(ta)
        if pa == 0.0:
            pa = math.copysign(1e-300, pb if pb != 0.0 else 1.0)
    if pa * pb < 0.0:
        tau = brentq(phi_t, ta, tb, xtol=opts.event_time_tol, rtol=1e-15)
        return tau, "crossing"
    if abs(pb) <= opts.event_phi_tol and abs(pa) > opts.rearm_tol():
        # the step ends on the surface (crossing exactly at the window end)
        return tb, "crossing"

    ga, gb = dphi_t(ta), dphi_t(tb)
    if ga * gb < 0.0:
        text = brentq(dphi_t, ta, tb, xtol=opts.event_time_tol, rtol=1e-15)
        pext = phi_t(text)
        if pa != 0.0 and pext * pa < 0.0 and abs(pext) > opts.graze_phi_tol:
            # double transversal crossing inside one step: take the first root
            tau = brentq(phi_t, ta, text, xtol=opts.event_time_tol, rtol=1e-15)
            return tau, "crossing"
        if abs(pext) <= opts.graze_phi_tol:
            return text, "tangency"
    return None


def integrate_arc(sys: SystemDef, x0: StateVec, t0: float, t_max: float,
                  opts: SimOptions = SimOptions(),
                  patches: Sequence[SurfacePatch] | None = None,
                  disarmed: set[str] | None = None,
                  field_fn: Callable[[StateVec], np.ndarray] | None = None,
                  ) -> Arc:
    """Integrate the smooth flow until t_max or the first surface event.

    ``patches`` defaults to the system's own surfaces; ``disarmed`` patches
    are ignored until |phi| has exceeded the re-arming tolerance.  A custom
    ``field_fn`` supports reverse-time integration.
    """
    x0 = as_state(x0, sys.dim)
    if t_max <= t0:
        raise ValueError("t_max must exceed t0")
    f_eval = field_fn if field_fn is not None else sys.field_at
    if patches is None:
        patches = [s.patch for s in sys.surfaces]
    disarmed = set(disarmed or ())

    solver = DOP853(lambda t, y: f_eval(y), t0, x0, t_max,
                    rtol=opts.rtol, atol=opts.atol, max_step=opts.max_step)
    ts = [t0]
    states = [x0.copy()]
    dense = []
    exit_reason = "time-limit"

    while solver.status == "running":
        msg = solver.step()
        if solver.status == "failed":
            exit_reason = f"stall:{msg}"
            break
        seg = solver.dense_output()
        ta, tb = solver.t_old, solver.t

        best = None
        for patch in patches:
            scan_from = ta
            if patch.label in disarmed:
                # re-arm only from the moment |phi| exceeds the threshold,
                # so the just-handled event is not seen again
                if abs(patch.phi(solver.y)) <= opts.rearm_tol():
                    continue
                if abs(patch.phi(seg(ta))) < opts.rearm_tol():
                    scan_from = brentq(
                        lambda t: abs(patch.phi(seg(t))) - opts.rearm_tol(),
                        ta, tb, xtol=opts.event_time_tol, rtol=1e-15)
                disarmed.discard(patch.label)
            cand = _scan_interval(patch, f_eval, seg, scan_from, tb, opts)
            if cand is None:
                continue
            tau, kind = cand
            if tau < t0 + opts.min_event_gap:
                continue  # B-sequence separation floor
            x_tau = np.asarray(seg(tau), dtype=float)
            if not patch.in_bounds(x_tau, opts.boundary_tol):
                continue
            if best is None or tau < best[0] - opts.event_time_tol:
                best = (tau, patch, kind, x_tau)

        if best is not None:
            tau, patch, kind, x_tau = best
            ts.append(tau)
            states.append(x_tau)
            dense.append((ta, tau, seg))
            exit_reason = f"surface-hit:{patch.label}"
            break

        ts.append(tb)
        states.append(solver.y.copy())
        dense.append((ta, tb, seg))
        if np.linalg.norm(solver.y) > opts.blowup_norm:
            exit_reason = "blow-up"
            break
        if not np.all(np.isfinite(solver.y)):
            raise SimulationError(f"non-finite state at t={tb}: {solver.y}")

    return Arc(t_start=t0, t_end=ts[-1], ts=np.asarray(ts),
               states=np.asarray(states), exit=exit_reason, dense=dense)


def locate_crossing(arc: Arc, patch: SurfacePatch,
                    opts: SimOptions = SimOptions(),
                    field_fn: Callable[[StateVec], np.ndarray] | None = None,
                    ) -> tuple[float, StateVec]:
    """Refine the first meeting of an arc with a patch.

    Transversal sign changes are refined by bracketed root finding on the
    dense output; if none exists, the |phi|-minimising interior extremum is
    returned provided it reaches the grazing detection threshold.
    """
    if field_fn is None:
        # quasi-derivative of phi from the dense output itself
        def field_fn(x):
            raise RuntimeError("field required")
    best_tangent = None
    for ta, tb, seg in arc.dense:
        def phi_t(t, _s=seg):
            return patch.phi(_s(t))

        pa, pb = phi_t(ta), phi_t(tb)
        if pa == 0.0:
            return ta, np.asarray(seg(ta), dtype=float)
        if pa * pb < 0.0:
            tau = brentq(phi_t, ta, tb, xtol=opts.event_time_tol, rtol=1e-15)
            return tau, np.asarray(seg(tau), dtype=float)
        # extremum scan via finite bracket on the numerical derivative
        tm = 0.5 * (ta + tb)
        h = (tb - ta) * 1e-6

        def dphi(t, _s=seg, _h=h):
            return (patch.phi(_s(min(t + _h, tb))) - patch.phi(_s(max(t - _h, ta)))) / (2 * _h)

        ga, gb = dphi(ta), dphi(tb)
        if ga * gb < 0.0:
            text = brentq(dphi, ta, tb, xtol=opts.event_time_tol, rtol=1e-15)
            pext = phi_t(text)
            if abs(pext) <= opts.graze_phi_tol:
                if best_tangent is None or abs(pext) < abs(best_tangent[1]):
                    best_tangent = (text, pext)
    if best_tangent is not None:
        t, _ = best_tangent
        return t, arc.eval(t)
    raise CrossingNotFound(f"no crossing of patch '{patch.label}' in arc")


def _initial_disarm(sys_like_patches, x0, opts) -> set[str]:
    out = set()
    for patch in sys_like_patches:
        if abs(patch.phi(x0)) <= opts.rearm_tol():
            out.add(patch.label)
    return out


def simulate(sys: SystemDef, x0: StateVec, t0: float, t_end: float,
             opts: SimOptions = SimOptions()) -> Trajectory:
    """Forward simulation with jump application and event classification."""
    x0 = as_state(x0, sys.dim)
    patches = [s.patch for s in sys.surfaces]
    by_label = {s.patch.label: s for s in sys.surfaces}
    disarmed = _initial_disarm(patches, x0, opts)

    if t_end < t0:
        raise ValueError("t_end must not precede t0 in forward simulation")
    arcs: list[Arc] = []
    events: list[DiscontinuityEvent] = []
    t, x = t0, x0
    if t_end == t0:
        arcs.append(Arc(t_start=t0, t_end=t0, ts=np.array([t0]),
                        states=np.array([x0]), exit="time-limit"))
        return Trajectory(arcs=arcs, events=events, direction=1)
    while t < t_end - 1e-13:
        arc = integrate_arc(sys, x, t, t_end, opts, patches=patches,
                            disarmed=set(disarmed))
        arcs.append(arc)
        if not arc.exit.startswith("surface-hit:"):
            break
        label = arc.exit.split(":", 1)[1]
        surf = by_label[label]
        theta = arc.t_end
        pre = arc.states[-1].copy()
        post = np.asarray(surf.jump.j_of(pre), dtype=float)
        ev = _graze.classify_event(sys, surf.patch, pre, post, theta, side="forward",
                                   opts=opts)
        events.append(ev)
        if len(events) > opts.max_events:
            raise EventBudgetExceeded(f"more than {opts.max_events} events")
        if not np.all(np.isfinite(post)):
            raise SimulationError(f"non-finite post-jump state at t={theta}")
        disarmed = _initial_disarm(patches, post, opts)
        t, x = theta, post
    traj = Trajectory(arcs=arcs, events=events, direction=1)
    return traj


def simulate_backward(sys: SystemDef, x0: StateVec, t0: float, t_end: float,
                      opts: SimOptions = SimOptions()) -> Trajectory:
    """Reverse-time simulation; events live on the image surfaces.

    The inverse jump is solved numerically from J(y) = x_hit by damped
    Newton seeded at the hit point.  Times in the returned trajectory
    decrease from t0 to t_end.
    """
    if t_end >= t0:
        raise ValueError("t_end must be below t0 for backward simulation")
    if not sys.image_surfaces:
        raise SimulationError("backward simulation requires image surfaces")
    x0 = as_state(x0, sys.dim)
    patches = [p for p, _ in sys.image_surfaces]
    source = {p.label: sys.surfaces[idx] for p, idx in sys.image_surfaces}

    def back_field(x):
        return -sys.field_at(x)

    disarmed = _initial_disarm(patches, x0, opts)
    arcs: list[Arc] = []
    events: list[DiscontinuityEvent] = []
    s, x = 0.0, x0
    s_end = t0 - t_end
    while s < s_end - 1e-13:
        arc = integrate_arc(sys, x, s, s_end, opts, patches=patches,
                            disarmed=set(disarmed), field_fn=back_field)
        # re-clock the arc to real (decreasing) time
        real = Arc(t_start=t0 - arc.t_start, t_end=t0 - arc.t_end,
                   ts=t0 - arc.ts, states=arc.states, exit=arc.exit,
                   dense=[(t0 - b, t0 - a, _ReclockedSegment(seg, t0))
                          for a, b, seg in arc.dense])
        arcs.append(real)
        if not arc.exit.startswith("surface-hit:"):
            break
        label = arc.exit.split(":", 1)[1]
        surf = source[label]
        patch = next(p for p in patches if p.label == label)
        theta = t0 - arc.t_end
        hit = arc.states[-1].copy()
        zero_jump = np.linalg.norm(surf.jump.j_of(hit) - hit) <= opts.event_phi_tol * 10
        if zero_jump:
            post = hit.copy()
        else:
            post = _invert_onto_source(surf, hit, opts)
        ev = _graze.classify_event(sys, patch, hit, post, theta, side="backward",
                                   opts=opts)
        events.append(ev)
        if len(events) > opts.max_events:
            raise EventBudgetExceeded(f"more than {opts.max_events} events")
        disarmed = _initial_disarm(patches, post, opts)
        s, x = arc.t_end, post
    return Trajectory(arcs=arcs, events=events, direction=-1)


def _invert_onto_source(surf: Surface, hit: StateVec, opts: SimOptions) -> np.ndarray:
    """Invert a jump so that the preimage lies on the source patch.

    Jump maps may be many-to-one (quadratic restitution); of the Newton
    solutions only the one on the originating patch is a valid pre-impact
    state, so failed membership retries from patch samples.
    """
    from .core import JumpInversionError

    def on_source(y):
        return (abs(surf.patch.phi(y)) <= 1e-7 * (1.0 + np.linalg.norm(y))
                and surf.patch.in_bounds(y, opts.boundary_tol * 10))

    try:
        y = surf.jump.invert(hit)
        if on_source(y):
            return y
    except JumpInversionError:
        pass
    rng = np.random.default_rng(12345)
    best = None
    for seed in surf.patch.sample_points(rng, 12, 0.02):
        try:
            y = surf.jump.invert(hit, seed=seed)
        except JumpInversionError:
            continue
        if on_source(y):
            gap = np.linalg.norm(np.asarray(surf.jump.j_of(y)) - hit)
            if best is None or gap < best[0]:
                best = (gap, y)
    if best is None:
        raise JumpInversionError(
            f"no preimage of {np.asarray(hit)} on patch '{surf.patch.label}'")
    return best[1]


class _ReclockedSegment:
    """Dense segment evaluated in real time t = t0 - s."""

    def __init__(self, seg, t0):
        self._seg = seg
        self._t0 = t0

    def __call__(self, t):
        return self._seg(self._t0 - t)


def group_property_check(sys: SystemDef, x0: StateVec, t1: float, t2: float,
                         opts: SimOptions = SimOptions()) -> float:
    """Defect ||x(t2,0,x(t1,0,x0)) - x(t1+t2,0,x0)|| for positive legs."""
    first = simulate(sys, x0, 0.0, t1, opts)
    second = simulate(sys, first.terminal_state, 0.0, t2, opts)
    direct = simulate(sys, x0, 0.0, t1 + t2, opts)
    return float(np.linalg.norm(second.terminal_state - direct.terminal_state))


# ---------------------------------------------------------------------------
# Closeness of discontinuous trajectories
# ---------------------------------------------------------------------------

def b_distance(tr1: Trajectory, tr2: Trajectory,
               window: tuple[float, float],
               time_shift: float = 0.0,
               grid: int = 600) -> float | None:
    """Smallest eps putting tr2 (shifted by time_shift) in the eps-neighborhood
    of tr1 on the window: equal event counts, event times within eps, and
    state gap below eps outside eps-collars around tr1's events.

    Returns None when the event counts differ (incomparable).
    """
    lo, hi = window
    th1 = [t for t in tr1.b_sequence if lo <= t <= hi]
    th2 = [t - time_shift for t in tr2.b_sequence if lo <= t - time_shift <= hi]
    if len(th1) != len(th2):
        return None
    dtheta = max((abs(a - b) for a, b in zip(th1, th2)), default=0.0)

    ts = np.linspace(lo, hi, grid)
    x1 = np.array([tr1.eval(t) for t in ts])
    x2 = np.array([tr2.eval(t + time_shift) for t in ts])
    gaps = np.linalg.norm(x1 - x2, axis=1)

    def feasible(eps: float) -> bool:
        if dtheta >= eps:
            return False
        mask = np.ones(len(ts), dtype=bool)
        for th in th1:
            mask &= ~((ts > th - eps) & (ts < th + eps))
        return bool(np.all(gaps[mask] < eps))

    hi_eps = max(dtheta, float(np.max(gaps)) if len(gaps) else 0.0) * 1.001 + 1e-15
    if not feasible(hi_eps):
        hi_eps *= 4.0
        while not feasible(hi_eps):
            hi_eps *= 4.0
            if hi_eps > 1e12:
                return float("inf")
    lo_eps = dtheta
    for _ in range(80):
        mid = 0.5 * (lo_eps + hi_eps)
        if feasible(mid):
            hi_eps = mid
        else:
            lo_eps = mid
    return hi_eps


def aligned_b_distance(tr_ref: Trajectory, tr: Trajectory,
                       window: tuple[float, float],
                       shifts: Sequence[float]) -> float | None:
    """Minimum b-distance over candidate time shifts of tr (orbital closeness)."""
    best = None
    for s in shifts:
        eps = b_distance(tr_ref, tr, window, time_shift=s)
        if eps is None:
            continue
        if best is None or eps < best:
            best = eps
    return best


# ---------------------------------------------------------------------------
# CSV export (17 significant digits)
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.17g}"


def trajectory_csv(traj: Trajectory) -> str:
    n = traj.arcs[0].states.shape[1]
    lines = ["t," + ",".join(f"x{i+1}" for i in range(n)) + ",arc_index"]
    for k, arc in enumerate(traj.arcs):
        for t, x in zip(arc.ts, arc.states):
            lines.append(",".join([_fmt(t)] + [_fmt(v) for v in x] + [str(k)]))
    return "\n".join(lines) + "\n"


def events_csv(traj: Trajectory) -> str:
    if traj.arcs:
        n = traj.arcs[0].states.shape[1]
    elif traj.events:
        n = len(traj.events[0].pre_state)
    else:
        n = 0
    head = ["theta", "type", "axial", "transversality"]
    head += [f"pre_{i+1}" for i in range(n)] + [f"post_{i+1}" for i in range(n)]
    head += ["zero_coords"]
    lines = [",".join(head)]
    for ev in traj.events:
        row = [_fmt(ev.theta), ev.point_type, str(ev.axial).lower(),
               _fmt(ev.transversality)]
        row += [_fmt(v) for v in ev.pre_state] + [_fmt(v) for v in ev.post_state]
        row += [";".join(str(i) for i in ev.zero_gradient_coords)]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"
