"""Domain types for impulsive systems with state-dependent jump surfaces.

A system is a smooth vector field together with a set of discontinuity
surface patches.  Each patch is the zero set of a scalar function, clipped
to a coordinate box, and carries a jump map applied when a trajectory meets
it.  Image patches (the jump images of the surfaces) are used for
reverse-time event detection.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

StateVec = np.ndarray

# Boundary point kinds: "contact" corners are dynamically meaningful (the
# jump must be the identity there); "truncation" corners only clip an
# infinite surface to a working window and carry no such requirement.
CONTACT = "contact"
TRUNCATION = "truncation"


def as_state(x: Sequence[float] | np.ndarray, dim: int | None = None) -> StateVec:
    """Coerce to a float vector and reject non-finite entries."""
    v = np.asarray(x, dtype=float).reshape(-1)
    if dim is not None and v.size != dim:
        raise ValueError(f"state has length {v.size}, expected {dim}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"state contains non-finite entries: {v}")
    return v


def finite_difference_jacobian(func: Callable[[StateVec], np.ndarray], x: StateVec,
                               rel_step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian with per-coordinate step max(h, h*|x_j|)."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(func(x), dtype=float)
    jac = np.empty((f0.size, x.size))
    for j in range(x.size):
        h = max(rel_step, rel_step * abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        jac[:, j] = (np.asarray(func(xp)) - np.asarray(func(xm))) / (2.0 * h)
    return jac


@dataclass(frozen=True)
class SurfacePatch:
    """One patch of a discontinuity surface, the zero set of ``phi``.

    Parameters
    ----------
    label : str
        Identifier used in events and reports.
    phi : callable
        Scalar function whose zero set contains the patch.
    grad_phi : callable
        Gradient of ``phi``.
    in_bounds : callable
        ``in_bounds(x, tol) -> bool``; restricts the zero set to the patch.
        Evaluated only at points with ``phi(x) ~ 0``.
    boundary_test : callable
        ``boundary_test(x, tol) -> bool``; membership in the patch boundary.
    sample_points : callable
        ``sample_points(rng, n, margin) -> (n, dim) array`` of interior
        patch points; ``margin`` is the relative distance kept from the
        boundary (parametric samplers of the builtins honour it exactly).
    boundary_points : tuple of (point, kind)
        Representative boundary points; kind is CONTACT or TRUNCATION.
    """

    label: str
    phi: Callable[[StateVec], float]
    grad_phi: Callable[[StateVec], np.ndarray]
    in_bounds: Callable[[StateVec, float], bool]
    boundary_test: Callable[[StateVec, float], bool]
    sample_points: Callable[[np.random.Generator, int, float], np.ndarray]
    boundary_points: tuple = ()

    def on_patch(self, x: StateVec, phi_tol: float, bound_tol: float) -> bool:
        return abs(self.phi(x)) <= phi_tol and self.in_bounds(x, bound_tol)


@dataclass(frozen=True)
class JumpMap:
    """Jump map J applied at a surface hit; I(x) = J(x) - x is the impulse."""

    j_of: Callable[[StateVec], StateVec]
    j_jacobian: Callable[[StateVec], np.ndarray]
    provenance: str = "analytic"

    def impulse(self, x: StateVec) -> StateVec:
        return np.asarray(self.j_of(x), dtype=float) - np.asarray(x, dtype=float)

    def invert(self, target: StateVec, seed: StateVec | None = None,
               tol: float = 1e-12, max_iter: int = 60) -> StateVec:
        """Solve J(y) = target by damped Newton, seeded at the target."""
        y = np.array(target if seed is None else seed, dtype=float)
        target = np.asarray(target, dtype=float)
        res = np.asarray(self.j_of(y)) - target
        scale = 1.0 + np.linalg.norm(target)
        for _ in range(max_iter):
            nrm = np.linalg.norm(res)
            if nrm <= tol * scale:
                return y
            jac = np.asarray(self.j_jacobian(y), dtype=float)
            try:
                step = np.linalg.solve(jac, -res)
            except np.linalg.LinAlgError as exc:
                raise JumpInversionError(
                    f"singular jump Jacobian during inversion, residual {nrm:.3e}") from exc
            lam = 1.0
            while lam >= 1e-4:
                cand = y + lam * step
                cres = np.asarray(self.j_of(cand)) - target
                if np.linalg.norm(cres) < nrm:
                    y, res = cand, cres
                    break
                lam *= 0.5
            else:
                raise JumpInversionError(
                    f"jump inversion stalled, residual {nrm:.3e}")
        raise JumpInversionError(
            f"jump inversion did not converge, residual {np.linalg.norm(res):.3e}")


class JumpInversionError(RuntimeError):
    pass


@dataclass(frozen=True)
class Surface:
    """A surface patch together with its jump map."""

    patch: SurfacePatch
    jump: JumpMap


@dataclass(frozen=True)
class SystemDef:
    """Complete model: field, surfaces with jumps, and image surfaces.

    ``image_surfaces`` pairs each image patch with the index of the surface
    whose jump generated it, so reverse-time simulation can invert the
    correct jump map.
    """

    dim: int
    f: Callable[[StateVec], np.ndarray]
    f_jacobian: Callable[[StateVec], np.ndarray]
    surfaces: tuple[Surface, ...]
    image_surfaces: tuple = ()  # tuple of (SurfacePatch, source_index)
    name: str = ""
    description: str = ""
    metadata: Mapping = field(default_factory=dict)

    def field_at(self, x: StateVec) -> np.ndarray:
        return np.asarray(self.f(np.asarray(x, dtype=float)), dtype=float)

    def jac_at(self, x: StateVec) -> np.ndarray:
        return np.asarray(self.f_jacobian(np.asarray(x, dtype=float)), dtype=float)


@dataclass(frozen=True)
class PerturbedFamily:
    """One-parameter family x' = f + mu*g with perturbed jumps and surfaces.

    ``instantiate(mu)`` materialises the family member as a SystemDef.  At
    mu = 0 it evaluates identically to ``base``.
    """

    base: SystemDef
    g: Callable[[StateVec, float], np.ndarray]
    k_jump: Mapping[str, Callable[[StateVec, float], np.ndarray]]
    phi_pert: Callable[[StateVec, float], float] | None
    mu_range: tuple[float, float]
    g_jacobian: Callable[[StateVec, float], np.ndarray] | None = None
    k_jump_jacobian: Mapping[str, Callable[[StateVec, float], np.ndarray]] = field(
        default_factory=dict)
    name: str = ""
    metadata: Mapping = field(default_factory=dict)

    def instantiate(self, mu: float) -> SystemDef:
        if not (self.mu_range[0] <= mu <= self.mu_range[1]):
            raise ValueError(f"mu={mu} outside declared range {self.mu_range}")
        base = self.base
        if mu == 0.0:
            return base

        g, gjac = self.g, self.g_jacobian

        def f_mu(x, _g=g, _mu=mu, _base=base):
            return _base.field_at(x) + _mu * np.asarray(_g(x, _mu), dtype=float)

        if gjac is not None:
            def fjac_mu(x, _gj=gjac, _mu=mu, _base=base):
                return _base.jac_at(x) + _mu * np.asarray(_gj(x, _mu), dtype=float)
        else:
            def fjac_mu(x, _f=f_mu):
                return finite_difference_jacobian(_f, x)

        surfaces = []
        for surf in base.surfaces:
            k = self.k_jump.get(surf.patch.label)
            if k is None:
                surfaces.append(surf)
                continue
            kjac = self.k_jump_jacobian.get(surf.patch.label)
            j0, j0jac = surf.jump.j_of, surf.jump.j_jacobian

            def j_mu(x, _j0=j0, _k=k, _mu=mu):
                return np.asarray(_j0(x), dtype=float) + _mu * np.asarray(_k(x, _mu), dtype=float)

            if kjac is not None:
                def jjac_mu(x, _jj=j0jac, _kj=kjac, _mu=mu):
                    return np.asarray(_jj(x), dtype=float) + _mu * np.asarray(_kj(x, _mu), dtype=float)
            else:
                def jjac_mu(x, _j=j_mu):
                    return finite_difference_jacobian(_j, x)

            surfaces.append(Surface(surf.patch, JumpMap(j_mu, jjac_mu, surf.jump.provenance)))

        return SystemDef(
            dim=base.dim, f=f_mu, f_jacobian=fjac_mu,
            surfaces=tuple(surfaces), image_surfaces=base.image_surfaces,
            name=f"{base.name}[mu={mu:g}]", description=base.description,
            metadata=base.metadata)


# ---------------------------------------------------------------------------
# Condition validation
# ---------------------------------------------------------------------------

PASS = "pass-on-samples"
FAIL = "fail"
NOT_CHECKABLE = "not-checkable"
DECLARED = "declared"


@dataclass
class ConditionReport:
    """Per-condition status of the runtime-checkable regularity conditions."""

    system: str
    entries: dict = field(default_factory=dict)

    def record(self, cond: str, status: str, witness=None, note: str = ""):
        e = {"status": status}
        if witness is not None:
            e["witness"] = np.asarray(witness, dtype=float).tolist()
        if note:
            e["note"] = note
        self.entries[cond] = e

    def status(self, cond: str) -> str:
        return self.entries[cond]["status"]

    def to_json(self, **kw) -> str:
        return json.dumps({"system": self.system, "conditions": self.entries}, **kw)


@dataclass(frozen=True)
class SampleSpec:
    """Sampling plan for condition checks: counts, seed, boundary margin."""

    n_surface: int = 60
    n_domain: int = 200
    seed: int = 0
    margin: float = 1e-3
    domain_box: tuple | None = None  # ((lo...), (hi...)); default from system metadata


def validate_conditions(sys: SystemDef, samples: SampleSpec = SampleSpec(),
                        certificates: frozenset[str] = frozenset()) -> ConditionReport:
    """Numerically check the pointwise regularity conditions on samples.

    C1, C2, C4, C5, C6, C7 are checked on sampled surface/boundary points;
    C8 is a norm bound over domain samples (its infimum clause is global
    and reported as such); C3, C9, C10 are flow/global properties and are
    not checkable from samples unless a certificate name is supplied, in
    which case they are marked declared.
    """
    rng = np.random.default_rng(samples.seed)
    rep = ConditionReport(system=sys.name)
    zero_tol = 1e-10

    def first_failure(points, predicate):
        for p in points:
            if not predicate(p):
                return p
        return None

    # C1: non-vanishing gradient on every patch (interior + boundary).
    witness = None
    for surf in sys.surfaces:
        pts = surf.patch.sample_points(rng, samples.n_surface, samples.margin)
        pts = np.vstack([pts] + [np.asarray(bp, dtype=float)[None, :]
                                 for bp, _ in surf.patch.boundary_points]) if len(
            surf.patch.boundary_points) else pts
        witness = first_failure(pts, lambda p, s=surf: np.linalg.norm(s.patch.grad_phi(p)) > zero_tol)
        if witness is not None:
            break
    rep.record("C1", FAIL if witness is not None else PASS, witness)

    # C2: invertible jump Jacobian away from the boundary.
    witness = None
    note = ""
    for surf in sys.surfaces:
        pts = surf.patch.sample_points(rng, samples.n_surface, samples.margin)
        witness = first_failure(
            pts, lambda p, s=surf: abs(np.linalg.det(s.jump.j_jacobian(p))) > 1e-12)
        if witness is not None:
            note = f"det dJ/dx vanishes on patch '{surf.patch.label}'"
            break
    rep.record("C2", FAIL if witness is not None else PASS, witness, note)

    # C3: surface/image separation -- a set-level property.
    if "C3" in certificates:
        rep.record("C3", DECLARED, note="declared by scenario certificate")
    else:
        rep.record("C3", NOT_CHECKABLE,
                   note="set-level separation of surface and image; not a pointwise check")

    # C4 / C5: transversality of the field on patch interiors / image interiors.
    def check_transversal(patches, cond):
        for patch in patches:
            pts = patch.sample_points(rng, samples.n_surface, samples.margin)
            bad = first_failure(
                pts, lambda p, pa=patch: abs(float(np.dot(pa.grad_phi(p), sys.field_at(p)))) > zero_tol)
            if bad is not None:
                rep.record(cond, FAIL, bad, f"tangency in interior of '{patch.label}'")
                return
        rep.record(cond, PASS)

    check_transversal([s.patch for s in sys.surfaces], "C4")
    if sys.image_surfaces:
        check_transversal([p for p, _ in sys.image_surfaces], "C5")
    else:
        rep.record("C5", NOT_CHECKABLE, note="no image surfaces supplied")

    # C6: identity jump at contact corners of the boundary.
    witness = None
    note = ""
    exempt = 0
    for surf in sys.surfaces:
        for bp, kind in surf.patch.boundary_points:
            if kind != CONTACT:
                exempt += 1
                continue
            x = np.asarray(bp, dtype=float)
            if np.linalg.norm(surf.jump.j_of(x) - x) > 1e-9 * (1.0 + np.linalg.norm(x)):
                witness = x
                note = f"non-identity jump at contact corner of '{surf.patch.label}'"
                break
        if witness is not None:
            break
    if exempt and witness is None:
        note = f"{exempt} truncation corner(s) exempt (working-window clipping)"
    rep.record("C6", FAIL if witness is not None else PASS, witness, note)

    # C7: identity of the image jump at image contact corners, via inversion.
    witness = None
    if sys.image_surfaces:
        for patch, src in sys.image_surfaces:
            jump = sys.surfaces[src].jump
            for bp, kind in patch.boundary_points:
                if kind != CONTACT:
                    continue
                x = np.asarray(bp, dtype=float)
                if np.linalg.norm(jump.j_of(x) - x) <= 1e-9 * (1.0 + np.linalg.norm(x)):
                    continue  # the point inverts to itself
                try:
                    y = jump.invert(x)
                except JumpInversionError:
                    witness = x
                    break
                if np.linalg.norm(y - x) > 1e-7 * (1.0 + np.linalg.norm(x)):
                    witness = x
                    break
            if witness is not None:
                break
        rep.record("C7", FAIL if witness is not None else PASS, witness)
    else:
        rep.record("C7", NOT_CHECKABLE, note="no image surfaces supplied")

    # C8: bounded field over the working domain box; the infimum clause
    # pairs a post-jump point with its next surface meeting and is global.
    box = samples.domain_box or sys.metadata.get("domain_box")
    if box is None:
        rep.record("C8", NOT_CHECKABLE, note="no domain box declared")
    else:
        lo, hi = (np.asarray(b, dtype=float) for b in box)
        pts = rng.uniform(lo, hi, size=(samples.n_domain, sys.dim))
        sup = 0.0
        bad = None
        for p in pts:
            val = sys.field_at(p)
            if not np.all(np.isfinite(val)):
                bad = p
                break
            sup = max(sup, float(np.linalg.norm(val)))
        if bad is not None:
            rep.record("C8", FAIL, bad, "non-finite field value")
        else:
            rep.record("C8", PASS,
                       note=f"sup||f|| ~ {sup:.6g} on box samples; "
                            "infimum clause is global and not sampled")

    for cond in ("C9", "C10"):
        if cond in certificates:
            rep.record(cond, DECLARED, note="declared by scenario certificate")
        else:
            rep.record(cond, NOT_CHECKABLE, note="continuation/flow property")

    return rep


# ---------------------------------------------------------------------------
# Builtin example systems
# ---------------------------------------------------------------------------

def _segment_patch(label: str, axis: int, level: float, other_range: tuple[float, float],
                   contact_at: tuple[float, ...], dim: int = 2) -> SurfacePatch:
    """Vertical/horizontal line segment patch {x[axis] = level, lo <= x[1-axis] <= hi}."""
    other = 1 - axis
    lo, hi = other_range
    grad = np.zeros(dim)
    grad[axis] = 1.0

    def phi(x, _a=axis, _l=level):
        return float(x[_a] - _l)

    def grad_phi(x, _g=grad):
        return _g.copy()

    def in_bounds(x, tol, _o=other, _lo=lo, _hi=hi):
        return (_lo - tol) <= x[_o] <= (_hi + tol)

    def boundary_test(x, tol, _o=other, _lo=lo, _hi=hi):
        return abs(x[_o] - _lo) <= tol or abs(x[_o] - _hi) <= tol

    def sample(rng, n, margin, _a=axis, _l=level, _o=other, _lo=lo, _hi=hi):
        width = _hi - _lo
        u = rng.uniform(_lo + margin * width, _hi - margin * width, size=n)
        pts = np.empty((n, dim))
        pts[:, _a] = _l
        pts[:, _o] = u
        return pts

    corners = []
    for val in (lo, hi):
        pt = np.zeros(dim)
        pt[axis] = level
        pt[other] = val
        kind = CONTACT if any(abs(val - c[other]) <= 1e-12 and abs(level - c[axis]) <= 1e-12
                              for c in (np.asarray(contact_at),)) else TRUNCATION
        corners.append((tuple(pt), kind))
    return SurfacePatch(label, phi, grad_phi, in_bounds, boundary_test, sample,
                        tuple(corners))


def _spiral_constants():
    a = 0.0005
    om = math.sqrt(1.0 - a * a)
    ell = math.exp(0.00025 * math.pi)
    t_star = (math.pi / 2.0 + math.atan2(a, om)) / om
    v0 = ell * math.exp(-a * t_star)
    period = math.pi / om
    hit = v0 * math.exp(a * period)  # |y2| at the x1=0 crossing
    return a, om, ell, t_star, v0, period, hit


def _make_spiral_impact() -> SystemDef:
    """Planar spiral with a grazing line and a restitution line.

    The expanding focus y' = (y2, -y1 + 0.001 y2) meets a vertical segment
    at y1 = exp(0.00025*pi) where the jump is quadratic in the approach
    velocity (coefficient 0.9), and the segment y1 = 0, y2 <= 0 where the
    velocity is reflected with coefficient exp(-0.0005*pi).  With that
    pairing the system has an exact discontinuous cycle that grazes the
    first segment at (exp(0.00025*pi), 0).
    """
    a, om, ell, t_star, v0, period, hit = _spiral_constants()
    r_quad = 0.9
    r_lin = math.exp(-0.0005 * math.pi)
    cap = 4.0

    def f(y):
        return np.array([y[1], -y[0] + 2.0 * a * y[1]])

    def fjac(y):
        return np.array([[0.0, 1.0], [-1.0, 2.0 * a]])

    g1 = _segment_patch("gamma1", axis=0, level=ell, other_range=(0.0, cap),
                        contact_at=(ell, 0.0))
    j1 = JumpMap(lambda y: np.array([y[0], -r_quad * y[1] ** 2]),
                 lambda y: np.array([[1.0, 0.0], [0.0, -2.0 * r_quad * y[1]]]))
    g2 = _segment_patch("gamma2", axis=0, level=0.0, other_range=(-cap, 0.0),
                        contact_at=(0.0, 0.0))
    j2 = JumpMap(lambda y: np.array([y[0], -r_lin * y[1]]),
                 lambda y: np.array([[1.0, 0.0], [0.0, -r_lin]]))

    im1 = _segment_patch("gamma1~", axis=0, level=ell,
                         other_range=(-r_quad * cap ** 2, 0.0), contact_at=(ell, 0.0))
    im2 = _segment_patch("gamma2~", axis=0, level=0.0,
                         other_range=(0.0, r_lin * cap), contact_at=(0.0, 0.0))

    meta = {
        "domain_box": ((-4.0, -4.0), (4.0, 4.0)),
        "cycle": {
            "start": (0.0, v0),
            "period": period,
            "grazing_point": (ell, 0.0),
            "grazing_time": t_star,
            "alpha_point": (0.0, -hit),
            "events_per_period": 2,
        },
        "constants": {"a": a, "ell": ell, "r_quad": r_quad, "r_lin": r_lin},
    }
    return SystemDef(
        dim=2, f=f, f_jacobian=fjac,
        surfaces=(Surface(g1, j1), Surface(g2, j2)),
        image_surfaces=((im1, 0), (im2, 1)),
        name="spiral-impact",
        description="expanding focus with quadratic-restitution grazing line "
                    "and linear-restitution reset line",
        metadata=meta)


def _make_nonaxial_circle() -> SystemDef:
    """Harmonic rotation grazing the line x1 + x2 = sqrt(2) non-axially.

    The jump sends the whole half-line onto the diagonal ray x1 = x2; it is
    rank-deficient, so reverse-time jump inversion is not available (the
    condition check reports the singular Jacobian).
    """
    k = 0.11
    s2 = math.sqrt(2.0)
    wcap = 4.0

    def f(x):
        return np.array([x[1], -x[0]])

    def fjac(x):
        return np.array([[0.0, 1.0], [-1.0, 0.0]])

    xstar = (s2 / 2.0, s2 / 2.0)

    def phi(x):
        return float(x[0] + x[1] - s2)

    def grad_phi(x):
        return np.array([1.0, 1.0])

    def in_bounds(x, tol):
        w = x[1] - x[0]
        return -tol <= w <= wcap + tol

    def boundary_test(x, tol):
        w = x[1] - x[0]
        return abs(w) <= tol or abs(w - wcap) <= tol

    def sample(rng, n, margin):
        w = rng.uniform(margin * wcap, (1.0 - margin) * wcap, size=n)
        return np.column_stack([(s2 - w) / 2.0, (s2 + w) / 2.0])

    patch = SurfacePatch("gamma", phi, grad_phi, in_bounds, boundary_test, sample,
                         ((xstar, CONTACT), (((s2 - wcap) / 2.0, (s2 + wcap) / 2.0), TRUNCATION)))

    def j_of(x):
        w = x[1] - x[0]
        s = s2 / 2.0 + k * w * w
        return np.array([s, s])

    def j_jac(x):
        w = x[1] - x[0]
        return np.array([[-2.0 * k * w, 2.0 * k * w], [-2.0 * k * w, 2.0 * k * w]])

    scap = s2 / 2.0 + k * wcap ** 2

    def phi_im(x):
        return float(x[0] - x[1])

    def grad_im(x):
        return np.array([1.0, -1.0])

    def in_bounds_im(x, tol):
        return s2 / 2.0 - tol <= x[0] <= scap + tol

    def boundary_im(x, tol):
        return abs(x[0] - s2 / 2.0) <= tol or abs(x[0] - scap) <= tol

    def sample_im(rng, n, margin):
        s = rng.uniform(s2 / 2.0 + margin * (scap - s2 / 2.0),
                        scap - margin * (scap - s2 / 2.0), size=n)
        return np.column_stack([s, s])

    impatch = SurfacePatch("gamma~", phi_im, grad_im, in_bounds_im, boundary_im,
                           sample_im, ((xstar, CONTACT), ((scap, scap), TRUNCATION)))

    meta = {
        "domain_box": ((-2.0, -2.0), (2.0, 2.0)),
        "cycle": {
            "start": (0.0, 1.0),
            "period": 2.0 * math.pi,
            "grazing_point": xstar,
            "grazing_time": math.pi / 4.0,
            "events_per_period": 1,
        },
        "constants": {"k": k},
    }
    return SystemDef(
        dim=2, f=f, f_jacobian=fjac,
        surfaces=(Surface(patch, JumpMap(j_of, j_jac)),),
        image_surfaces=((impatch, 0),),
        name="nonaxial-circle",
        description="unit rotation grazing an oblique line; jump folds the "
                    "line onto the diagonal",
        metadata=meta)


def _make_impact_cycle() -> PerturbedFamily:
    """Self-sustained oscillator around (1, 0) with a wall at x1 = 0.

    The generating cycle (1 + cos t, -sin t) grazes the wall boundary at
    the origin.  For mu in (-2, 0] the family keeps the exact continuous
    cycle of amplitude 1 + mu.
    """
    c = 0.0001
    r = 0.9
    cap = 4.0

    def bracket(x, mu):
        return x[1] ** 2 + (x[0] - 1.0) ** 2 - (1.0 + mu) ** 2

    def f(x):
        return np.array([x[1], -c * bracket(x, 0.0) * x[1] - x[0] + 1.0])

    def fjac(x):
        b = bracket(x, 0.0)
        return np.array([
            [0.0, 1.0],
            [-2.0 * c * (x[0] - 1.0) * x[1] - 1.0, -c * b - 2.0 * c * x[1] ** 2],
        ])

    patch = _segment_patch("gamma", axis=0, level=0.0, other_range=(-cap, 0.0),
                           contact_at=(0.0, 0.0))
    jump = JumpMap(lambda x: np.array([x[0], -r * x[1] ** 2]),
                   lambda x: np.array([[1.0, 0.0], [0.0, -2.0 * r * x[1]]]))
    impatch = _segment_patch("gamma~", axis=0, level=0.0,
                             other_range=(-r * cap ** 2, 0.0), contact_at=(0.0, 0.0))

    meta = {
        "domain_box": ((-1.0, -2.5), (3.0, 2.5)),
        "cycle": {
            "start": (2.0, 0.0),
            "period": 2.0 * math.pi,
            "grazing_point": (0.0, 0.0),
            "grazing_time": math.pi,
            "events_per_period": 1,
        },
        "constants": {"c": c, "r": r},
        "seed_strategies": ("continuous", "one-event"),
    }
    base = SystemDef(
        dim=2, f=f, f_jacobian=fjac,
        surfaces=(Surface(patch, jump),),
        image_surfaces=((impatch, 0),),
        name="impact-cycle",
        description="weakly self-excited rotation about (1,0) grazing the "
                    "wall x1 = 0, x2 <= 0",
        metadata=meta)

    def g(x, mu):
        # (f_mu - f_0)/mu for the field family
        return np.array([0.0, c * (2.0 + mu) * x[1]])

    def gjac(x, mu):
        return np.array([[0.0, 0.0], [0.0, c * (2.0 + mu)]])

    def k_gamma(x, mu):
        return np.array([0.0, -x[1] ** 4 + mu])

    def k_gamma_jac(x, mu):
        return np.array([[0.0, 0.0], [0.0, -4.0 * x[1] ** 3]])

    return PerturbedFamily(
        base=base, g=g, g_jacobian=gjac,
        k_jump={"gamma": k_gamma}, k_jump_jacobian={"gamma": k_gamma_jac},
        phi_pert=None, mu_range=(-0.5, 0.5),
        name="impact-cycle",
        metadata={"amplitude": lambda mu: 1.0 + mu})


def _make_perturbed_impact() -> PerturbedFamily:
    """Spiral-impact family with restitution-coefficient perturbations.

    The base uses the coefficient assignment as printed for the family
    (quadratic exp(-0.0005*pi) on the grazing line, linear 0.9 on the
    reset line); its unperturbed member has no exact cycle, and periodic
    orbits appear under the parameter.
    """
    a, om, ell, t_star, v0, period, hit = _spiral_constants()
    r1 = math.exp(-0.0005 * math.pi)  # quadratic coefficient on gamma1
    r2 = 0.9                          # linear coefficient on gamma2
    e_const = math.exp(0.0005 * math.pi)
    cap = 4.0

    def f(y):
        return np.array([y[1], -y[0] + 2.0 * a * y[1]])

    def fjac(y):
        return np.array([[0.0, 1.0], [-1.0, 2.0 * a]])

    g1 = _segment_patch("gamma1", axis=0, level=ell, other_range=(0.0, cap),
                        contact_at=(ell, 0.0))
    j1 = JumpMap(lambda y: np.array([y[0], -r1 * y[1] ** 2]),
                 lambda y: np.array([[1.0, 0.0], [0.0, -2.0 * r1 * y[1]]]))
    g2 = _segment_patch("gamma2", axis=0, level=0.0, other_range=(-cap, 0.0),
                        contact_at=(0.0, 0.0))
    j2 = JumpMap(lambda y: np.array([y[0], -r2 * y[1]]),
                 lambda y: np.array([[1.0, 0.0], [0.0, -r2]]))
    im1 = _segment_patch("gamma1~", axis=0, level=ell,
                         other_range=(-r1 * cap ** 2, 0.0), contact_at=(ell, 0.0))
    im2 = _segment_patch("gamma2~", axis=0, level=0.0,
                         other_range=(0.0, r2 * cap), contact_at=(0.0, 0.0))

    meta = {
        "domain_box": ((-4.0, -4.0), (4.0, 4.0)),
        "cycle": {
            # nominal reference loop; not an exact cycle of the mu=0 member
            "start": (0.0, 1.0),
            "period": period,
            "grazing_point": (ell, 0.0),
            "events_per_period": 2,
        },
        "constants": {"a": a, "ell": ell, "r1": r1, "r2": r2},
        "seed_strategies": ("one-event", "two-event"),
    }
    base = SystemDef(
        dim=2, f=f, f_jacobian=fjac,
        surfaces=(Surface(g1, j1), Surface(g2, j2)),
        image_surfaces=((im1, 0), (im2, 1)),
        name="perturbed-impact",
        description="spiral impact model with parameter-dependent restitution",
        metadata=meta)

    def k1(y, mu):
        return np.array([0.0, -y[1] ** 2])

    def k1jac(y, mu):
        return np.array([[0.0, 0.0], [0.0, -2.0 * y[1]]])

    def k2(y, mu):
        return np.array([0.0, -(y[1] - e_const) * y[1]])

    def k2jac(y, mu):
        return np.array([[0.0, 0.0], [0.0, -2.0 * y[1] + e_const]])

    return PerturbedFamily(
        base=base, g=lambda x, mu: np.zeros(2),
        g_jacobian=lambda x, mu: np.zeros((2, 2)),
        k_jump={"gamma1": k1, "gamma2": k2},
        k_jump_jacobian={"gamma1": k1jac, "gamma2": k2jac},
        phi_pert=None, mu_range=(-0.5, 0.5),
        name="perturbed-impact",
        metadata={})


_BUILTINS: dict[str, Callable[[], SystemDef | PerturbedFamily]] = {
    "spiral-impact": _make_spiral_impact,
    "nonaxial-circle": _make_nonaxial_circle,
    "impact-cycle": _make_impact_cycle,
    "perturbed-impact": _make_perturbed_impact,
}


def builtin_names() -> tuple[str, ...]:
    return tuple(sorted(_BUILTINS))


def builtin_system(name: str) -> SystemDef | PerturbedFamily:
    """Return a fully populated builtin system or family by name."""
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise KeyError(
            f"unknown builtin system {name!r}; available: {', '.join(builtin_names())}"
        ) from None
    return factory()
