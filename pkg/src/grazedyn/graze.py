"""Classification of discontinuity points and grazing diagnostics.

A surface hit is alpha-type in the patch interior, beta-type on the patch
boundary with a transversal field, and gamma-type (grazing) on the boundary
with the field tangent to the surface.  Hits of image surfaces in reverse
time get the primed variants.  A grazing contact is axial when some
coordinate of the image-surface gradient vanishes there.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import StateVec, SurfacePatch, SystemDef, as_state


class NotOnSurface(LookupError):
    pass


@dataclass(frozen=True)
class GrazeReport:
    """Diagnostics of one grazing contact."""

    point: StateVec
    surface: str
    inner_product: float
    axial: bool
    zero_gradient_coords: tuple[int, ...]   # 1-based coordinate indices
    on_boundary: bool


def _zero_coords(grad: np.ndarray, rel_tol: float = 1e-9) -> tuple[int, ...]:
    scale = float(np.linalg.norm(grad))
    if scale == 0.0:
        return tuple(range(1, grad.size + 1))
    return tuple(i + 1 for i, g in enumerate(grad) if abs(g) <= rel_tol * scale)


def _find_patch(patches, x: StateVec, phi_tol: float, bound_tol: float):
    for patch in patches:
        if abs(patch.phi(x)) <= phi_tol and patch.in_bounds(x, bound_tol):
            return patch
    return None


def _image_gradient(sys: SystemDef, x: StateVec, phi_tol: float, bound_tol: float):
    patch = _find_patch([p for p, _ in sys.image_surfaces], x, phi_tol, bound_tol)
    if patch is None:
        return None
    return np.asarray(patch.grad_phi(x), dtype=float)


def _classify(patch: SurfacePatch, x: StateVec, f: np.ndarray, side: str,
              boundary_tol: float, graze_rel_tol: float) -> tuple[str, float]:
    grad = np.asarray(patch.grad_phi(x), dtype=float)
    tang = float(np.dot(grad, f))
    scale = float(np.linalg.norm(grad) * np.linalg.norm(f)) + 1e-300
    grazing = abs(tang) <= graze_rel_tol * scale
    if patch.boundary_test(x, boundary_tol):
        kind = "gamma" if grazing else "beta"
    else:
        kind = "alpha"
    if side == "backward":
        kind += "_prime"
    return kind, tang


def classify_point(sys: SystemDef, x: StateVec, side: str = "forward",
                   phi_tol: float = 1e-8, boundary_tol: float = 1e-9,
                   graze_rel_tol: float = 1e-7) -> str:
    """Type of a discontinuity point on the surfaces (forward) or their
    images (backward): alpha / beta / gamma, primed for the image side."""
    x = as_state(x, sys.dim)
    if side == "forward":
        patches = [s.patch for s in sys.surfaces]
    elif side == "backward":
        patches = [p for p, _ in sys.image_surfaces]
    else:
        raise ValueError("side must be 'forward' or 'backward'")
    patch = _find_patch(patches, x, phi_tol, boundary_tol * 10)
    if patch is None:
        raise NotOnSurface(f"point {x} is not near any {side} surface patch")
    kind, _ = _classify(patch, x, sys.field_at(x), side, boundary_tol, graze_rel_tol)
    return kind


def axial_flag(sys: SystemDef, x: StateVec, phi_tol: float = 1e-8,
               boundary_tol: float = 1e-6) -> tuple[bool, tuple[int, ...]]:
    """Axiality of a grazing point: zero coordinates of the image-surface
    gradient there (1-based).  Falls back to the surface gradient when the
    point is not on a declared image patch."""
    x = as_state(x, sys.dim)
    grad = _image_gradient(sys, x, phi_tol, boundary_tol)
    if grad is None:
        patch = _find_patch([s.patch for s in sys.surfaces], x, phi_tol, boundary_tol)
        if patch is None:
            raise NotOnSurface(f"point {x} is not near any surface patch")
        grad = np.asarray(patch.grad_phi(x), dtype=float)
    coords = _zero_coords(grad)
    return bool(coords), coords


def classify_event(sys: SystemDef, patch: SurfacePatch, pre: StateVec,
                   post: StateVec, theta: float, side: str, opts):
    """Build a classified DiscontinuityEvent for a located hit."""
    from .integrate import DiscontinuityEvent  # deferred to avoid a cycle

    f = sys.field_at(pre)
    kind, tang = _classify(patch, pre, f, side, opts.boundary_tol,
                           opts.graze_rel_tol)
    axial = False
    coords: tuple[int, ...] = ()
    if kind.startswith("gamma"):
        try:
            axial, coords = axial_flag(sys, pre)
        except NotOnSurface:
            grad = np.asarray(patch.grad_phi(pre), dtype=float)
            coords = _zero_coords(grad)
            axial = bool(coords)
    return DiscontinuityEvent(
        theta=float(theta), pre_state=np.asarray(pre, dtype=float),
        post_state=np.asarray(post, dtype=float), patch=patch.label,
        point_type=kind, axial=axial, transversality=tang,
        zero_gradient_coords=coords)


def find_grazing_on_orbit(traj) -> list[GrazeReport]:
    """One report per gamma-type event of the trajectory; empty means the
    orbit is non-grazing."""
    out = []
    for ev in traj.events:
        if not ev.is_grazing:
            continue
        out.append(GrazeReport(
            point=ev.pre_state, surface=ev.patch,
            inner_product=ev.transversality, axial=ev.axial,
            zero_gradient_coords=ev.zero_gradient_coords, on_boundary=True))
    return out
