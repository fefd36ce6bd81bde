from __future__ import annotations

import math

import numpy as np
import pytest

import grazedyn as gd
from grazedyn.core import (CONTACT, SampleSpec, Surface, SurfacePatch, JumpMap,
                           SystemDef, finite_difference_jacobian,
                           validate_conditions, _segment_patch)


def _all_systems():
    out = []
    for name in gd.builtin_names():
        s = gd.builtin_system(name)
        out.append(s.base if hasattr(s, "base") else s)
    return out


def test_builtin_names_and_unknown_error():
    assert set(gd.builtin_names()) == {
        "spiral-impact", "nonaxial-circle", "impact-cycle", "perturbed-impact"}
    with pytest.raises(KeyError) as err:
        gd.builtin_system("no-such-system")
    for name in gd.builtin_names():
        assert name in str(err.value)


@pytest.mark.parametrize("name", ["spiral-impact", "nonaxial-circle",
                                  "impact-cycle", "perturbed-impact"])
def test_field_jacobian_matches_finite_differences(name):
    s = gd.builtin_system(name)
    sysd = s.base if hasattr(s, "base") else s
    lo, hi = (np.asarray(b) for b in sysd.metadata["domain_box"])
    rng = np.random.default_rng(7)
    pts = rng.uniform(lo, hi, size=(100, sysd.dim))
    for p in pts:
        fd = finite_difference_jacobian(sysd.field_at, p)
        an = sysd.jac_at(p)
        scale = max(1.0, float(np.max(np.abs(an))))
        assert np.max(np.abs(fd - an)) / scale < 1e-6


@pytest.mark.parametrize("name", ["spiral-impact", "nonaxial-circle", "impact-cycle"])
def test_declared_grazing_points_are_tangencies(name):
    s = gd.builtin_system(name)
    sysd = s.base if hasattr(s, "base") else s
    xstar = np.asarray(sysd.metadata["cycle"]["grazing_point"], dtype=float)
    hits = [surf.patch for surf in sysd.surfaces
            if abs(surf.patch.phi(xstar)) < 1e-9
            and surf.patch.in_bounds(xstar, 1e-9)]
    assert hits
    for patch in hits:
        ip = float(np.dot(patch.grad_phi(xstar), sysd.field_at(xstar)))
        assert abs(ip) < 1e-10


def test_validate_conditions_pass_profile(spiral):
    rep = validate_conditions(spiral)
    for cond in ("C1", "C2", "C4", "C5", "C6", "C7", "C8"):
        assert rep.status(cond) == "pass-on-samples", cond
    for cond in ("C3", "C9", "C10"):
        assert rep.status(cond) == "not-checkable"
    rep2 = validate_conditions(spiral, certificates=frozenset({"C9", "C10"}))
    assert rep2.status("C9") == "declared"


def test_validate_conditions_deterministic(spiral):
    a = validate_conditions(spiral, SampleSpec(seed=3)).to_json(sort_keys=True)
    b = validate_conditions(spiral, SampleSpec(seed=3)).to_json(sort_keys=True)
    assert a == b


def test_identity_jump_passes_c2_c6():
    patch = _segment_patch("g", axis=0, level=0.0, other_range=(-1.0, 1.0),
                           contact_at=(0.0, -1.0))
    # contact corner at (0,-1); identity jump everywhere
    jump = JumpMap(lambda x: np.array(x, dtype=float), lambda x: np.eye(2))
    sysd = SystemDef(dim=2, f=lambda x: np.array([1.0, 0.0]),
                     f_jacobian=lambda x: np.zeros((2, 2)),
                     surfaces=(Surface(patch, jump),),
                     name="identity-jump",
                     metadata={"domain_box": ((-2, -2), (2, 2))})
    rep = validate_conditions(sysd)
    assert rep.status("C2") == "pass-on-samples"
    assert rep.status("C6") == "pass-on-samples"


def test_vanishing_gradient_fails_c1():
    def phi(x):
        return float(x[0] ** 2)

    def grad(x):
        return np.array([2.0 * x[0], 0.0])

    patch = SurfacePatch(
        "bad", phi, grad,
        in_bounds=lambda x, tol: True,
        boundary_test=lambda x, tol: False,
        sample_points=lambda rng, n, margin: np.column_stack(
            [np.zeros(n), rng.uniform(-1, 1, n)]))
    jump = JumpMap(lambda x: np.asarray(x, float), lambda x: np.eye(2))
    sysd = SystemDef(dim=2, f=lambda x: np.array([1.0, 0.0]),
                     f_jacobian=lambda x: np.zeros((2, 2)),
                     surfaces=(Surface(patch, jump),), name="degenerate",
                     metadata={"domain_box": ((-1, -1), (1, 1))})
    rep = validate_conditions(sysd)
    assert rep.status("C1") == "fail"
    assert abs(rep.entries["C1"]["witness"][0]) < 1e-12


def test_nonaxial_fold_jump_fails_c2(nonaxial):
    rep = validate_conditions(nonaxial)
    assert rep.status("C2") == "fail"


@pytest.mark.parametrize("name", ["impact-cycle", "perturbed-impact"])
def test_family_reduces_to_base_at_mu_zero(name):
    fam = gd.builtin_system(name)
    sys0 = fam.instantiate(0.0)
    rng = np.random.default_rng(11)
    lo, hi = (np.asarray(b) for b in fam.base.metadata["domain_box"])
    for p in rng.uniform(lo, hi, size=(25, 2)):
        assert np.max(np.abs(sys0.field_at(p) - fam.base.field_at(p))) < 1e-12
    for surf0, surfb in zip(sys0.surfaces, fam.base.surfaces):
        for p in surfb.patch.sample_points(rng, 10, 1e-2):
            assert np.max(np.abs(np.asarray(surf0.jump.j_of(p))
                                 - np.asarray(surfb.jump.j_of(p)))) < 1e-12


def test_family_rejects_mu_outside_range(impact_family):
    with pytest.raises(ValueError):
        impact_family.instantiate(5.0)


def test_jump_inversion_roundtrip(spiral):
    surf = spiral.surfaces[1]  # linear restitution, invertible
    y = np.array([0.0, -1.3])
    img = surf.jump.j_of(y)
    back = surf.jump.invert(img)
    assert np.linalg.norm(back - y) < 1e-10


def test_as_state_rejects_nonfinite():
    with pytest.raises(ValueError):
        gd.as_state([1.0, float("nan")])
    with pytest.raises(ValueError):
        gd.as_state([1.0, 2.0], dim=3)
