from __future__ import annotations

import math

import numpy as np
import pytest

import grazedyn as gd
from grazedyn.floquet import (STABLE, UNDECIDED, UNSTABLE, MonodromyResult,
                              liouville_defect, monodromy, stability_verdict,
                              transition_matrix)
from grazedyn.linearize import VariationalBranch


def _const_branch(a_mat, jumps, period=2.0):
    times = tuple(t for t, _ in jumps)
    mats = tuple(m for _, m in jumps)
    return VariationalBranch(branch_id=1, a_of_t=lambda t: np.asarray(a_mat, float),
                             jump_times=times, jump_matrices=mats,
                             period=period, p=len(times))


def test_transition_zero_field_identity():
    br = _const_branch(np.zeros((2, 2)), [])
    assert np.allclose(transition_matrix(br, 0.0, 2.0), np.eye(2), atol=1e-14)


def test_transition_single_jump():
    d = np.array([[0.0, 0.0], [0.5, -0.3]])
    br = _const_branch(np.zeros((2, 2)), [(1.0, d)])
    assert np.allclose(transition_matrix(br, 0.0, 2.0), np.eye(2) + d, atol=1e-13)


def test_transition_composition_property():
    a = np.array([[0.0, 1.0], [-1.0, 0.05]])
    br = _const_branch(a, [])
    u02 = transition_matrix(br, 0.0, 1.7)
    u01 = transition_matrix(br, 0.0, 0.9)
    u12 = transition_matrix(br, 0.9, 1.7)
    assert np.max(np.abs(u12 @ u01 - u02)) < 1e-8


def test_transition_matches_expm():
    from scipy.linalg import expm
    a = np.array([[0.0, 1.0], [-1.0, 0.001]])
    br = _const_branch(a, [])
    u = transition_matrix(br, 0.0, math.pi)
    assert np.max(np.abs(u - expm(a * math.pi))) < 1e-10


def test_spiral_branch_multipliers(spiral_branches):
    m1 = monodromy(spiral_branches[0])
    m2 = monodromy(spiral_branches[1])
    # the miss branch is neutral: both multipliers at one
    assert sorted(abs(z) for z in m1.multipliers) == pytest.approx([1.0, 1.0], abs=1e-8)
    # the hit branch collapses one direction and keeps the flow multiplier
    mods2 = sorted(abs(z) for z in m2.multipliers)
    assert mods2[0] < 1e-6
    assert abs(mods2[1] - 1.0) < 1e-6
    assert m2.unit_multiplier_defect < 1e-6


def test_nonaxial_branch_multipliers(nonaxial_branches, nonaxial):
    k = nonaxial.metadata["constants"]["k"]
    m1 = monodromy(nonaxial_branches[0])
    m2 = monodromy(nonaxial_branches[1])
    assert sorted(abs(z) for z in m1.multipliers) == pytest.approx([1.0, 1.0], abs=1e-9)
    mods2 = sorted(abs(z) for z in m2.multipliers)
    # fold contraction rate 4*sqrt(2)*K, verified against the return map
    assert mods2[0] == pytest.approx(4.0 * math.sqrt(2.0) * k, abs=1e-9)
    assert mods2[1] == pytest.approx(1.0, abs=1e-9)


def test_impact_branch_multipliers(impact_branches, impact_family):
    c = impact_family.base.metadata["constants"]["c"]
    m1 = monodromy(impact_branches[0])
    mods = sorted(abs(z) for z in m1.multipliers)
    # Liouville pins the continuous-branch product to exp(-2*pi*c)
    assert mods[0] == pytest.approx(math.exp(-2.0 * math.pi * c), rel=1e-6)
    assert mods[1] == pytest.approx(1.0, abs=1e-6)
    m2 = monodromy(impact_branches[1])
    mods2 = sorted(abs(z) for z in m2.multipliers)
    assert mods2[0] < 1e-8 and abs(mods2[1] - 1.0) < 1e-6


def test_multipliers_invariant_under_window_shift(spiral_branches):
    br = spiral_branches[1]
    base = sorted(abs(z) for z in monodromy(br).multipliers)
    for s in (0.4, 1.1, 2.5):
        u = transition_matrix(br, s, s + br.period)
        mults = sorted(abs(z) for z in np.linalg.eigvals(u))
        assert np.allclose(mults, base, atol=1e-8)


def test_liouville_identity_all_branches(spiral_branches, nonaxial_branches,
                                         impact_branches):
    for br in (*spiral_branches, *nonaxial_branches, *impact_branches):
        assert liouville_defect(br) < 1e-6


def _mk(branch_id, mults):
    return MonodromyResult(branch_id, np.eye(len(mults)), tuple(mults), 0.0)


def test_stability_verdict_rules():
    assert stability_verdict([_mk(1, (1.0, 0.3))]).status == STABLE
    assert stability_verdict([_mk(1, (1.0, 0.3)), _mk(2, (1.0, 0.0))]).status == STABLE
    v = stability_verdict([_mk(1, (1.0, 1.0))])
    assert v.status == UNDECIDED
    assert any("no decision" in n for n in v.notes)
    assert stability_verdict([_mk(1, (1.0, 1.3))]).status == UNSTABLE
    # one stable branch and one undecided branch -> overall undecided
    mixed = stability_verdict([_mk(1, (1.0, 0.3)), _mk(2, (1.0, 1.0))])
    assert mixed.status == UNDECIDED
    with pytest.raises(ValueError):
        stability_verdict([])


def test_monodromy_eigen_residual_guard(spiral_branches):
    res = monodromy(spiral_branches[0])
    u, mults = res.U_omega, res.multipliers
    for lam in mults:
        # residual of the eigenpair was checked internally; spot check here
        w, v = np.linalg.eig(u)
        j = int(np.argmin(np.abs(w - lam)))
        assert np.linalg.norm(u @ v[:, j] - w[j] * v[:, j]) < 1e-8
