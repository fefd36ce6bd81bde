from __future__ import annotations

import math

import numpy as np
import pytest

import grazedyn as gd
from grazedyn.core import JumpMap, Surface, SurfacePatch, SystemDef, _segment_patch
from grazedyn.integrate import (CrossingNotFound, SimOptions, b_distance,
                                integrate_arc, locate_crossing, simulate,
                                simulate_backward, trajectory_csv, events_csv)

ELL = math.exp(0.00025 * math.pi)


def _zero_field_system():
    patch = _segment_patch("g", axis=0, level=5.0, other_range=(-1.0, 1.0),
                           contact_at=(5.0, -1.0))
    jump = JumpMap(lambda x: np.asarray(x, float), lambda x: np.eye(2))
    return SystemDef(dim=2, f=lambda x: np.zeros(2),
                     f_jacobian=lambda x: np.zeros((2, 2)),
                     surfaces=(Surface(patch, jump),), name="still")


def test_zero_field_arc_exits_time_limit():
    sysd = _zero_field_system()
    arc = integrate_arc(sysd, np.array([0.3, 0.4]), 0.0, 2.0)
    assert arc.exit == "time-limit"
    assert np.allclose(arc.states[-1], [0.3, 0.4])
    # spacing respects max step
    assert np.max(np.diff(arc.ts)) <= SimOptions().max_step + 1e-12


def test_harmonic_arc_hits_grazing_line_near_half_pi(spiral):
    arc = integrate_arc(spiral, np.array([0.0, 1.0]), 0.0, math.pi / 2)
    assert arc.exit == "surface-hit:gamma1"
    # the expanding focus overshoots the line slightly before t = pi/2
    assert abs(arc.t_end - math.pi / 2) < 2e-3
    assert abs(arc.states[-1][0] - ELL) < 1e-9


def test_locate_crossing_linear_motion():
    patch = _segment_patch("g", axis=0, level=0.0, other_range=(-1.0, 1.0),
                           contact_at=(0.0, -1.0))
    jump = JumpMap(lambda x: np.asarray(x, float), lambda x: np.eye(2))
    sysd = SystemDef(dim=2, f=lambda x: np.array([1.0, 0.0]),
                     f_jacobian=lambda x: np.zeros((2, 2)),
                     surfaces=(Surface(patch, jump),), name="drift")
    arc = integrate_arc(sysd, np.array([-1.0, 0.0]), 0.0, 3.0, patches=[])
    tau, x_tau = locate_crossing(arc, patch)
    assert abs(tau - 1.0) <= 1e-10
    assert np.linalg.norm(x_tau) <= 1e-10


def test_locate_crossing_spiral_graze(spiral, spiral_cycle):
    _, meta = spiral_cycle
    # raw flow from the cycle start, no event handling
    arc = integrate_arc(spiral, np.asarray(meta["start"]), 0.0, 2.0, patches=[])
    tau, x_tau = locate_crossing(arc, spiral.surfaces[0].patch)
    assert abs(tau - meta["grazing_time"]) < 1e-7
    # the tangency sits at t = pi/2 + 0.0005 + O(a^2), not at pi/2 itself
    assert abs(tau - math.pi / 2) < 1e-3
    assert abs(spiral.surfaces[0].patch.phi(x_tau)) < 1e-8


def test_locate_crossing_nonaxial_tangency(nonaxial):
    arc = integrate_arc(nonaxial, np.array([0.0, 1.0]), 0.0, 2.0, patches=[])
    tau, x_tau = locate_crossing(arc, nonaxial.surfaces[0].patch)
    # double root of sin t + cos t - sqrt(2) at pi/4
    assert abs(tau - math.pi / 4) < 1e-6
    assert abs(nonaxial.surfaces[0].patch.phi(x_tau)) < 1e-8


def test_locate_crossing_not_found(nonaxial):
    arc = integrate_arc(nonaxial, np.array([0.0, 0.5]), 0.0, 2.0, patches=[])
    with pytest.raises(CrossingNotFound):
        locate_crossing(arc, nonaxial.surfaces[0].patch)


def test_simulate_spiral_cycle_events(spiral_cycle):
    traj, meta = spiral_cycle
    assert [e.point_type for e in traj.events] == ["gamma", "alpha"]
    gamma, alpha = traj.events
    assert abs(gamma.theta - meta["grazing_time"]) < 1e-9
    assert np.linalg.norm(gamma.pre_state - np.asarray(meta["grazing_point"])) < 1e-9
    # zero jump at the boundary contact
    assert np.linalg.norm(gamma.post_state - gamma.pre_state) < 1e-12
    assert abs(alpha.theta - meta["period"]) < 1e-9
    assert np.linalg.norm(alpha.pre_state - np.asarray(meta["alpha_point"])) < 1e-7
    assert np.linalg.norm(alpha.post_state - np.asarray(meta["start"])) < 1e-9
    traj.check_consistency()


def test_simulate_zero_events_in_invariant_region(impact_family):
    base = impact_family.base
    traj = simulate(base, np.array([1.5, 0.0]), 0.0, 2.0 * math.pi)
    assert traj.events == []
    assert len(traj.arcs) == 1


def test_simulate_impact_cycle_returns(impact_cycle):
    traj, meta = impact_cycle
    assert [e.point_type for e in traj.events] == ["gamma"]
    assert np.linalg.norm(traj.events[0].pre_state) < 1e-9
    assert np.linalg.norm(traj.terminal_state - np.asarray(meta["start"])) < 1e-9


def test_transversal_events_flip_phi_sign(spiral):
    opts = SimOptions()
    traj = simulate(spiral, np.array([0.8, 1.2]), 0.0, 6.0, opts)
    assert traj.events
    by_label = {s.patch.label: s.patch for s in spiral.surfaces}
    for ev in traj.events:
        if not ev.point_type.startswith("alpha"):
            continue
        patch = by_label[ev.patch]
        before = traj.eval(ev.theta - 1e-4)
        # post-jump flow continues on the other side or returns inward
        assert abs(patch.phi(ev.pre_state)) <= opts.event_phi_tol * 10
        assert abs(patch.phi(before)) > 0


def test_gamma_events_have_small_inner_product(spiral_cycle, nonaxial_cycle):
    for traj, _ in (spiral_cycle, nonaxial_cycle):
        for ev in traj.events:
            if ev.is_grazing:
                assert abs(ev.transversality) <= 1e-7


def test_simulate_deterministic(spiral):
    a = simulate(spiral, np.array([0.8, 1.2]), 0.0, 5.0)
    b = simulate(spiral, np.array([0.8, 1.2]), 0.0, 5.0)
    assert trajectory_csv(a) == trajectory_csv(b)
    assert events_csv(a) == events_csv(b)


def test_tolerance_halving_convergence(spiral):
    coarse = SimOptions(rtol=1e-8, atol=1e-10)
    fine = SimOptions(rtol=5e-9, atol=5e-11)
    xa = simulate(spiral, np.array([0.8, 1.2]), 0.0, 4.0, coarse).terminal_state
    xb = simulate(spiral, np.array([0.8, 1.2]), 0.0, 4.0, fine).terminal_state
    assert np.linalg.norm(xa - xb) < 10 * 1e-8 * np.linalg.norm(xa) + 1e-8


def test_blowup_exit():
    sysd = SystemDef(dim=1, f=lambda x: 10.0 * x,
                     f_jacobian=lambda x: np.array([[10.0]]),
                     surfaces=(), name="explode")
    arc = integrate_arc(sysd, np.array([1.0]), 0.0, 3.0)
    assert arc.exit == "blow-up"


def test_backward_simulation_of_cycle(spiral, spiral_cycle):
    traj, meta = spiral_cycle
    T = meta["period"]
    x_quarter = traj.eval(T / 4)
    back = simulate_backward(spiral, x_quarter, 0.0, -T)
    kinds = [e.point_type for e in back.events]
    assert kinds == ["alpha_prime", "gamma_prime"]
    # the gamma' contact has zero jump
    gp = back.events[1]
    assert np.linalg.norm(gp.post_state - gp.pre_state) < 1e-9
    assert np.linalg.norm(back.terminal_state - x_quarter) < 1e-6


def test_backward_matches_forward_without_events(spiral):
    fwd = simulate(spiral, np.array([0.2, 0.2]), 0.0, 0.5)
    back = simulate_backward(spiral, fwd.terminal_state, 0.5, 0.0)
    assert np.linalg.norm(back.terminal_state - np.array([0.2, 0.2])) < 1e-8


def test_backward_forward_roundtrip_with_jumps(spiral):
    x0 = np.array([0.8, 1.2])
    fwd = simulate(spiral, x0, 0.0, 2.0)
    assert fwd.events
    back = simulate_backward(spiral, fwd.terminal_state, 2.0, 0.0)
    assert np.linalg.norm(back.terminal_state - x0) < 1e-6


def test_group_property(spiral, impact_family):
    assert gd.group_property_check(spiral, np.array([0.8, 1.2]), 1.0, 2.0) < 1e-6
    # t1 = 0 is trivial
    assert gd.group_property_check(spiral, np.array([0.8, 1.2]), 0.0, 1.0) < 1e-9
    sysmu = impact_family.instantiate(-0.2)
    assert gd.group_property_check(sysmu, np.array([0.5, 0.1]),
                                   math.pi, math.pi) < 1e-6


def test_b_distance_identity_and_incomparable(spiral, spiral_cycle):
    traj, meta = spiral_cycle
    assert b_distance(traj, traj, (0.0, meta["period"])) < 1e-12
    # different event counts on a window -> incomparable
    quiet = simulate(gd.builtin_system("impact-cycle").base,
                     np.array([1.5, 0.0]), 0.0, meta["period"])
    assert b_distance(traj, quiet, (0.0, meta["period"])) is None


def test_b_sequence_monotone(spiral):
    traj = simulate(spiral, np.array([0.8, 1.2]), 0.0, 10.0)
    th = traj.b_sequence
    assert all(b > a for a, b in zip(th, th[1:]))


def test_csv_formats(spiral_cycle):
    traj, _ = spiral_cycle
    tcsv = trajectory_csv(traj)
    assert tcsv.splitlines()[0] == "t,x1,x2,arc_index"
    ecsv = events_csv(traj)
    head = ecsv.splitlines()[0].split(",")
    assert head[:4] == ["theta", "type", "axial", "transversality"]
    assert "pre_1" in head and "post_2" in head and "zero_coords" in head
    # 17 significant digits round-trip
    val = tcsv.splitlines()[2].split(",")[1]
    assert float(val) == traj.arcs[0].states[1][0]
