"""Transition matrices, monodromy and orbital-stability verdicts.

The transition matrix of a periodic linear impulsive branch solves
U' = A(t) U columnwise with U <- (Id + D_i) U at each jump instant; its
period map is the monodromy, whose eigenvalues are the multipliers.  The
verdict requires, on every branch, a simple unit multiplier with all
others strictly inside the unit circle.
"""
from __future__ import annotations

import cmath
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad, solve_ivp

from .linearize import VariationalBranch

STABLE = "orbitally-asymptotically-stable"
UNDECIDED = "undecided"
UNSTABLE = "unstable-indicated"


class EigenResidualError(RuntimeError):
    pass


@dataclass
class MonodromyResult:
    branch_id: int
    U_omega: np.ndarray
    multipliers: tuple[complex, ...]          # sorted by descending modulus
    unit_multiplier_defect: float


@dataclass
class StabilityVerdict:
    status: str
    per_branch: list = field(default_factory=list)  # (branch_id, multipliers, passes_A5)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "branches": [
                {"branch": b, "multipliers": [[z.real, z.imag] for z in mults],
                 "passes_A5": ok}
                for b, mults, ok in self.per_branch
            ],
            "notes": list(self.notes),
        }


def transition_matrix(branch: VariationalBranch, t0: float, t1: float,
                      rtol: float = 1e-12, atol: float = 1e-14) -> np.ndarray:
    """Transition matrix of the branch from t0 to t1 (t0 <= t1), applying
    the periodic jump matrices at instants inside (t0, t1]."""
    if t1 < t0:
        raise ValueError("t0 must not exceed t1")
    n = branch.a_of_t(t0).shape[0]
    U = np.eye(n)
    t = t0
    segments = branch.jumps_in(t0, t1) + [(t1, None)]
    for t_next, mat in segments:
        if t_next > t + 1e-14:
            sol = solve_ivp(
                lambda s, u: (branch.a_of_t(s) @ u.reshape(n, n)).reshape(-1),
                (t, t_next), U.reshape(-1), method="DOP853",
                rtol=rtol, atol=atol, dense_output=False)
            if not sol.success:
                raise RuntimeError(f"transition integration failed: {sol.message}")
            U = sol.y[:, -1].reshape(n, n)
        if mat is not None:
            U = (np.eye(n) + mat) @ U
        t = t_next
    return U


def _eig_with_residual(U: np.ndarray, residual_tol: float = 1e-8):
    n = U.shape[0]
    if n == 2:
        tr = U[0, 0] + U[1, 1]
        det = U[0, 0] * U[1, 1] - U[0, 1] * U[1, 0]
        disc = cmath.sqrt(tr * tr - 4.0 * det)
        vals = np.array([(tr + disc) / 2.0, (tr - disc) / 2.0])
    else:
        vals = np.linalg.eigvals(U)
    _, vecs = np.linalg.eig(U)
    ref = np.linalg.eigvals(U)
    # match closed-form values against the solver's and verify residuals
    order = np.argsort(-np.abs(vals))
    vals = vals[order]
    used = set()
    for lam in vals:
        j = min((i for i in range(len(ref)) if i not in used),
                key=lambda i: abs(ref[i] - lam))
        used.add(j)
        v = vecs[:, j]
        res = np.linalg.norm(U @ v - ref[j] * v)
        if res > residual_tol * max(1.0, np.linalg.norm(U)):
            raise EigenResidualError(f"eigenpair residual {res:.3e} above tolerance")
    return tuple(complex(v) for v in vals)


def monodromy(branch: VariationalBranch,
              rtol: float = 1e-12, atol: float = 1e-14) -> MonodromyResult:
    """Period map of the branch with verified multipliers."""
    U = transition_matrix(branch, 0.0, branch.period, rtol, atol)
    mults = _eig_with_residual(U)
    defect = min(abs(m - 1.0) for m in mults)
    return MonodromyResult(branch.branch_id, U, mults, float(defect))


def stability_verdict(results: list[MonodromyResult],
                      unit_tol: float = 5e-3) -> StabilityVerdict:
    """Orbital-stability verdict: stable only when every branch has exactly
    one multiplier within unit_tol of 1 and the rest inside the unit circle
    by more than unit_tol; any modulus above 1 + unit_tol indicates
    instability; everything else is undecided."""
    if not results:
        raise ValueError("at least one branch required")
    per_branch = []
    notes = []
    any_unstable = False
    all_pass = True
    for res in results:
        unit = [m for m in res.multipliers if abs(m - 1.0) <= unit_tol]
        inside = [m for m in res.multipliers
                  if abs(m - 1.0) > unit_tol and abs(m) < 1.0 - unit_tol]
        outside = [m for m in res.multipliers if abs(m) > 1.0 + unit_tol]
        passes = len(unit) == 1 and len(unit) + len(inside) == len(res.multipliers)
        if outside:
            any_unstable = True
            notes.append(f"branch {res.branch_id}: multiplier modulus above one")
        if len(unit) > 1:
            notes.append(f"branch {res.branch_id}: multipliers {{1,1}} give no decision")
        all_pass &= passes
        per_branch.append((res.branch_id, res.multipliers, passes))
    if any_unstable:
        status = UNSTABLE
    elif all_pass:
        status = STABLE
    else:
        status = UNDECIDED
    return StabilityVerdict(status=status, per_branch=per_branch, notes=notes)


def liouville_defect(branch: VariationalBranch,
                     rtol: float = 1e-12, atol: float = 1e-14) -> float:
    """Relative defect of det U(omega) against the trace/jump identity
    exp(int tr A) * prod det(Id + D_i); absolute when the product vanishes."""
    U = transition_matrix(branch, 0.0, branch.period, rtol, atol)
    det_u = float(np.linalg.det(U))
    pts = sorted(set([0.0, branch.period] + [t for t in branch.jump_times
                                             if 0.0 < t < branch.period]))
    integral = 0.0
    for a, b in zip(pts, pts[1:]):
        val, _ = quad(lambda s: float(np.trace(branch.a_of_t(s))), a, b, limit=200)
        integral += val
    n = U.shape[0]
    prod = 1.0
    for mat in branch.jump_matrices:
        prod *= float(np.linalg.det(np.eye(n) + mat))
    expected = float(np.exp(integral)) * prod
    if abs(expected) < 1e-12:
        return abs(det_u - expected)
    return abs(det_u - expected) / abs(expected)
