"""Classical dynamic-programming baselines.

These double as oracles for the graph-filter and BellNet code, so they are
written as plainly as possible: repeated Bellman backups and a dense solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .mdp import (
    NumericError,
    TabularMdp,
    bellman_backup,
    bellman_optimality_backup,
    greedy_policy,
    optimality_residual,
    policy_transition,
    unvec,
)

CONVERGED_TOL = 1e-10
CONVERGED_MAX_ITER = 10_000


@dataclass
class SolverReport:
    q: np.ndarray
    policy: np.ndarray
    residual: float
    iterations_used: int
    trajectory: list = field(default_factory=list, repr=False)


def policy_evaluation_iterative(p_pi, r, gamma, steps, q0) -> np.ndarray:
    """Apply ``steps`` Bellman backups to ``q0`` under a fixed policy."""
    if steps < 0:
        raise ValueError("steps must be non-negative")
    q = np.array(q0, dtype=np.float64)
    if q.shape != np.shape(r):
        raise ValueError("q0 and r must have the same shape")
    for _ in range(steps):
        q = bellman_backup(q, p_pi, r, gamma)
    return q


def policy_evaluation_exact(p_pi, r, gamma) -> np.ndarray:
    """Solve ``(I - gamma P_pi) q = r`` directly."""
    p_pi = np.asarray(p_pi, dtype=np.float64)
    n = p_pi.shape[0]
    if p_pi.shape != (n, n) or np.shape(r) != (n,):
        raise ValueError("dimension mismatch between p_pi and r")
    M = np.eye(n) - gamma * p_pi
    try:
        lu = scipy.linalg.lu_factor(M, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"policy evaluation system is not solvable: {exc}") from exc
    if np.any(np.diag(lu[0]) == 0):
        raise NumericError("policy evaluation system is singular (discount >= 1?)")
    q = scipy.linalg.lu_solve(lu, r)
    # one refinement pass tightens the fixed-point residual
    q = q + scipy.linalg.lu_solve(lu, r - M @ q)
    return q


def policy_iteration(
    mdp: TabularMdp, eval_steps: int, improve_steps: int, q0, warm_start: bool = True
) -> SolverReport:
    """Truncated policy iteration.

    Starts from the greedy policy of ``q0`` and alternates ``eval_steps`` Bellman
    backups with greedy improvement, ``improve_steps`` times. With
    ``warm_start=False`` every evaluation restarts from zero.
    """
    if eval_steps < 1 or improve_steps < 1:
        raise ValueError("eval_steps and improve_steps must be >= 1")
    q = np.array(q0, dtype=np.float64)
    if q.shape != (mdp.num_pairs,):
        raise ValueError(f"q0 must have length {mdp.num_pairs}")
    r = mdp.r
    pi = greedy_policy(unvec(q, mdp.num_states))
    trajectory = []
    for _ in range(improve_steps):
        start = q if warm_start else np.zeros_like(q)
        q = policy_evaluation_iterative(policy_transition(mdp, pi), r, mdp.discount, eval_steps, start)
        pi = greedy_policy(unvec(q, mdp.num_states))
        trajectory.append(q)
    return SolverReport(q, pi, optimality_residual(q, mdp), improve_steps, trajectory)


def value_iteration(mdp: TabularMdp, steps: int, q0) -> SolverReport:
    if steps < 1:
        raise ValueError("steps must be >= 1")
    q = np.array(q0, dtype=np.float64)
    if q.shape != (mdp.num_pairs,):
        raise ValueError(f"q0 must have length {mdp.num_pairs}")
    trajectory = []
    for _ in range(steps):
        q = bellman_optimality_backup(q, mdp)
        trajectory.append(q)
    pi = greedy_policy(unvec(q, mdp.num_states))
    return SolverReport(q, pi, optimality_residual(q, mdp), steps, trajectory)


def optimal_q(mdp: TabularMdp, tol=CONVERGED_TOL, max_iter=CONVERGED_MAX_ITER) -> SolverReport:
    """Optimal Q-function by policy iteration with exact evaluation.

    Stops once the optimality residual drops below ``tol`` or after
    ``max_iter`` improvements.
    """
    r = mdp.r
    pi = greedy_policy(mdp.reward)
    q = r.copy()
    it = 0
    residual = np.inf
    while it < max_iter:
        q = policy_evaluation_exact(policy_transition(mdp, pi), r, mdp.discount)
        it += 1
        residual = optimality_residual(q, mdp)
        new_pi = greedy_policy(unvec(q, mdp.num_states))
        if residual < tol:
            break
        if np.array_equal(new_pi, pi):
            # stable policy but residual above tol: polish with optimality backups
            for _ in range(max_iter - it):
                q = bellman_optimality_backup(q, mdp)
                it += 1
                residual = optimality_residual(q, mdp)
                if residual < tol:
                    break
            new_pi = greedy_policy(unvec(q, mdp.num_states))
            pi = new_pi
            break
        pi = new_pi
    return SolverReport(q, greedy_policy(unvec(q, mdp.num_states)), float(residual), it)
