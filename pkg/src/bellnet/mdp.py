"""Tabular MDP containers and single-step Bellman operators.

State-action pairs are flattened with ``idx(s, a) = a * num_states + s``, which
is the column-stacking ``vec`` of an ``|S| x |A|`` matrix. Every module in the
package uses this convention.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

STOCHASTIC_ATOL = 1e-12


class NumericError(ArithmeticError):
    """Raised when a computation produces a non-finite or singular result."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _check_stochastic(rows: np.ndarray, what: str) -> None:
    if np.any(rows < 0):
        raise ValueError(f"{what} has negative entries")
    sums = rows.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > STOCHASTIC_ATOL)
    if bad.size:
        raise ValueError(f"{what} row {bad[0]} sums to {sums[bad[0]]!r}, not 1")


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Known-model MDP: ``transition[idx(s, a), s'] = Pr(s' | s, a)``."""

    num_states: int
    num_actions: int
    transition: np.ndarray
    reward: np.ndarray
    discount: float

    def __post_init__(self):
        S, A = int(self.num_states), int(self.num_actions)
        if S < 1 or A < 1:
            raise ValueError("num_states and num_actions must be positive")
        P = np.array(self.transition, dtype=np.float64)
        R = np.array(self.reward, dtype=np.float64)
        if P.shape != (S * A, S):
            raise ValueError(f"transition must have shape {(S * A, S)}, got {P.shape}")
        if R.shape != (S, A):
            raise ValueError(f"reward must have shape {(S, A)}, got {R.shape}")
        if not np.all(np.isfinite(R)):
            raise ValueError("reward entries must be finite")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")
        _check_stochastic(P, "transition")
        P = P / P.sum(axis=1, keepdims=True)
        object.__setattr__(self, "num_states", S)
        object.__setattr__(self, "num_actions", A)
        object.__setattr__(self, "transition", _readonly(P))
        object.__setattr__(self, "reward", _readonly(R))
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def num_pairs(self) -> int:
        return self.num_states * self.num_actions

    @property
    def r(self) -> np.ndarray:
        """Reward vector ``vec(R)``."""
        return vec(self.reward)

    def with_discount(self, discount: float) -> "TabularMdp":
        return TabularMdp(self.num_states, self.num_actions, self.transition, self.reward, discount)

    def to_dict(self) -> dict:
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "discount": self.discount,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TabularMdp":
        try:
            return cls(
                num_states=int(d["num_states"]),
                num_actions=int(d["num_actions"]),
                transition=np.asarray(d["transition"], dtype=np.float64),
                reward=np.asarray(d["reward"], dtype=np.float64),
                discount=float(d["discount"]),
            )
        except KeyError as exc:
            raise ValueError(f"MDP document is missing field {exc.args[0]!r}") from None


def save_mdp(mdp: TabularMdp, path) -> None:
    Path(path).write_text(json.dumps(mdp.to_dict()))


def load_mdp(path) -> TabularMdp:
    return TabularMdp.from_dict(json.loads(Path(path).read_text()))


def random_mdp(num_states, num_actions, discount, rng, reward_scale=1.0) -> TabularMdp:
    """Dense MDP with Dirichlet(1) transition rows and Gaussian rewards."""
    P = rng.dirichlet(np.ones(num_states), size=num_states * num_actions)
    R = reward_scale * rng.standard_normal((num_states, num_actions))
    return TabularMdp(num_states, num_actions, P, R, discount)


# ---------------------------------------------------------------- indexing


def idx(s: int, a: int, num_states: int, num_actions: int | None = None) -> int:
    if not 0 <= s < num_states:
        raise ValueError(f"state {s} out of range [0, {num_states})")
    if a < 0 or (num_actions is not None and a >= num_actions):
        raise ValueError(f"action {a} out of range")
    return a * num_states + s


def unidx(i: int, num_states: int) -> tuple[int, int]:
    if i < 0:
        raise ValueError(f"flat index {i} is negative")
    a, s = divmod(i, num_states)
    return s, a


def vec(M: np.ndarray) -> np.ndarray:
    """Column-stacking vectorisation of an ``|S| x |A|`` matrix."""
    return np.asarray(M, dtype=np.float64).reshape(-1, order="F")


def unvec(q: np.ndarray, num_states: int) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1 or q.size % num_states:
        raise ValueError(f"vector of length {q.size} is not a multiple of {num_states}")
    return q.reshape((num_states, -1), order="F")


def pair_permutation(state_perm, action_perm) -> np.ndarray:
    """Flat-index permutation induced by relabelling states and actions.

    Returns ``perm`` with ``perm[idx(s, a)] = idx(state_perm[s], action_perm[a])``.
    """
    state_perm = np.asarray(state_perm)
    action_perm = np.asarray(action_perm)
    S = state_perm.size
    return (action_perm[:, None] * S + state_perm[None, :]).reshape(-1)


def permute_mdp(mdp: TabularMdp, state_perm, action_perm=None) -> TabularMdp:
    """Relabel states (and optionally actions); state ``s`` becomes ``state_perm[s]``."""
    S, A = mdp.num_states, mdp.num_actions
    state_perm = np.asarray(state_perm)
    action_perm = np.arange(A) if action_perm is None else np.asarray(action_perm)
    perm = pair_permutation(state_perm, action_perm)
    P = np.empty_like(mdp.transition)
    P[np.ix_(perm, state_perm)] = mdp.transition
    R = np.empty_like(mdp.reward)
    R[np.ix_(state_perm, action_perm)] = mdp.reward
    return TabularMdp(S, A, P, R, mdp.discount)


# ---------------------------------------------------------------- policies


def check_policy(probs: np.ndarray, num_states: int | None = None, num_actions: int | None = None):
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ValueError("policy must be a 2-D |S| x |A| matrix")
    if num_states is not None and probs.shape != (num_states, num_actions):
        raise ValueError(f"policy shape {probs.shape} != {(num_states, num_actions)}")
    _check_stochastic(probs, "policy")
    return probs


def greedy_policy(Q: np.ndarray) -> np.ndarray:
    """One-hot argmax per row; ties go to the lowest action index."""
    Q = np.asarray(Q, dtype=np.float64)
    if np.isnan(Q).any():
        raise ValueError("Q contains NaN")
    pi = np.zeros_like(Q)
    pi[np.arange(Q.shape[0]), np.argmax(Q, axis=1)] = 1.0
    return pi


def softmax_policy(Q: np.ndarray, tau: float) -> np.ndarray:
    """Row-wise softmax of ``Q / tau`` (max-subtracted)."""
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    Q = np.asarray(Q, dtype=np.float64)
    if not np.all(np.isfinite(Q)):
        raise ValueError("Q must be finite")
    z = (Q - Q.max(axis=1, keepdims=True)) / tau
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------- operators


def policy_transition(mdp: TabularMdp, pi: np.ndarray) -> np.ndarray:
    """State-action transition matrix under ``pi``.

    ``out[idx(s, a), idx(s', a')] = P(s' | s, a) * pi(a' | s')``; this is the
    Khatri-Rao form ``P (I kr pi^T)^T``.
    """
    pi = check_policy(pi, mdp.num_states, mdp.num_actions)
    n = mdp.num_pairs
    return (mdp.transition[:, None, :] * pi.T[None, :, :]).reshape(n, n)


def _check_vec(x, n, name):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {x.shape}")
    return x


def bellman_backup(q, p_pi, r, gamma) -> np.ndarray:
    """``r + gamma * p_pi @ q``."""
    p_pi = np.asarray(p_pi, dtype=np.float64)
    n = p_pi.shape[0]
    if p_pi.shape != (n, n):
        raise ValueError("p_pi must be square")
    q = _check_vec(q, n, "q")
    r = _check_vec(r, n, "r")
    return r + gamma * (p_pi @ q)


def bellman_optimality_backup(q, mdp: TabularMdp) -> np.ndarray:
    q = _check_vec(q, mdp.num_pairs, "q")
    v = unvec(q, mdp.num_states).max(axis=1)
    return mdp.r + mdp.discount * (mdp.transition @ v)


def optimality_residual(q, mdp: TabularMdp) -> float:
    """Sup-norm Bellman optimality residual ``||q - T q||_inf``."""
    return float(np.max(np.abs(q - bellman_optimality_backup(q, mdp))))
