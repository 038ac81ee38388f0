"""BellNet: unrolled policy iteration as a cascade of biased graph filters.

Layer ``l`` maps ``(pi_l, q_l)`` to::

    q_{l+1}  = sum_{j<=K} h_j P_l^j r + h_{K+1} P_l^{K+1} q_l
    pi_{l+1} = softmax(unvec(q_{l+1}) / tau)

where ``P_l`` is the state-action transition matrix under ``pi_l``. The input
policy of layer 0 is the softmax of the initial estimate ``q_bar``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph_filter import check_coeffs, classical_coeffs
from .mdp import NumericError, TabularMdp, check_policy, greedy_policy, softmax_policy, unvec, vec

DEFAULT_TEMPERATURE = 0.25


class PolicyShift:
    """The state-action shift ``P_pi`` applied through its Khatri-Rao factors.

    ``P_pi @ u = P @ rowsum(pi * unvec(u))`` and
    ``P_pi.T @ g = vec(pi * (P.T @ g)[:, None])``; ``P_pi`` itself is never formed.
    """

    def __init__(self, mdp: TabularMdp, pi: np.ndarray):
        self.P = mdp.transition
        self.pi = pi
        self.S = mdp.num_states

    def matvec(self, u):
        return self.P @ np.einsum("sa,sa->s", self.pi, unvec(u, self.S))

    def rmatvec_states(self, g):
        """``P.T @ g``: the state-level half of ``P_pi.T @ g``."""
        return self.P.T @ g

    def rmatvec(self, g):
        return vec(self.pi * self.rmatvec_states(g)[:, None])


@dataclass
class BellNetModel:
    """Filter taps for ``depth = L + 1`` layers.

    ``params`` has shape ``(1, K + 2)`` when weights are shared and
    ``(depth, K + 2)`` otherwise.
    """

    params: np.ndarray
    filter_order: int
    depth: int
    temperature: float = DEFAULT_TEMPERATURE
    weight_shared: bool = False

    def __post_init__(self):
        self.params = np.array(self.params, dtype=np.float64, ndmin=2)
        K = int(self.filter_order)
        if K < 0:
            raise ValueError("filter order must be non-negative")
        if self.depth < 1:
            raise ValueError("depth (L + 1) must be at least 1")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        rows = 1 if self.weight_shared else self.depth
        if self.params.shape != (rows, K + 2):
            raise ValueError(f"params must have shape {(rows, K + 2)}, got {self.params.shape}")
        for h in self.params:
            check_coeffs(h)

    @classmethod
    def classical(cls, gamma, depth, filter_order, temperature=DEFAULT_TEMPERATURE, weight_shared=False):
        h = classical_coeffs(gamma, filter_order)
        rows = 1 if weight_shared else depth
        return cls(np.tile(h, (rows, 1)), filter_order, depth, temperature, weight_shared)

    def coeffs(self, layer: int) -> np.ndarray:
        return self.params[0] if self.weight_shared else self.params[layer]

    @property
    def layers(self) -> list:
        return [self.coeffs(l) for l in range(self.depth)]

    def copy(self, **changes) -> "BellNetModel":
        kw = dict(
            params=self.params.copy(),
            filter_order=self.filter_order,
            depth=self.depth,
            temperature=self.temperature,
            weight_shared=self.weight_shared,
        )
        kw.update(changes)
        return BellNetModel(**kw)

    def to_dict(self) -> dict:
        return {
            "filter_order": self.filter_order,
            "temperature": self.temperature,
            "weight_shared": self.weight_shared,
            "layers": [h.tolist() for h in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BellNetModel":
        layers = np.asarray(d["layers"], dtype=np.float64)
        if layers.ndim != 2 or layers.shape[0] < 1:
            raise ValueError("checkpoint 'layers' must be a non-empty list of coefficient arrays")
        shared = bool(d["weight_shared"])
        if shared and not np.all(layers == layers[0]):
            raise ValueError("weight-shared checkpoint has differing layers")
        return cls(
            params=layers[:1] if shared else layers,
            filter_order=int(d["filter_order"]),
            depth=layers.shape[0],
            temperature=float(d["temperature"]),
            weight_shared=shared,
        )


def save_model(model: BellNetModel, path) -> None:
    # float repr is the shortest string that round-trips, so this is bit-exact
    Path(path).write_text(json.dumps(model.to_dict(), indent=1))


def load_model(path) -> BellNetModel:
    return BellNetModel.from_dict(json.loads(Path(path).read_text()))


@dataclass
class ForwardTrace:
    """Per-layer value functions and policies, ``q[0] = q_bar`` to ``q[L+1] = q_hat``.

    ``partials[l]`` holds the nested filter states ``u_0..u_{K+1}`` of layer ``l``
    (``u_0`` is that layer's output); backprop reuses them.
    """

    q: list = field(default_factory=list)
    pi: list = field(default_factory=list)
    partials: list = field(default_factory=list, repr=False)


def _filter_layer(shift: PolicyShift, r, h, q_l):
    u = h[-1] * q_l
    partials = [u]
    for hj in h[-2::-1]:
        u = hj * r + shift.matvec(u)
        partials.append(u)
    partials.reverse()
    return u, partials


def _improve(q, S, tau, hard_max):
    Q = unvec(q, S)
    return greedy_policy(Q) if hard_max else softmax_policy(Q, tau)


def layer_forward(mdp: TabularMdp, coeffs, pi_l, q_l, tau=DEFAULT_TEMPERATURE, hard_max=False):
    """One BellNet block: biased filter on ``P_{pi_l}`` then policy improvement."""
    h = check_coeffs(coeffs)
    pi_l = check_policy(pi_l, mdp.num_states, mdp.num_actions)
    q_l = np.asarray(q_l, dtype=np.float64)
    if q_l.shape != (mdp.num_pairs,):
        raise ValueError(f"q must have length {mdp.num_pairs}")
    q_next, _ = _filter_layer(PolicyShift(mdp, pi_l), mdp.r, h, q_l)
    return q_next, _improve(q_next, mdp.num_states, tau, hard_max)


def forward(model: BellNetModel, mdp: TabularMdp, q_bar, hard_max=False, depth=None):
    """Run BellNet on ``mdp`` from the initial estimate ``q_bar``.

    ``depth`` overrides the number of layers; only weight-shared models accept
    a value different from ``model.depth``. Returns ``(q_hat, pi_hat, trace)``.
    """
    depth = model.depth if depth is None else int(depth)
    if depth != model.depth and not model.weight_shared:
        raise ValueError("only weight-shared models can run at a different depth")
    if depth < 1:
        raise ValueError("depth must be at least 1")
    q = np.array(q_bar, dtype=np.float64)
    if q.shape != (mdp.num_pairs,):
        raise ValueError(f"q_bar must have length {mdp.num_pairs}")
    S, r, tau = mdp.num_states, mdp.r, model.temperature
    pi = _improve(q, S, tau, hard_max)
    trace = ForwardTrace([q], [pi], [])
    for l in range(depth):
        q, partials = _filter_layer(PolicyShift(mdp, pi), r, model.coeffs(l), q)
        if not np.all(np.isfinite(q)):
            raise NumericError(f"non-finite value function after layer {l}", l)
        pi = _improve(q, S, tau, hard_max)
        trace.q.append(q)
        trace.pi.append(pi)
        trace.partials.append(partials)
    return q, pi, trace


def extract_deterministic_policy(pi_hat) -> np.ndarray:
    """One-hot argmax per row, ties to the lowest index."""
    return greedy_policy(pi_hat)
