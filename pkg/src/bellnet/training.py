"""Bellman-error training of BellNet filter taps.

At iteration ``n`` the current taps produce ``(q_n, pi_n) = forward(q_bar)``;
the frozen target ``r + gamma P_{pi_n} q_n`` is regressed by a fresh forward
pass, and gradients are obtained by hand-written reverse-mode accumulation
through every filter stage and softmax of the unrolled network.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .graph_filter import classical_coeffs
from .mdp import NumericError, TabularMdp, bellman_backup, policy_transition, unvec, vec
from .model import DEFAULT_TEMPERATURE, BellNetModel, forward

log = logging.getLogger(__name__)

DIVERGENCE_LOSS = 1e12
OPTIMIZERS = ("gd", "momentum", "adam")
INITS = ("classical", "classical_noise", "random")


class TrainingDiverged(NumericError):
    def __init__(self, message, history, model, iteration):
        super().__init__(message)
        self.history = history
        self.model = model
        self.iteration = iteration


@dataclass
class TrainConfig:
    iterations: int = 2000
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    momentum: float = 0.9
    # {"kind": "auto" | "zero" | "uniform" | "gaussian", ...}; "auto" is
    # uniform between 0 and (largest nonzero reward) / (1 - gamma)
    q_bar: dict = field(default_factory=lambda: {"kind": "auto"})
    resample_each_step: bool = True
    seed: int = 0
    gamma: float | None = None
    init: str = "classical_noise"
    init_noise: float = 0.01
    inner_steps: int = 1

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}")
        if self.inner_steps < 1:
            raise ValueError("inner_steps must be >= 1")
        if isinstance(self.q_bar, str):
            self.q_bar = {"kind": self.q_bar}
        if self.q_bar.get("kind") not in ("auto", "zero", "uniform", "gaussian"):
            raise ValueError(f"unknown q_bar sampling {self.q_bar!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train fields: {sorted(unknown)}")
        return cls(**d)

    def discount(self, mdp: TabularMdp) -> float:
        return mdp.discount if self.gamma is None else float(self.gamma)


@dataclass
class GradientBundle:
    loss: float
    layer_grads: np.ndarray  # (depth, K + 2), one row per layer
    params_grad: np.ndarray  # shaped like model.params; tied layers are summed


# ---------------------------------------------------------------- sampling / init


def _reference_reward(R) -> float:
    # largest nonzero reward; an absorbing zero-reward goal would otherwise
    # collapse the sampling range to a point
    nz = R[R != 0]
    return float(nz.max()) if nz.size else 0.0


def sample_q_bar(mdp: TabularMdp, spec: dict, rng, gamma=None) -> np.ndarray:
    n = mdp.num_pairs
    kind = spec.get("kind", "auto")
    if kind == "zero":
        return np.zeros(n)
    if kind == "gaussian":
        return rng.normal(spec.get("mean", 0.0), spec.get("std", 1.0), size=n)
    if kind == "uniform":
        lo, hi = spec["low"], spec["high"]
    elif kind == "auto":
        g = mdp.discount if gamma is None else gamma
        lo, hi = sorted((0.0, _reference_reward(mdp.reward) / (1.0 - g)))
    else:
        raise ValueError(f"unknown q_bar sampling {kind!r}")
    return rng.uniform(lo, hi, size=n)


def init_model(depth, filter_order, gamma, config: TrainConfig, temperature=DEFAULT_TEMPERATURE, weight_shared=False):
    rng = np.random.default_rng([config.seed, 0])
    rows = 1 if weight_shared else depth
    shape = (rows, filter_order + 2)
    if config.init == "random":
        params = rng.uniform(0.0, 1.0, size=shape)
    else:
        params = np.tile(classical_coeffs(gamma, filter_order), (rows, 1))
        if config.init == "classical_noise":
            params = params + config.init_noise * rng.standard_normal(shape)
    return BellNetModel(params, filter_order, depth, temperature, weight_shared)


# ---------------------------------------------------------------- loss and gradient


def bellman_target(mdp: TabularMdp, q_n, pi_n, gamma=None) -> np.ndarray:
    """``r + gamma P_{pi_n} q_n``; callers treat it as a constant."""
    g = mdp.discount if gamma is None else gamma
    return bellman_backup(q_n, policy_transition(mdp, pi_n), mdp.r, g)


def _softmax_backward(pi, grad_pi, tau):
    inner = np.sum(pi * grad_pi, axis=1, keepdims=True)
    return pi * (grad_pi - inner) / tau


def backward(model: BellNetModel, mdp: TabularMdp, trace, grad_q_hat) -> np.ndarray:
    """Gradient of a scalar loss w.r.t. every layer's taps.

    ``grad_q_hat`` is ``dloss/dq_hat``. The pass walks the layers in reverse;
    inside a layer it reverses the nested recursion ``u_j = h_j r + P u_{j+1}``,
    and between layers it pushes the policy gradient through the softmax.
    """
    S, r, tau = mdp.num_states, mdp.r, model.temperature
    P = mdp.transition
    depth = len(trace.partials)
    K = model.filter_order
    grads = np.zeros((depth, K + 2))
    g = np.asarray(grad_q_hat, dtype=np.float64)
    for l in range(depth - 1, -1, -1):
        h = model.coeffs(l)
        pi = trace.pi[l]
        u = trace.partials[l]
        grad_pi = np.zeros_like(pi)
        for j in range(K + 1):
            grads[l, j] = g @ r
            # u_j = h_j r + P_pi u_{j+1}: P_pi[i, (s',a')] = P[i, s'] pi[s', a']
            Pg = P.T @ g
            grad_pi += Pg[:, None] * unvec(u[j + 1], S)
            g = vec(pi * Pg[:, None])
        grads[l, K + 1] = g @ trace.q[l]
        if l == 0:
            break
        g = h[K + 1] * g + vec(_softmax_backward(pi, grad_pi, tau))
    return grads


def loss_and_gradient(model: BellNetModel, mdp: TabularMdp, q_bar, target, trace=None) -> GradientBundle:
    """Squared error ``||target - q_hat||^2`` and its gradient w.r.t. the taps.

    ``trace`` may carry a forward pass already evaluated at ``model``'s current
    parameters (softmax mode); otherwise one is run here.
    """
    target = np.asarray(target, dtype=np.float64)
    if target.shape != (mdp.num_pairs,):
        raise ValueError(f"target must have length {mdp.num_pairs}")
    if trace is None:
        _, _, trace = forward(model, mdp, q_bar)
    resid = trace.q[-1] - target
    loss = float(resid @ resid)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss at output layer {len(trace.partials) - 1}", len(trace.partials) - 1)
    layer_grads = backward(model, mdp, trace, 2.0 * resid)
    params_grad = layer_grads.sum(axis=0, keepdims=True) if model.weight_shared else layer_grads
    return GradientBundle(loss, layer_grads, params_grad)


# ---------------------------------------------------------------- optimisers


class _Optimizer:
    def __init__(self, config: TrainConfig, shape):
        self.kind = config.optimizer
        self.lr = config.learning_rate
        self.beta = config.momentum
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, params, grad):
        if self.kind == "gd":
            return params - self.lr * grad
        if self.kind == "momentum":
            self.m = self.beta * self.m + grad
            return params - self.lr * self.m
        b1, b2, eps = 0.9, 0.999, 1e-8
        self.t += 1
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad * grad
        mhat = self.m / (1 - b1**self.t)
        vhat = self.v / (1 - b2**self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + eps)


def train(model: BellNetModel, mdp: TabularMdp, config: TrainConfig):
    """Fit the taps of a copy of ``model``; returns ``(trained_model, loss_history)``.

    Raises :class:`TrainingDiverged` (carrying the partial history) if the loss
    becomes non-finite or exceeds 1e12.
    """
    model = model.copy()
    gamma = config.discount(mdp)
    rng = np.random.default_rng([config.seed, 1])
    opt = _Optimizer(config, model.params.shape)
    history = []
    q_bar = sample_q_bar(mdp, config.q_bar, rng, gamma)
    for n in range(config.iterations):
        if config.resample_each_step and n > 0:
            q_bar = sample_q_bar(mdp, config.q_bar, rng, gamma)
        try:
            q_n, pi_n, trace = forward(model, mdp, q_bar)
            target = bellman_target(mdp, q_n, pi_n, gamma)
            for k in range(config.inner_steps):
                # the first inner step is evaluated exactly at H_[n], so reuse its pass
                bundle = loss_and_gradient(model, mdp, q_bar, target, trace if k == 0 else None)
                if k == 0:
                    history.append(bundle.loss)
                if not bundle.loss <= DIVERGENCE_LOSS:
                    raise NumericError(f"loss {bundle.loss!r} exceeds divergence threshold")
                model.params = opt.step(model.params, bundle.params_grad)
        except NumericError as exc:
            log.warning("training diverged at iteration %d: %s", n, exc)
            raise TrainingDiverged(str(exc), history, model, n) from exc
    return model, history


def write_loss_history(path, history) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "loss"])
        for i, v in enumerate(history):
            w.writerow([i, repr(float(v))])
