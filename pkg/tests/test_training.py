import numpy as np
import pytest

from bellnet.mdp import policy_transition, random_mdp
from bellnet.model import BellNetModel, forward
from bellnet.solvers import optimal_q
from bellnet.training import (
    TrainConfig,
    TrainingDiverged,
    bellman_target,
    init_model,
    loss_and_gradient,
    sample_q_bar,
    train,
    write_loss_history,
)


def numeric_gradient(model, mdp, q_bar, target, step=1e-6):
    grad = np.zeros_like(model.params)
    for i in np.ndindex(model.params.shape):
        losses = []
        for sign in (1, -1):
            p = model.params.copy()
            p[i] += sign * step
            q_hat = forward(model.copy(params=p), mdp, q_bar)[0]
            losses.append(np.sum((target - q_hat) ** 2))
        grad[i] = (losses[0] - losses[1]) / (2 * step)
    return grad


def instance(seed, shared, S=3, A=2, depth=3, K=2):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(S, A, 0.9, rng)
    rows = 1 if shared else depth
    model = BellNetModel(0.9 ** np.arange(K + 2) + 0.1 * rng.normal(size=(rows, K + 2)), K, depth, 0.5, shared)
    q_bar = rng.normal(size=S * A)
    q_n, pi_n, _ = forward(model, mdp, q_bar)
    return mdp, model, q_bar, bellman_target(mdp, q_n, pi_n)


class TestGradient:
    @pytest.mark.parametrize("shared", [False, True])
    @pytest.mark.parametrize("seed", range(4))
    def test_finite_differences(self, seed, shared):
        mdp, model, q_bar, target = instance(seed, shared)
        g = loss_and_gradient(model, mdp, q_bar, target).params_grad
        fd = numeric_gradient(model, mdp, q_bar, target)
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7)

    def test_shared_is_sum_of_unshared(self):
        mdp, shared, q_bar, target = instance(11, True)
        untied = BellNetModel(np.tile(shared.params, (3, 1)), shared.filter_order, 3, shared.temperature)
        gs = loss_and_gradient(shared, mdp, q_bar, target)
        gu = loss_and_gradient(untied, mdp, q_bar, target)
        np.testing.assert_allclose(gs.params_grad[0], gu.params_grad.sum(axis=0), rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(gs.layer_grads, gu.layer_grads, rtol=1e-12, atol=1e-12)

    def test_zero_at_exact_fit(self):
        mdp, model, q_bar, _ = instance(2, False)
        q_hat = forward(model, mdp, q_bar)[0]
        bundle = loss_and_gradient(model, mdp, q_bar, q_hat)
        assert bundle.loss == 0.0
        np.testing.assert_array_equal(bundle.params_grad, 0.0)

    def test_target_is_constant(self):
        # the gradient only sees the target through the residual
        mdp, model, q_bar, target = instance(5, False)
        shifted = target + 1.0
        a = loss_and_gradient(model, mdp, q_bar, target)
        b = loss_and_gradient(model, mdp, q_bar, shifted)
        q_hat = forward(model, mdp, q_bar)[0]
        assert a.loss == pytest.approx(np.sum((target - q_hat) ** 2), rel=1e-14)
        diff = b.params_grad - a.params_grad
        ones = loss_and_gradient(model, mdp, q_bar, q_hat - 1.0).params_grad
        np.testing.assert_allclose(diff, -ones, rtol=1e-10, atol=1e-10)


class TestTarget:
    def test_discount_zero(self, small_mdp, rng):
        q = rng.normal(size=6)
        np.testing.assert_array_equal(bellman_target(small_mdp, q, np.full((3, 2), 0.5), 0.0), small_mdp.r)

    def test_fixed_point_at_optimum(self, rng):
        mdp = random_mdp(4, 2, 0.9, rng)
        opt = optimal_q(mdp)
        np.testing.assert_allclose(bellman_target(mdp, opt.q, opt.policy), opt.q, atol=1e-9)

    def test_formula(self, small_mdp, rng):
        q, pi = rng.normal(size=6), rng.dirichlet(np.ones(2), size=3)
        expected = small_mdp.r + 0.9 * policy_transition(small_mdp, pi) @ q
        np.testing.assert_allclose(bellman_target(small_mdp, q, pi), expected, atol=1e-14)


class TestTrain:
    def test_zero_learning_rate_keeps_params(self, small_mdp):
        cfg = TrainConfig(iterations=5, learning_rate=0.0)
        model = init_model(2, 1, 0.9, cfg)
        trained, hist = train(model, small_mdp, cfg)
        np.testing.assert_array_equal(trained.params, model.params)
        assert len(hist) == 5

    def test_deterministic(self, small_mdp):
        cfg = TrainConfig(iterations=30, seed=4)
        model = init_model(3, 2, 0.9, cfg, weight_shared=True)
        a, ha = train(model, small_mdp, cfg)
        b, hb = train(model, small_mdp, cfg)
        np.testing.assert_array_equal(a.params, b.params)
        assert ha == hb

    def test_does_not_mutate_input(self, small_mdp):
        cfg = TrainConfig(iterations=10)
        model = init_model(2, 1, 0.9, cfg)
        before = model.params.copy()
        train(model, small_mdp, cfg)
        np.testing.assert_array_equal(model.params, before)

    @pytest.mark.parametrize("optimizer,lr", [("gd", 1e-4), ("momentum", 1e-5), ("adam", 1e-2)])
    def test_loss_decreases(self, optimizer, lr):
        mdp = random_mdp(4, 2, 0.9, np.random.default_rng(0))
        cfg = TrainConfig(iterations=300, learning_rate=lr, optimizer=optimizer, init="random", seed=1)
        _, hist = train(init_model(3, 2, 0.9, cfg, weight_shared=True), mdp, cfg)
        hist = np.asarray(hist)
        assert hist[-50:].mean() < hist[:50].mean()

    def test_divergence_raises_with_history(self, small_mdp):
        cfg = TrainConfig(iterations=200, learning_rate=10.0, optimizer="gd", init="random")
        with pytest.raises(TrainingDiverged) as exc:
            train(init_model(4, 3, 0.9, cfg), small_mdp, cfg)
        assert exc.value.iteration == len(exc.value.history) or exc.value.iteration == len(exc.value.history) - 1

    def test_init_modes(self):
        classical = init_model(3, 2, 0.9, TrainConfig(init="classical"))
        np.testing.assert_array_equal(classical.params, np.tile(0.9 ** np.arange(4), (3, 1)))
        noisy = init_model(3, 2, 0.9, TrainConfig())
        dev = noisy.params - classical.params
        assert 0 < np.std(dev) < 0.05
        shared = init_model(3, 2, 0.9, TrainConfig(), weight_shared=True)
        assert shared.params.shape == (1, 4)


class TestConfig:
    def test_round_trip(self):
        cfg = TrainConfig(iterations=7, optimizer="momentum", q_bar={"kind": "uniform", "low": -1, "high": 2})
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg

    @pytest.mark.parametrize(
        "kwargs",
        [{"optimizer": "sgd"}, {"iterations": -1}, {"init": "xavier"}, {"q_bar": {"kind": "beta"}}, {"inner_steps": 0}],
    )
    def test_rejects(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)

    def test_unknown_field(self):
        with pytest.raises(ValueError):
            TrainConfig.from_dict({"epochs": 3})


class TestSampling:
    def test_auto_range_on_cliff(self, cliff):
        _, mdp, _ = cliff
        q = sample_q_bar(mdp, {"kind": "auto"}, np.random.default_rng(0))
        assert q.min() >= -100.0 - 1e-9 and q.max() <= 0.0
        assert q.min() < -50

    def test_kinds(self, small_mdp):
        rng = np.random.default_rng(0)
        np.testing.assert_array_equal(sample_q_bar(small_mdp, {"kind": "zero"}, rng), 0.0)
        u = sample_q_bar(small_mdp, {"kind": "uniform", "low": 2, "high": 3}, rng)
        assert np.all((u >= 2) & (u < 3))
        assert sample_q_bar(small_mdp, {"kind": "gaussian"}, rng).shape == (6,)


def test_loss_history_csv(tmp_path):
    write_loss_history(tmp_path / "h.csv", [3.0, 0.1])
    assert (tmp_path / "h.csv").read_text().splitlines() == ["iteration,loss", "0,3.0", "1,0.1"]
