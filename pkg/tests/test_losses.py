"""Hand-computed loss values and finite-difference gradient checks for the
four losses (critic InfoNCE, entropy TD, actor, FAVI)."""

import numpy as np
import pytest

from cirl import crl, infer, nnkit
from cirl.crl import (
    ContinuousCodec, ContrastiveCritic, MaxEntConfig, TabularCodec, actor_loss,
    critic_init, critic_loss, entropy_net_init, entropy_td_loss, policy_init,
)
from cirl.infer import favi_loss, favi_loss_fulltraj, posterior_init
from cirl.nnkit import DenseNet, grad_check, net_init


def small_cfg(**kw):
    defaults = dict(alpha=0.5, gamma=0.8, hidden=(8, 8), repr_dim=4,
                    c_reg=0.01, f_max=20.0)
    defaults.update(kw)
    return MaxEntConfig(**defaults)


def tab_codec():
    return TabularCodec(n_states=4, n_actions=3)


def cont_codec():
    return ContinuousCodec(state_dim=2, action_dim=2, action_max=0.1)


def fixed_energy_critic(energies):
    """Critic whose energy matrix is exactly `energies` (via bias-only nets
    producing canonical basis vectors scaled by the desired values)."""
    # Simpler: a 1-d representation where phi_i and psi_j are scalars.
    raise NotImplementedError


class TestCriticLossValues:
    def _loss_for_energy(self, energy, c_reg=0.0):
        """Build encoders with identity maps so the energy matrix is `energy`."""
        B, d = energy.shape[0], energy.shape[0]
        # phi_i = e_i (rows of identity); psi_j = energy[:, j] so phi_i.psi_j = E_ij.
        sa_net = DenseNet((B, d), "relu",
                          np.concatenate([np.eye(B).ravel(), np.zeros(d)]))
        g_net = DenseNet((B, d), "relu",
                         np.concatenate([energy.ravel(), np.zeros(d)]))
        critic = ContrastiveCritic(sa_net, g_net)
        loss, _ = critic_loss(critic, np.eye(B), np.eye(B), c_reg)
        return loss

    def test_single_element_batch_zero_loss(self):
        assert self._loss_for_energy(np.array([[3.7]])) == pytest.approx(0.0)

    def test_equal_energies_gives_log2(self):
        loss = self._loss_for_energy(np.full((2, 2), 1.3))
        assert loss == pytest.approx(np.log(2.0), abs=1e-12)

    def test_diagonal_one_offdiag_zero(self):
        loss = self._loss_for_energy(np.eye(2))
        assert loss == pytest.approx(np.log(1.0 + np.exp(-1.0)), abs=1e-12)

    def test_regularizer_adds_squared_lse(self):
        e = np.zeros((2, 2))
        base = self._loss_for_energy(e)
        reg = self._loss_for_energy(e, c_reg=0.5)
        assert reg == pytest.approx(base + 0.5 * np.log(2.0) ** 2, abs=1e-12)

    def test_empty_batch_rejected(self):
        rng = np.random.default_rng(0)
        critic = critic_init(tab_codec(), small_cfg(), rng)
        with pytest.raises(Exception):
            critic_loss(critic, np.zeros((0, 7)), np.zeros((0, 4)), 0.0)


class TestEntropyTdValues:
    def test_gamma_zero_target_is_zero(self):
        rng = np.random.default_rng(1)
        codec = tab_codec()
        cfg = small_cfg()
        ent = entropy_net_init(codec, cfg, rng)
        policy = policy_init(codec, cfg, rng)
        batch = {"states": np.array([0, 1]), "actions": np.array([0, 2]),
                 "next_states": np.array([1, 3]), "goals": np.array([2, 0])}
        loss, _ = entropy_td_loss(ent, policy, batch, alpha=1.0, gamma=0.0, codec=codec)
        sag = np.concatenate([codec.encode_states(batch["states"]),
                              codec.encode_actions(batch["actions"]),
                              codec.encode_goals(batch["goals"])], axis=1)
        h = nnkit.forward(ent.net, sag)[:, 0]
        assert loss == pytest.approx(float((h**2).mean()), abs=1e-12)

    def test_fixed_point_residual_zero(self):
        # Uniform policy, H net constant at c*gamma/(1-gamma) with c = alpha ln K:
        # both the target and the prediction equal the geometric fixed point.
        codec = tab_codec()
        cfg = small_cfg()
        rng = np.random.default_rng(2)
        alpha, gamma = 0.7, 0.6
        K = codec.n_actions
        h_star = alpha * np.log(K) * gamma / (1.0 - gamma)
        # Zero-weight net with output bias = h_star is constant; uniform policy
        # comes from a zero-weight policy net.
        ent = entropy_net_init(codec, cfg, rng)
        ent.net.params[:] = 0.0
        ent.net.params[-1] = h_star
        ent.target_params = ent.net.params.copy()
        policy = policy_init(codec, cfg, rng)
        policy.net.params[:] = 0.0
        batch = {"states": np.array([0, 1, 2]), "actions": np.array([0, 1, 2]),
                 "next_states": np.array([1, 2, 3]), "goals": np.array([0, 0, 0])}
        loss, _ = entropy_td_loss(ent, policy, batch, alpha, gamma, codec)
        assert loss == pytest.approx(0.0, abs=1e-20)

    def test_already_at_target_gives_zero_loss(self):
        codec = tab_codec()
        cfg = small_cfg()
        rng = np.random.default_rng(3)
        ent = entropy_net_init(codec, cfg, rng)
        policy = policy_init(codec, cfg, rng)
        policy.net.params[:] = 0.0
        ent.net.params[:] = 0.0   # H == 0 everywhere
        ent.target_params = ent.net.params.copy()
        batch = {"states": np.array([0]), "actions": np.array([1]),
                 "next_states": np.array([2]), "goals": np.array([3])}
        # target = gamma * (alpha ln K + 0) with alpha = 0 -> 0 = H
        loss, _ = entropy_td_loss(ent, policy, batch, alpha=0.0, gamma=0.9, codec=codec)
        assert loss == pytest.approx(0.0, abs=1e-20)


class TestActorLossValues:
    def test_zero_critic_alpha_zero_loss_minus_one(self):
        codec = tab_codec()
        cfg = small_cfg(alpha=0.0, include_future_entropy=False)
        rng = np.random.default_rng(4)
        critic = critic_init(codec, cfg, rng)
        critic.sa_encoder.params[:] = 0.0     # f == 0 -> exp(f) = 1
        policy = policy_init(codec, cfg, rng)
        ent = entropy_net_init(codec, cfg, rng)
        loss, _ = actor_loss(policy, critic, ent, np.array([0, 1]), np.array([2, 3]),
                             cfg, codec)
        assert loss == pytest.approx(-1.0, abs=1e-12)

    def test_large_constant_f_clipped(self):
        codec = tab_codec()
        cfg = small_cfg(alpha=0.0, include_future_entropy=False, f_max=3.0)
        rng = np.random.default_rng(5)
        critic = critic_init(codec, cfg, rng)
        # Make f huge and constant: zero weights, biases so phi.psi = 50.
        critic.sa_encoder.params[:] = 0.0
        critic.goal_encoder.params[:] = 0.0
        w, b, _ = critic.sa_encoder.layout[-1]
        critic.sa_encoder.params[b] = 1.0
        w, b, _ = critic.goal_encoder.layout[-1]
        critic.goal_encoder.params[b] = 50.0 / cfg.repr_dim
        policy = policy_init(codec, cfg, rng)
        ent = entropy_net_init(codec, cfg, rng)
        loss, _ = actor_loss(policy, critic, ent, np.array([0]), np.array([1]),
                             cfg, codec)
        assert loss == pytest.approx(-np.exp(3.0), abs=1e-9)

    def test_uniform_tabular_policy_entropy_bonus(self):
        # f == 0, alpha = 1, uniform policy over K actions: J = 1 + ln K.
        codec = tab_codec()
        cfg = small_cfg(alpha=1.0, include_future_entropy=False)
        rng = np.random.default_rng(6)
        critic = critic_init(codec, cfg, rng)
        critic.sa_encoder.params[:] = 0.0
        policy = policy_init(codec, cfg, rng)
        policy.net.params[:] = 0.0
        ent = entropy_net_init(codec, cfg, rng)
        loss, _ = actor_loss(policy, critic, ent, np.array([0]), np.array([0]),
                             cfg, codec)
        assert loss == pytest.approx(-(1.0 + np.log(codec.n_actions)), abs=1e-12)


class TestFaviLossValues:
    def test_uniform_head_nll_is_log_k(self):
        codec = tab_codec()
        post = posterior_init(codec, "mean_field", np.random.default_rng(7))
        post.head.params[:] = 0.0
        sa = np.concatenate([codec.encode_states([0, 1]),
                             codec.encode_actions([0, 1])], axis=1)
        loss, _ = favi_loss(post, sa, np.array([3, 1]))
        assert loss == pytest.approx(np.log(codec.n_states), abs=1e-12)

    def test_onehot_head_nll_zero(self):
        codec = tab_codec()
        post = posterior_init(codec, "mean_field", np.random.default_rng(8))
        post.head.params[:] = 0.0
        w, b, _ = post.head.layout[-1]
        bias = np.zeros(codec.n_states)
        bias[2] = 200.0      # overwhelming logit on goal 2
        post.head.params[b] = bias
        sa = np.concatenate([codec.encode_states([0]), codec.encode_actions([0])], axis=1)
        loss, _ = favi_loss(post, sa, np.array([2]))
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_gaussian_unit_density_nll_zero(self):
        # mu = g and sigma = (2 pi)^{-1/2} per dim makes the density 1.
        codec = cont_codec()
        post = posterior_init(codec, "mean_field", np.random.default_rng(9))
        post.head.params[:] = 0.0
        g = np.array([[0.3, -0.4]])
        w, b, _ = post.head.layout[-1]
        bias = np.concatenate([g[0], np.full(2, -np.log(2.0 * np.pi))])
        post.head.params[b] = bias
        sa = np.zeros((1, 4))
        loss, _ = favi_loss(post, sa, g)
        assert loss == pytest.approx(0.0, abs=1e-12)


# ---------------------------------------------------------------------------
# Finite-difference checks (the loss-specific oracle)


def check_loss(loss_fn, params, tol=1e-4):
    report = grad_check(loss_fn, params, tolerance=tol)
    assert report["pass"], report


class TestGradients:
    def test_critic_grad_tabular(self):
        rng = np.random.default_rng(10)
        codec = tab_codec()
        cfg = small_cfg()
        critic = critic_init(codec, cfg, rng)
        B = 4
        sa = np.concatenate([codec.encode_states(rng.integers(0, 4, B)),
                             codec.encode_actions(rng.integers(0, 3, B))], axis=1)
        goals = codec.encode_goals(rng.integers(0, 4, B))
        n_sa = critic.sa_encoder.params.size

        def loss_fn(p):
            c = ContrastiveCritic(critic.sa_encoder.with_params(p[:n_sa]),
                                  critic.goal_encoder.with_params(p[n_sa:]))
            loss, grads = critic_loss(c, sa, goals, cfg.c_reg)
            return loss, np.concatenate([grads["sa"], grads["goal"]])

        check_loss(loss_fn, np.concatenate([critic.sa_encoder.params,
                                            critic.goal_encoder.params]))

    def test_entropy_grad_tabular(self):
        rng = np.random.default_rng(11)
        codec = tab_codec()
        cfg = small_cfg()
        ent = entropy_net_init(codec, cfg, rng)
        policy = policy_init(codec, cfg, rng)
        batch = {"states": rng.integers(0, 4, 4), "actions": rng.integers(0, 3, 4),
                 "next_states": rng.integers(0, 4, 4), "goals": rng.integers(0, 4, 4)}

        def loss_fn(p):
            e = crl.EntropyValueNet(ent.net.with_params(p), ent.target_params)
            return entropy_td_loss(e, policy, batch, cfg.alpha, cfg.gamma, codec)

        check_loss(loss_fn, ent.net.params)

    def test_entropy_grad_continuous(self):
        rng = np.random.default_rng(12)
        codec = cont_codec()
        cfg = small_cfg()
        ent = entropy_net_init(codec, cfg, rng)
        policy = policy_init(codec, cfg, rng)
        batch = {"states": rng.normal(size=(4, 2)), "actions": rng.normal(size=(4, 2)),
                 "next_states": rng.normal(size=(4, 2)), "goals": rng.normal(size=(4, 2))}
        noise = rng.standard_normal((4, 2))

        def loss_fn(p):
            e = crl.EntropyValueNet(ent.net.with_params(p), ent.target_params)
            return entropy_td_loss(e, policy, batch, cfg.alpha, cfg.gamma, codec, noise)

        check_loss(loss_fn, ent.net.params)

    @pytest.mark.parametrize("log_ratio,future_h", [(False, True), (True, False),
                                                    (False, False)])
    def test_actor_grad_tabular(self, log_ratio, future_h):
        rng = np.random.default_rng(13)
        codec = tab_codec()
        cfg = small_cfg(actor_uses_log_ratio=log_ratio, include_future_entropy=future_h)
        critic = critic_init(codec, cfg, rng)
        policy = policy_init(codec, cfg, rng)
        ent = entropy_net_init(codec, cfg, rng)
        states, goals = rng.integers(0, 4, 4), rng.integers(0, 4, 4)

        def loss_fn(p):
            pol = crl.PolicyNet(policy.net.with_params(p), "categorical",
                                n_actions=policy.n_actions)
            return actor_loss(pol, critic, ent, states, goals, cfg, codec)

        check_loss(loss_fn, policy.net.params)

    @pytest.mark.parametrize("log_ratio,future_h", [(False, True), (True, False)])
    def test_actor_grad_continuous(self, log_ratio, future_h):
        rng = np.random.default_rng(14)
        codec = cont_codec()
        cfg = small_cfg(actor_uses_log_ratio=log_ratio, include_future_entropy=future_h)
        critic = critic_init(codec, cfg, rng)
        policy = policy_init(codec, cfg, rng)
        ent = entropy_net_init(codec, cfg, rng)
        states, goals = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
        noise = rng.standard_normal((4, 2))

        def loss_fn(p):
            pol = crl.PolicyNet(policy.net.with_params(p), "gaussian",
                                action_dim=2, action_max=0.1)
            return actor_loss(pol, critic, ent, states, goals, cfg, codec, noise)

        check_loss(loss_fn, policy.net.params)

    def test_favi_grad_tabular(self):
        rng = np.random.default_rng(15)
        codec = tab_codec()
        post = posterior_init(codec, "mean_field", rng, hidden=(8, 8))
        sa = np.concatenate([codec.encode_states(rng.integers(0, 4, 4)),
                             codec.encode_actions(rng.integers(0, 3, 4))], axis=1)
        goals = rng.integers(0, 4, 4)

        def loss_fn(p):
            q = infer.GoalPosterior(post.head.with_params(p), "mean_field",
                                    "categorical", n_goals=4)
            return favi_loss(q, sa, goals)

        check_loss(loss_fn, post.head.params)

    def test_favi_grad_gaussian(self):
        rng = np.random.default_rng(16)
        codec = cont_codec()
        post = posterior_init(codec, "mean_field", rng, hidden=(8, 8))
        sa = rng.normal(size=(4, 4))
        goals = rng.normal(size=(4, 2))

        def loss_fn(p):
            q = infer.GoalPosterior(post.head.with_params(p), "mean_field",
                                    "gaussian", goal_dim=2)
            return favi_loss(q, sa, goals)

        check_loss(loss_fn, post.head.params)

    def test_favi_grad_fulltraj(self):
        rng = np.random.default_rng(17)
        codec = tab_codec()
        post = posterior_init(codec, "full_traj", rng, hidden=(8, 8), feature_dim=6)
        inputs = np.stack([
            np.concatenate([codec.encode_states(rng.integers(0, 4, 3)),
                            codec.encode_actions(rng.integers(0, 3, 3))], axis=1)
            for _ in range(4)])
        goals = rng.integers(0, 4, 4)
        n_head = post.head.params.size

        def loss_fn(p):
            q = infer.GoalPosterior(post.head.with_params(p[:n_head]), "full_traj",
                                    "categorical", n_goals=4,
                                    feature_net=post.feature_net.with_params(p[n_head:]))
            loss, hg, fg = favi_loss_fulltraj(q, inputs, goals)
            return loss, np.concatenate([hg, fg])

        check_loss(loss_fn, np.concatenate([post.head.params,
                                            post.feature_net.params]))
