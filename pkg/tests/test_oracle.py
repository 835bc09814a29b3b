import numpy as np
import pytest

from cirl import oracle
from cirl.envs import TabularMDP, Trajectory, build_counterexample_mdp, build_grid_rooms
from cirl.oracle import (
    exact_future_entropy, exact_occupancy, exact_posterior, log_partition,
    log_partition_all, soft_value_iteration,
)

from enumeration import (
    enum_log_partition, enum_policy_conditionals, enum_posterior,
    enum_state_values, enum_trajectory_model, induced_trajectory_probs,
    random_mdp,
)


def single_state_mdp(n_actions=1, gamma=0.5, horizon=4):
    P = np.ones((1, n_actions, 1))
    return TabularMDP(P, np.array([1.0]), gamma, horizon)


def deterministic_chain(n=3, horizon=3, gamma=0.5):
    """States 0..n-1; action 0 stays, action 1 advances; last state absorbs."""
    P = np.zeros((n, 2, n))
    for s in range(n):
        P[s, 0, s] = 1.0
        P[s, 1, min(s + 1, n - 1)] = 1.0
    rho = np.zeros(n)
    rho[0] = 1.0
    return TabularMDP(P, rho, gamma, horizon)


class TestSoftValueIteration:
    def test_trivial_single_state(self):
        mdp = single_state_mdp()
        sol = soft_value_iteration(mdp, goal=0, alpha=1.0)
        # r = (1-gamma) each step; V[t] accumulates the remaining sum.
        r = 1.0 - mdp.discount
        expected_v = r * np.arange(mdp.horizon + 1, 0, -1)
        assert np.allclose(sol.soft_v[:, 0], expected_v)
        assert np.allclose(sol.policy, 1.0)

    def test_uniform_policy_when_rewards_equal(self):
        mdp = single_state_mdp(n_actions=2)
        sol = soft_value_iteration(mdp, goal=0, alpha=0.7)
        assert np.allclose(sol.policy, 0.5)

    def test_rejects_nonpositive_alpha(self):
        with pytest.raises(ValueError):
            soft_value_iteration(single_state_mdp(), 0, alpha=0.0)

    def test_chain_trajectory_distribution_matches_enumeration(self):
        # Deterministic dynamics: the induced rollout distribution must equal
        # the exp(sum r / alpha)-weighted path model exactly.
        mdp = deterministic_chain()
        for alpha in (1.0, 0.3):
            sol = soft_value_iteration(mdp, goal=2, alpha=alpha)
            states, actions, p_model = enum_trajectory_model(mdp, goal=2, alpha=alpha)
            p_induced = induced_trajectory_probs(mdp, sol, states, actions)
            assert 0.5 * np.abs(p_model - p_induced).sum() < 1e-10

    def test_policy_conditionals_match_enumeration_stochastic(self):
        rng = np.random.default_rng(0)
        mdp = random_mdp(rng, n_states=3, n_actions=2, horizon=3, gamma=0.8)
        sol = soft_value_iteration(mdp, goal=1, alpha=1.0)
        cond = enum_policy_conditionals(mdp, goal=1)
        assert np.nanmax(np.abs(sol.policy - cond)) < 1e-10

    def test_state_values_match_enumeration(self):
        rng = np.random.default_rng(1)
        mdp = random_mdp(rng, n_states=3, n_actions=2, horizon=3, gamma=0.7)
        for alpha in (1.0, 0.25):
            sol = soft_value_iteration(mdp, goal=0, alpha=alpha)
            assert np.allclose(sol.soft_v[0], enum_state_values(mdp, 0, alpha),
                               atol=1e-10)

    def test_discounted_convention_backup(self):
        # Hand-check one backup step of the discounted form on the chain.
        mdp = deterministic_chain(horizon=1, gamma=0.5)
        sol = soft_value_iteration(mdp, goal=2, alpha=1.0, convention="discounted")
        r = mdp.reward_table()[:, :, 2]
        v1 = sol.soft_v[1]
        q0_expected = r + 0.5 * mdp.transition @ v1
        assert np.allclose(sol.soft_q[0], q0_expected)


class TestLogPartition:
    def test_zero_reward_counts_action_sequences(self):
        # Goal state unreachable from the start: every path has zero reward.
        P = np.zeros((2, 3, 2))
        P[0, :, 0] = 1.0
        P[1, :, 1] = 1.0
        mdp = TabularMDP(P, np.array([1.0, 0.0]), 0.5, horizon=4)
        assert log_partition(mdp, goal=1) == pytest.approx(5 * np.log(3), abs=1e-12)

    def test_single_action_constant_reward(self):
        mdp = single_state_mdp(n_actions=1, gamma=0.3, horizon=5)
        c = 1.0 - 0.3
        assert log_partition(mdp, goal=0) == pytest.approx(6 * c, abs=1e-12)

    def test_counterexample_matches_enumeration(self):
        mdp = build_counterexample_mdp(0.5, horizon=3)
        assert np.allclose(log_partition_all(mdp), enum_log_partition(mdp), atol=1e-12)

    def test_matches_soft_values(self):
        # Z = exp(V/alpha) under the likelihood convention.
        rng = np.random.default_rng(5)
        mdp = random_mdp(rng, 3, 2, horizon=3, gamma=0.6)
        for g in range(3):
            sol = soft_value_iteration(mdp, g, alpha=1.0)
            assert sol.log_partition == pytest.approx(log_partition(mdp, g), abs=1e-12)


class TestExactPosterior:
    def test_uniform_when_likelihood_cancels(self):
        # Identical dynamics rows for every goal: single state self-loop.
        mdp = single_state_mdp(n_actions=2)
        traj = Trajectory(np.zeros(5, dtype=int), np.zeros(5, dtype=int))
        post = exact_posterior(mdp, np.array([1.0]), traj)
        assert np.allclose(post, [1.0])

    def test_point_mass_prior(self):
        mdp = build_counterexample_mdp(0.5, horizon=3)
        traj = Trajectory(np.array([0, 0, 0, 0]), np.array([0, 0, 0, 0]))
        post = exact_posterior(mdp, np.array([0.0, 1.0]), traj)
        assert np.allclose(post, [0.0, 1.0])

    def test_counterexample_demo_favors_hard_goal(self):
        mdp = build_counterexample_mdp(0.5, horizon=3)
        demo = Trajectory(np.array([0, 1, 1, 1]), np.array([1, 0, 0, 0]))
        post = exact_posterior(mdp, np.array([0.5, 0.5]), demo)
        assert post[1] > post[0]
        assert np.allclose(post, enum_posterior(mdp, [0.5, 0.5], demo), atol=1e-12)

    def test_rejects_mismatched_trajectory(self):
        mdp = build_counterexample_mdp(0.5)
        bad = Trajectory(np.array([0, 7]), np.array([0, 0]))
        with pytest.raises(ValueError):
            exact_posterior(mdp, np.array([0.5, 0.5]), bad)

    def test_differs_from_visitation_counts_when_partition_varies(self):
        # Asymmetric rooms: goal difficulty varies, so the exact posterior is
        # not a renormalized visit histogram.
        mdp = build_grid_rooms(wall_col=3, horizon=12)
        rng = np.random.default_rng(0)
        sol = soft_value_iteration(mdp, goal=50, alpha=1.0)
        traj = oracle.sample_soft_trajectories(mdp, sol, 1, rng)[0]
        prior = np.full(mdp.n_goals, 1.0 / mdp.n_goals)
        post = exact_posterior(mdp, prior, traj)
        counts = np.bincount(traj.states, minlength=mdp.n_states).astype(float)
        counts /= counts.sum()
        assert not np.allclose(post, counts, atol=1e-3)


class TestExactOccupancy:
    @pytest.mark.parametrize("gamma,rho1", [(0.5, 2.0 / 3.0), (2.0 / 3.0, 0.5)])
    def test_counterexample_closed_form(self, gamma, rho1):
        mdp = build_counterexample_mdp(gamma)
        pi2 = np.array([[0.0, 1.0], [1.0, 0.0]])
        rho = exact_occupancy(mdp, pi2)
        assert rho[0] == pytest.approx((1 - gamma) / (1 - gamma / 2), abs=1e-12)
        assert rho[0] == pytest.approx(rho1, abs=1e-12)
        assert rho.sum() == pytest.approx(1.0, abs=1e-12)

    def test_stay_policy_concentrates_on_start(self):
        mdp = build_counterexample_mdp(0.77)
        pi1 = np.array([[1.0, 0.0], [1.0, 0.0]])
        rho = exact_occupancy(mdp, pi1)
        assert np.allclose(rho, [1.0, 0.0], atol=1e-12)

    def test_normalization_random_mdp(self):
        rng = np.random.default_rng(3)
        mdp = random_mdp(rng, 4, 3, horizon=4, gamma=0.9)
        policy = rng.dirichlet(np.ones(3), size=4)
        assert exact_occupancy(mdp, policy).sum() == pytest.approx(1.0, abs=1e-12)


class TestExactFutureEntropy:
    def test_deterministic_policy_zero_entropy(self):
        mdp = build_counterexample_mdp(0.5)
        pi = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert np.allclose(exact_future_entropy(mdp, pi, 0.5, alpha=1.0), 0.0)

    def test_uniform_policy_geometric_series(self):
        mdp = single_state_mdp(n_actions=3, gamma=0.9)
        pi = np.full((1, 3), 1.0 / 3.0)
        H = exact_future_entropy(mdp, pi, gamma=0.9, alpha=0.5)
        expected = 0.5 * np.log(3) * 0.9 / 0.1
        assert np.allclose(H, expected, rtol=1e-9)

    def test_gamma_zero(self):
        mdp = single_state_mdp(n_actions=2)
        pi = np.full((1, 2), 0.5)
        assert np.allclose(exact_future_entropy(mdp, pi, gamma=0.0, alpha=1.0), 0.0)
