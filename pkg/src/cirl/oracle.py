"""Exact tabular ground truth.

Finite-horizon soft value iteration, trajectory partition functions, exact
goal posteriors, discounted occupancy measures, and exact discounted future
policy entropy. These are the reference quantities the learned components are
tested against; everything here is deterministic dynamic programming over the
explicit transition tensor.

Two reward-sum conventions exist side by side. The default ("likelihood")
uses the undiscounted in-trajectory reward sum and an exponential-integral
backup, which makes the induced policy exactly the conditional action
distribution of the trajectory model weighted by exp(sum r / alpha), and ties
soft values to the partition function as Z = exp(V / alpha). The "discounted"
variant is the standard discounted expectation backup used when comparing
against TD-trained value heads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .envs import TabularMDP, Trajectory, rollout_tabular

CONVENTIONS = ("likelihood", "discounted")


@dataclass
class OracleSolution:
    """Soft DP tables for one goal: indices are [t, s] / [t, s, a], t = 0..T."""

    goal: int
    alpha: float
    convention: str
    soft_q: np.ndarray
    soft_v: np.ndarray
    policy: np.ndarray
    log_partition: float | None = None


def soft_value_iteration(
    mdp: TabularMDP, goal: int, alpha: float, convention: str = "likelihood"
) -> OracleSolution:
    """Backward soft DP over the episode horizon.

    V[T+1] = 0; V[t][s] = alpha * logsumexp_a(Q[t][s][a] / alpha); the policy
    is exp((Q - V) / alpha). The backup for Q is convention-dependent (see
    module docstring).
    """
    if alpha <= 0.0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}")
    T = mdp.horizon
    S, A = mdp.n_states, mdp.n_actions
    r = mdp.reward_table()[:, :, goal]                      # (S, A)
    q = np.zeros((T + 1, S, A))
    v = np.zeros((T + 1, S))
    v_next = np.zeros(S)
    for t in range(T, -1, -1):
        if convention == "likelihood":
            # alpha * log E_{s'}[exp(V(s')/alpha)], exact under stochastic dynamics
            w = alpha * logsumexp(v_next[None, None, :] / alpha, b=mdp.transition, axis=2)
            q[t] = r + w
        else:
            q[t] = r + mdp.discount * mdp.transition @ v_next
        v[t] = alpha * logsumexp(q[t] / alpha, axis=1)
        v_next = v[t]
    policy = np.exp((q - v[:, :, None]) / alpha)
    policy /= policy.sum(axis=2, keepdims=True)
    log_z = None
    if convention == "likelihood":
        log_z = float(logsumexp(v[0] / alpha, b=mdp.initial_dist))
    return OracleSolution(goal=int(goal), alpha=float(alpha), convention=convention,
                          soft_q=q, soft_v=v, policy=policy, log_partition=log_z)


def log_partition_all(mdp: TabularMDP, alpha: float = 1.0) -> np.ndarray:
    """log Z_g for every goal, by backward DP in log space.

    Z_{T+1}(s) = 1; Z_t(s) = sum_a exp(r_g(s,a)/alpha) *
    sum_{s'} P[s,a,s'] Z_{t+1}(s'); returns log sum_s0 rho0(s0) Z_0(s0).
    """
    if alpha <= 0.0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    T = mdp.horizon
    r = mdp.reward_table() / alpha                          # (S, A, G)
    log_z = np.zeros((mdp.n_goals, mdp.n_states))           # log Z_t(s) per goal
    for _ in range(T + 1):
        # log sum_{s'} P[s,a,s'] Z(s') for each goal: (G, S, A)
        trans = logsumexp(log_z[:, None, None, :], b=mdp.transition[None, :, :, :], axis=3)
        log_z = logsumexp(r.transpose(2, 0, 1) + trans, axis=2)
    return logsumexp(log_z, b=mdp.initial_dist[None, :], axis=1)


def log_partition(mdp: TabularMDP, goal: int, alpha: float = 1.0) -> float:
    return float(log_partition_all(mdp, alpha)[int(goal)])


def exact_posterior(
    mdp: TabularMDP,
    prior: np.ndarray,
    trajectory: Trajectory,
    alpha: float = 1.0,
    log_partitions: np.ndarray | None = None,
) -> np.ndarray:
    """Posterior over goals: softmax of log prior + sum_t r_g(s_t,a_t)/alpha - log Z_g.

    Precomputed log_partitions (from log_partition_all at the same alpha) can
    be passed to amortize repeated calls on one MDP.
    """
    states = np.asarray(trajectory.states)
    actions = np.asarray(trajectory.actions)
    if states.ndim != 1 or np.any(states < 0) or np.any(states >= mdp.n_states):
        raise ValueError("trajectory states do not index this MDP")
    if np.any(actions < 0) or np.any(actions >= mdp.n_actions):
        raise ValueError("trajectory actions do not index this MDP")
    prior = np.asarray(prior, dtype=np.float64)
    if prior.shape != (mdp.n_goals,) or abs(prior.sum() - 1.0) > 1e-9:
        raise ValueError("prior must be a distribution over goals")
    if log_partitions is None:
        log_partitions = log_partition_all(mdp, alpha)
    reward_sums = mdp.reward_table()[states, actions, :].sum(axis=0) / alpha   # (G,)
    with np.errstate(divide="ignore"):
        logits = np.log(prior) + reward_sums - log_partitions
    logits -= logsumexp(logits)
    return np.exp(logits)


def exact_occupancy(mdp: TabularMDP, policy: np.ndarray) -> np.ndarray:
    """Discounted state occupancy (1-gamma) sum_t gamma^t P(s_t = s).

    Stationary policy (S, A); solved exactly via the resolvent linear system.
    """
    policy = np.asarray(policy, dtype=np.float64)
    if policy.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"policy must be (S, A) = {(mdp.n_states, mdp.n_actions)}")
    M = np.einsum("sa,sap->sp", policy, mdp.transition)
    rho = np.linalg.solve(np.eye(mdp.n_states) - mdp.discount * M.T, mdp.initial_dist)
    return (1.0 - mdp.discount) * rho


def discounted_next_state_occupancy(mdp: TabularMDP, policy: np.ndarray) -> np.ndarray:
    """Strictly-future discounted state distribution from each (s, a).

    p[s, a, s_f] = (1-gamma) sum_{k>=1} gamma^{k-1} P(s_k = s_f | s_0=s, a_0=a),
    the distribution the future-state relabeling sampler converges to.
    """
    policy = np.asarray(policy, dtype=np.float64)
    M = np.einsum("sa,sap->sp", policy, mdp.transition)
    resolvent = np.linalg.inv(np.eye(mdp.n_states) - mdp.discount * M)
    return (1.0 - mdp.discount) * mdp.transition @ resolvent


def exact_future_entropy(
    mdp: TabularMDP, policy: np.ndarray, gamma: float, alpha: float,
    tol: float = 1e-12, max_iter: int = 100_000
) -> np.ndarray:
    """H(s,a) = gamma * E_{s'}[ent(s') + E_{a'}[H(s',a')]] by fixed-point iteration.

    ent(s) = -alpha * sum_a pi(a|s) log pi(a|s) is the per-state action
    entropy; the iteration contracts at rate gamma.
    """
    policy = np.asarray(policy, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(policy > 0.0, policy * np.log(policy), 0.0)
    ent = -alpha * plogp.sum(axis=1)                        # (S,)
    b = gamma * mdp.transition @ ent                        # (S, A)
    H = np.zeros_like(b)
    for _ in range(max_iter):
        H_sa = (policy * H).sum(axis=1)                     # (S,)
        H_new = b + gamma * mdp.transition @ H_sa
        if np.max(np.abs(H_new - H)) < tol:
            return H_new
        H = H_new
    return H


def soft_policy_fn(solution: OracleSolution):
    """Adapt an oracle solution into a rollout policy callable."""
    T = solution.policy.shape[0] - 1

    def policy_fn(t: int, s: int, rng: np.random.Generator) -> int:
        p = solution.policy[min(t, T), s]
        return int(rng.choice(len(p), p=p))

    return policy_fn


def sample_soft_trajectories(
    mdp: TabularMDP,
    solution: OracleSolution,
    n: int,
    rng: np.random.Generator,
) -> list[Trajectory]:
    fn = soft_policy_fn(solution)
    return [rollout_tabular(mdp, fn, solution.goal, rng) for _ in range(n)]
