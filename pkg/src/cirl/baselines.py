"""Comparison policies: the 1-NN demonstration follower and the analytic
forward-backward (FB) inference rule on tabular MDPs.

The FB rule summarizes a demonstration as a visitation vector over states
(either raw counts or discounted visitation) and treats it as a reward to
maximize. On the two-state counterexample this provably recovers the wrong
policy for small discounts, which the counterexample command sweeps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import EnvError, TabularMDP, is_tabular
from .oracle import exact_occupancy


@dataclass
class NnPolicy:
    """Replays the action of the nearest demonstration state.

    Tabular states are compared as one-hot vectors, so any non-demo state is
    equidistant from every demo state and the tie rule (earliest timestep)
    applies.
    """

    demo_states: np.ndarray
    demo_actions: np.ndarray
    tabular: bool
    n_states: int = 0

    def __post_init__(self):
        if len(self.demo_states) == 0:
            raise EnvError("NN policy needs a nonempty demonstration")

    def features(self) -> np.ndarray:
        if self.tabular:
            return np.eye(self.n_states)[np.asarray(self.demo_states, dtype=int)]
        return np.atleast_2d(self.demo_states)


def nn_policy_from_demo(demo, env) -> NnPolicy:
    if is_tabular(env):
        return NnPolicy(np.asarray(demo.states), np.asarray(demo.actions),
                        tabular=True, n_states=env.n_states)
    return NnPolicy(np.asarray(demo.states), np.asarray(demo.actions), tabular=False)


def nn_act(policy: NnPolicy, state):
    """Action of the closest demo state; ties go to the earliest timestep."""
    if policy.tabular:
        query = np.eye(policy.n_states)[int(state)]
    else:
        query = np.asarray(state, dtype=np.float64)
    dists = np.linalg.norm(policy.features() - query, axis=1)
    return policy.demo_actions[int(np.argmin(dists))]


# ---------------------------------------------------------------------------
# Analytic FB


def fb_infer_reward(
    demo_states,
    n_states: int,
    occupancy_weighted: bool = False,
    gamma: float | None = None,
    mdp: TabularMDP | None = None,
    demo_policy: np.ndarray | None = None,
) -> np.ndarray:
    """Visitation-based task vector z over states, used directly as a reward.

    Unweighted: z = sum_t one_hot(s_t) (raw counts). Occupancy-weighted:
    the discounted visitation; computed in closed form via the exact occupancy
    when (mdp, demo_policy) is given, otherwise empirically from the demo as
    (1-gamma) sum_t gamma^t one_hot(s_t).
    """
    if occupancy_weighted and mdp is not None and demo_policy is not None:
        return exact_occupancy(mdp, demo_policy)
    states = np.asarray(demo_states, dtype=int)
    if states.size == 0:
        return np.zeros(n_states)
    if not occupancy_weighted:
        return np.bincount(states, minlength=n_states).astype(np.float64)
    if gamma is None:
        raise EnvError("occupancy-weighted demo visitation needs gamma")
    z = np.zeros(n_states)
    np.add.at(z, states, (1.0 - gamma) * gamma ** np.arange(len(states), dtype=float))
    return z


def fb_imitate(mdp: TabularMDP, reward: np.ndarray,
               tol: float = 1e-14, max_iter: int = 200_000) -> np.ndarray:
    """Greedy policy for the per-state reward, by hard-max value iteration.

    Returns one action index per state; ties resolve to the lowest index.
    """
    reward = np.asarray(reward, dtype=np.float64)
    if reward.shape != (mdp.n_states,):
        raise EnvError(f"reward must have one entry per state, got {reward.shape}")
    V = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        Q = reward[:, None] + mdp.discount * mdp.transition @ V
        V_new = Q.max(axis=1)
        if np.max(np.abs(V_new - V)) < tol:
            break
        V = V_new
    Q = reward[:, None] + mdp.discount * mdp.transition @ V
    return Q.argmax(axis=1)


def fb_demo_vector(demo_states, mode: str, n_states: int | None = None):
    """Demo summary used to command a goal-conditioned policy.

    mode "last": the final demo state. mode "averaged": the mean one-hot
    (tabular, n_states required) or mean state vector (continuous).
    """
    states = np.asarray(demo_states)
    if len(states) == 0:
        raise EnvError("empty demonstration")
    if mode == "last":
        return states[-1]
    if mode != "averaged":
        raise EnvError(f"unknown demo summary mode {mode!r}")
    if states.ndim == 1:
        if n_states is None:
            raise EnvError("averaged tabular summary needs n_states")
        return np.bincount(states.astype(int), minlength=n_states) / len(states)
    return states.mean(axis=0)


COUNTEREXAMPLE_PI1 = np.array([[1.0, 0.0], [1.0, 0.0]])
COUNTEREXAMPLE_PI2 = np.array([[0.0, 1.0], [1.0, 0.0]])


def counterexample_row(gamma: float, horizon: int = 8) -> dict:
    """One row of the FB-inconsistency sweep at discount gamma.

    Runs the full pipeline: exact occupancy of the demo policy (the one that
    sometimes moves to the absorbing state), FB reward + greedy policy, and
    the exact goal posterior given a demo that reaches the absorbing state.
    """
    from .envs import Trajectory, build_counterexample_mdp
    from .oracle import exact_posterior

    mdp = build_counterexample_mdp(gamma, horizon=horizon)
    occupancy = exact_occupancy(mdp, COUNTEREXAMPLE_PI2)
    reward = fb_infer_reward(None, mdp.n_states, occupancy_weighted=True,
                             mdp=mdp, demo_policy=COUNTEREXAMPLE_PI2)
    greedy = fb_imitate(mdp, reward)
    fb_policy = "pi1" if greedy[0] == 0 else "pi2"
    # Archetypal demo from pi2: one step to the absorbing state, then stay.
    demo = Trajectory(
        states=np.concatenate([[0], np.ones(mdp.horizon, dtype=int)]),
        actions=np.concatenate([[1], np.zeros(mdp.horizon, dtype=int)]),
    )
    posterior = exact_posterior(mdp, np.array([0.5, 0.5]), demo)
    return {
        "gamma": gamma,
        "occupancy_s1": occupancy[0],
        "occupancy_s2": occupancy[1],
        "fb_reward_s1": reward[0],
        "fb_reward_s2": reward[1],
        "fb_policy": fb_policy,
        "posterior_s1": posterior[0],
        "posterior_s2": posterior[1],
        "posterior_argmax": "s1" if posterior[0] >= posterior[1] else "s2",
    }
