"""Amortized variational goal inference.

Per-step posterior heads trained with the forward-KL (FAVI) objective: each
(state, action) pair independently predicts the commanded goal, and a
trajectory-level posterior is the renormalized product of the per-step
factors (precision-weighted fusion for diagonal Gaussians, summed log-masses
for categoricals). A full-trajectory variant (per-step features, mean-pooled,
then an output head) exists for the ablation. Also hosts the closed-form
construction showing the exact tabular posterior is itself a mean-field
product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import nnkit, oracle
from .envs import EnvError, TabularMDP, Trajectory, is_tabular
from .nnkit import DenseNet, backward_from_cache, forward, forward_cached

LOG_VAR_MIN, LOG_VAR_MAX = np.log(1e-6), np.log(1e3)
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class GoalPosterior:
    """Posterior head q(goal | state, action).

    mode "mean_field": `head` maps one encoded (s || a) row to goal logits
    (tabular) or per-dimension (mean, log variance) (continuous).
    mode "full_traj": `feature_net` embeds each step, embeddings are
    mean-pooled over the trajectory, and `head` maps the pooled feature to the
    same output parameterization.
    """

    head: DenseNet
    mode: str                       # "mean_field" | "full_traj"
    kind: str                       # "categorical" | "gaussian"
    n_goals: int = 0
    goal_dim: int = 0
    feature_net: DenseNet | None = None


def posterior_init(codec, mode: str, rng: np.random.Generator,
                   hidden: tuple[int, ...] = (64, 64), activation: str = "relu",
                   feature_dim: int = 32) -> GoalPosterior:
    if mode not in ("mean_field", "full_traj"):
        raise ValueError(f"unknown posterior mode {mode!r}")
    in_dim = codec.state_dim + codec.action_dim
    if codec.kind == "tabular":
        kind, out_dim = "categorical", codec.goal_dim
    else:
        kind, out_dim = "gaussian", 2 * codec.goal_dim
    if mode == "mean_field":
        head = nnkit.net_init((in_dim, *hidden, out_dim), activation, rng)
        return GoalPosterior(head, mode, kind, n_goals=codec.goal_dim,
                             goal_dim=codec.goal_dim)
    feature = nnkit.net_init((in_dim, *hidden, feature_dim), activation, rng)
    head = nnkit.net_init((feature_dim, *hidden, out_dim), activation, rng)
    return GoalPosterior(head, mode, kind, n_goals=codec.goal_dim,
                         goal_dim=codec.goal_dim, feature_net=feature)


def _gaussian_params(out: np.ndarray, goal_dim: int) -> tuple[np.ndarray, np.ndarray]:
    mean = out[..., :goal_dim]
    log_var = np.clip(out[..., goal_dim:], LOG_VAR_MIN, LOG_VAR_MAX)
    return mean, log_var


def _gaussian_nll_and_grad(out, goals, goal_dim):
    """Mean diagonal-Gaussian NLL and its gradient w.r.t. the raw outputs."""
    B = len(out)
    mean, log_var = _gaussian_params(out, goal_dim)
    inside = (out[:, goal_dim:] > LOG_VAR_MIN) & (out[:, goal_dim:] < LOG_VAR_MAX)
    var = np.exp(log_var)
    delta = goals - mean
    nll = 0.5 * (delta**2 / var + log_var + _LOG_2PI).sum(axis=1)
    d_mean = -delta / var
    d_logvar = 0.5 * (1.0 - delta**2 / var) * inside
    grad_out = np.concatenate([d_mean, d_logvar], axis=1) / B
    return float(nll.mean()), grad_out


def _categorical_nll_and_grad(logits, goal_idx):
    B = len(logits)
    log_q = logits - logsumexp(logits, axis=1, keepdims=True)
    nll = -log_q[np.arange(B), goal_idx]
    grad_out = np.exp(log_q)
    grad_out[np.arange(B), goal_idx] -= 1.0
    return float(nll.mean()), grad_out / B


def favi_loss(posterior: GoalPosterior, sa: np.ndarray, goals) -> tuple[float, np.ndarray]:
    """Per-step forward-KL loss: mean NLL of the commanded goal under the head.

    Returns the gradient for the head parameters. Mean-field mode only; the
    full-trajectory variant has its own loss below.
    """
    if posterior.mode != "mean_field":
        raise ValueError("favi_loss is the per-step mean-field loss")
    out, cache = forward_cached(posterior.head, sa)
    if posterior.kind == "categorical":
        loss, grad_out = _categorical_nll_and_grad(out, np.asarray(goals, dtype=int))
    else:
        loss, grad_out = _gaussian_nll_and_grad(out, np.asarray(goals, dtype=float),
                                                posterior.goal_dim)
    grad, _ = backward_from_cache(posterior.head, cache, grad_out)
    return loss, grad


def favi_loss_fulltraj(posterior: GoalPosterior, step_inputs: np.ndarray,
                       goals) -> tuple[float, np.ndarray, np.ndarray]:
    """Trajectory-level loss for the pooled variant.

    step_inputs is (B, T, in); features are mean-pooled over T before the
    head. Returns (loss, head grad, feature-net grad).
    """
    if posterior.mode != "full_traj":
        raise ValueError("posterior is not a full-trajectory model")
    B, T, d_in = step_inputs.shape
    flat = step_inputs.reshape(B * T, d_in)
    feats, f_cache = forward_cached(posterior.feature_net, flat)
    pooled = feats.reshape(B, T, -1).mean(axis=1)
    out, h_cache = forward_cached(posterior.head, pooled)
    if posterior.kind == "categorical":
        loss, grad_out = _categorical_nll_and_grad(out, np.asarray(goals, dtype=int))
    else:
        loss, grad_out = _gaussian_nll_and_grad(out, np.asarray(goals, dtype=float),
                                                posterior.goal_dim)
    head_grad, d_pooled = backward_from_cache(posterior.head, h_cache, grad_out)
    d_feats = np.repeat(d_pooled / T, T, axis=0)
    feat_grad, _ = backward_from_cache(posterior.feature_net, f_cache, d_feats)
    return loss, head_grad, feat_grad


# ---------------------------------------------------------------------------
# Aggregation and MAP


@dataclass
class AggregatedPosterior:
    """Trajectory-level posterior: categorical probs or a diagonal Gaussian."""

    kind: str
    step_count: int
    probs: np.ndarray | None = None
    mean: np.ndarray | None = None
    var: np.ndarray | None = None


def step_inputs_for(codec, trajectory: Trajectory) -> np.ndarray:
    s = codec.encode_states(trajectory.states)
    a = codec.encode_actions(trajectory.actions)
    return np.concatenate([s, a], axis=1)


def aggregate(posterior: GoalPosterior, codec, trajectory: Trajectory,
              prior: np.ndarray | None = None) -> AggregatedPosterior:
    """Fuse per-step factors over a trajectory prefix.

    Categorical: sum of per-step log-probabilities plus one log-prior term,
    renormalized. Gaussian: precision-weighted product (the prior over the box
    is improper-uniform and drops out). full_traj models evaluate the pooled
    network on the prefix instead.
    """
    if len(trajectory) < 1:
        raise EnvError("cannot aggregate an empty prefix")
    inputs = step_inputs_for(codec, trajectory)
    n = len(inputs)
    if posterior.mode == "full_traj":
        feats = forward(posterior.feature_net, inputs).mean(axis=0)
        out = forward(posterior.head, feats)
        if posterior.kind == "categorical":
            log_q = out - logsumexp(out)
            return AggregatedPosterior("categorical", n, probs=np.exp(log_q))
        mean, log_var = _gaussian_params(out[None, :], posterior.goal_dim)
        return AggregatedPosterior("gaussian", n, mean=mean[0], var=np.exp(log_var[0]))

    out = forward(posterior.head, inputs)
    if posterior.kind == "categorical":
        log_q = out - logsumexp(out, axis=1, keepdims=True)
        total = log_q.sum(axis=0)
        if prior is not None:
            with np.errstate(divide="ignore"):
                total = total + np.log(np.asarray(prior, dtype=float))
        total -= logsumexp(total)
        return AggregatedPosterior("categorical", n, probs=np.exp(total))
    mean, log_var = _gaussian_params(out, posterior.goal_dim)
    precision = np.exp(-log_var).sum(axis=0)
    fused_mean = (mean * np.exp(-log_var)).sum(axis=0) / precision
    return AggregatedPosterior("gaussian", n, mean=fused_mean, var=1.0 / precision)


def map_goal(agg: AggregatedPosterior):
    """MAP estimate; categorical ties resolve to the lowest goal index."""
    if agg.kind == "categorical":
        return int(np.argmax(agg.probs))
    return agg.mean.copy()


def aggregated_nll(agg: AggregatedPosterior, true_goal) -> float:
    """Negative log-density (or log-mass) of the true goal under the aggregate."""
    if agg.kind == "categorical":
        p = agg.probs[int(true_goal)]
        return float(-np.log(np.maximum(p, 1e-300)))
    delta = np.asarray(true_goal, dtype=float) - agg.mean
    return float(0.5 * (delta**2 / agg.var + np.log(agg.var) + _LOG_2PI).sum())


def imitate(policy, posterior: GoalPosterior, expert_trajectory: Trajectory, env,
            rng: np.random.Generator, codec=None,
            deterministic: bool = False) -> Trajectory:
    """Infer the demonstrated goal and roll the goal-conditioned policy toward it."""
    from .crl import make_codec, rollout_policy

    codec = make_codec(env) if codec is None else codec
    states = np.asarray(expert_trajectory.states)
    if is_tabular(env):
        if states.ndim != 1 or np.any(states < 0) or np.any(states >= env.n_states):
            raise EnvError("expert trajectory does not match this environment")
    elif states.ndim != 2 or states.shape[1] != env.state_dim:
        raise EnvError("expert trajectory does not match this environment")
    goal = map_goal(aggregate(posterior, codec, expert_trajectory))
    return rollout_policy(env, codec, policy, goal, rng, deterministic=deterministic)


# ---------------------------------------------------------------------------
# Trainers (Adam wrappers used inside the main loop and in offline fits)


class MeanFieldTrainer:
    """FAVI updates for the per-step head on (s, a, commanded goal) batches.

    With success_filter on, the trainer keeps its own buffer of episodes that
    reached their commanded goal and trains only on those (cleaner labels:
    rollouts then approximate the optimal goal-conditioned trajectory model).
    """

    def __init__(self, posterior: GoalPosterior, codec, batch_size: int,
                 learning_rate: float, success_filter: bool = False,
                 filter_capacity: int = 4000):
        self.posterior = posterior
        self.codec = codec
        self.batch_size = batch_size
        self.adam = nnkit.adam_init(posterior.head.params.size, learning_rate)
        self.success_filter = success_filter
        self._own_buffer = None
        if success_filter:
            from .replay import ReplayBuffer
            self._own_buffer = ReplayBuffer(filter_capacity, np.random.default_rng(0))

    def observe(self, episodes, successes) -> None:
        if self._own_buffer is None:
            return
        for traj, ok in zip(episodes, successes):
            if ok:
                self._own_buffer.append(traj)

    def _source(self, buffer):
        if self._own_buffer is not None and len(self._own_buffer) > 0:
            return self._own_buffer
        return buffer

    def train_step(self, buffer) -> float:
        batch = self._source(buffer).sample_step_goal_batch(self.batch_size)
        sa = np.concatenate([self.codec.encode_states(batch["states"]),
                             self.codec.encode_actions(batch["actions"])], axis=1)
        goals = batch["goals"] if self.posterior.kind == "categorical" \
            else np.asarray(batch["goals"], dtype=float)
        loss, grad = favi_loss(self.posterior, sa, goals)
        new_p, self.adam = nnkit.adam_update(self.adam, self.posterior.head.params, grad)
        self.posterior.head.params = new_p
        return loss

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {"posterior.head": self.posterior.head.params}


class FullTrajTrainer:
    """FAVI updates for the pooled variant on whole-episode batches."""

    def __init__(self, posterior: GoalPosterior, codec, episodes_per_batch: int,
                 learning_rate: float):
        self.posterior = posterior
        self.codec = codec
        self.episodes_per_batch = episodes_per_batch
        self.adam_head = nnkit.adam_init(posterior.head.params.size, learning_rate)
        self.adam_feat = nnkit.adam_init(posterior.feature_net.params.size, learning_rate)

    def train_step(self, buffer) -> float:
        n = min(self.episodes_per_batch, len(buffer.episodes))
        idx = buffer.rng.integers(0, len(buffer.episodes), size=n)
        episodes = [buffer.episodes[i] for i in idx]
        inputs = np.stack([step_inputs_for(self.codec, tr) for tr in episodes])
        goals = [tr.commanded_goal for tr in episodes]
        goals = np.asarray(goals, dtype=int if self.posterior.kind == "categorical"
                           else float)
        loss, head_grad, feat_grad = favi_loss_fulltraj(self.posterior, inputs, goals)
        new_p, self.adam_head = nnkit.adam_update(
            self.adam_head, self.posterior.head.params, head_grad)
        self.posterior.head.params = new_p
        new_p, self.adam_feat = nnkit.adam_update(
            self.adam_feat, self.posterior.feature_net.params, feat_grad)
        self.posterior.feature_net.params = new_p
        return loss

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {"posterior.head": self.posterior.head.params,
                "posterior.feature": self.posterior.feature_net.params}


def make_posterior_trainer(posterior: GoalPosterior, codec, batch_size: int,
                           learning_rate: float, horizon: int):
    if posterior.mode == "mean_field":
        return MeanFieldTrainer(posterior, codec, batch_size, learning_rate)
    episodes = max(2, batch_size // (horizon + 1))
    return FullTrajTrainer(posterior, codec, episodes, learning_rate)


def fit_on_demos(trainer, demos: list[Trajectory], steps: int, capacity: int = 100_000,
                 seed: int = 0) -> list[float]:
    """Offline FAVI fit on a fixed demo set; returns the per-step loss trace."""
    from .replay import ReplayBuffer

    buf = ReplayBuffer(max(capacity, len(demos)), np.random.default_rng(seed))
    for d in demos:
        buf.append(d)
    return [trainer.train_step(buf) for _ in range(steps)]


# ---------------------------------------------------------------------------
# Closed-form mean-field factors for the exact tabular posterior


def exact_meanfield_factors(mdp: TabularMDP, trajectory: Trajectory,
                            alpha: float = 1.0, prior: np.ndarray | None = None,
                            log_partitions: np.ndarray | None = None) -> np.ndarray:
    """Per-step factors whose normalized product is the exact posterior.

    Factor t is proportional to
    exp(r_g(s_t, a_t)/alpha - log Z_g / N + log prior(g) / N) over goals g,
    with N the number of steps; each row is returned normalized.
    """
    if log_partitions is None:
        log_partitions = oracle.log_partition_all(mdp, alpha)
    if prior is None:
        prior = np.full(mdp.n_goals, 1.0 / mdp.n_goals)
    n = len(trajectory)
    r = mdp.reward_table()[trajectory.states, trajectory.actions, :] / alpha  # (N, G)
    with np.errstate(divide="ignore"):
        log_f = r - log_partitions[None, :] / n + np.log(prior)[None, :] / n
    log_f -= logsumexp(log_f, axis=1, keepdims=True)
    return np.exp(log_f)


def meanfield_product(factors: np.ndarray) -> np.ndarray:
    """Normalized product of categorical factors (rows of `factors`)."""
    with np.errstate(divide="ignore"):
        total = np.log(factors).sum(axis=0)
    total -= logsumexp(total)
    return np.exp(total)
