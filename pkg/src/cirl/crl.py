"""Maximum-entropy contrastive RL learner.

Three learned heads over the nnkit MLPs: an InfoNCE critic with separate
state-action and goal encoders, a TD-trained discounted future-entropy value
head with a Polyak target, and an entropy-regularized actor that scores
sampled actions with exp(critic energy). Gradients are derived by hand and
verified against finite differences by the gradcheck command.

Tabular environments use one-hot featurization with exact expectations over
the action set inside the entropy and actor losses; continuous environments
use tanh-squashed Gaussian policies with reparameterized samples (noise is
always passed in explicitly so losses stay deterministic functions of the
parameters).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import nnkit
from .envs import EnvError, PointMassEnv, TabularMDP, Trajectory, is_tabular
from .nnkit import DenseNet, backward, backward_from_cache, forward, forward_cached
from .replay import ReplayBuffer

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
_LOG_2PI = np.log(2.0 * np.pi)


# ---------------------------------------------------------------------------
# Featurization


class TabularCodec:
    """One-hot encodings for states, actions, and goals of a tabular MDP."""

    kind = "tabular"

    def __init__(self, n_states: int, n_actions: int):
        self.n_states = int(n_states)
        self.n_actions = int(n_actions)
        self.state_dim = self.n_states
        self.action_dim = self.n_actions
        self.goal_dim = self.n_states
        self._eye_s = np.eye(self.n_states)
        self._eye_a = np.eye(self.n_actions)

    def encode_states(self, s) -> np.ndarray:
        return self._eye_s[np.asarray(s, dtype=int)]

    def encode_actions(self, a) -> np.ndarray:
        return self._eye_a[np.asarray(a, dtype=int)]

    def encode_goals(self, g) -> np.ndarray:
        return self._eye_s[np.asarray(g, dtype=int)]


class ContinuousCodec:
    """Raw-vector passthrough for the point mass."""

    kind = "continuous"

    def __init__(self, state_dim: int, action_dim: int, action_max: float):
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.goal_dim = int(state_dim)
        self.action_max = float(action_max)

    def encode_states(self, s) -> np.ndarray:
        return np.atleast_2d(np.asarray(s, dtype=np.float64))

    encode_goals = encode_states

    def encode_actions(self, a) -> np.ndarray:
        return np.atleast_2d(np.asarray(a, dtype=np.float64))


def make_codec(env):
    if is_tabular(env):
        return TabularCodec(env.n_states, env.n_actions)
    return ContinuousCodec(env.state_dim, 2, env.action_max)


# ---------------------------------------------------------------------------
# Configuration


@dataclass
class MaxEntConfig:
    """Learner hyperparameters; defaults are the desk-scale reference values."""

    alpha: float = 1e-5
    gamma: float = 0.9
    batch_size: int = 256
    num_updates: int = 16
    repr_dim: int = 16
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "relu"
    learning_rate: float = 3e-4
    c_reg: float = 0.01
    f_max: float = 20.0
    actor_uses_log_ratio: bool = False
    include_future_entropy: bool = True
    polyak: float = 0.005

    def __post_init__(self):
        if self.alpha < 0.0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if not (0.0 < self.gamma < 1.0):
            raise ValueError(f"gamma must be in (0, 1), got {self.gamma}")
        self.hidden = tuple(int(h) for h in self.hidden)


# ---------------------------------------------------------------------------
# Networks


@dataclass
class ContrastiveCritic:
    """Energy f(s,a,g) = sa_encoder(s||a) . goal_encoder(g); no shared params."""

    sa_encoder: DenseNet
    goal_encoder: DenseNet


def critic_init(codec, cfg: MaxEntConfig, rng: np.random.Generator) -> ContrastiveCritic:
    sa = nnkit.net_init(
        (codec.state_dim + codec.action_dim, *cfg.hidden, cfg.repr_dim),
        cfg.activation, rng)
    goal = nnkit.net_init((codec.goal_dim, *cfg.hidden, cfg.repr_dim), cfg.activation, rng)
    return ContrastiveCritic(sa, goal)


def critic_energy(critic: ContrastiveCritic, sa: np.ndarray, goals: np.ndarray) -> np.ndarray:
    """Paired energies f_i = phi(sa_i) . psi(g_i)."""
    return np.einsum("bd,bd->b", forward(critic.sa_encoder, sa),
                     forward(critic.goal_encoder, goals))


@dataclass
class PolicyNet:
    """Goal-conditioned policy head.

    Categorical logits for tabular actions; (mean, log-std) with tanh
    squashing to +-action_max for continuous ones. log-std is clamped to
    [LOG_STD_MIN, LOG_STD_MAX].
    """

    net: DenseNet
    kind: str                      # "categorical" | "gaussian"
    n_actions: int = 0             # categorical
    action_dim: int = 0            # gaussian
    action_max: float = 1.0


def policy_init(codec, cfg: MaxEntConfig, rng: np.random.Generator) -> PolicyNet:
    in_dim = codec.state_dim + codec.goal_dim
    if codec.kind == "tabular":
        net = nnkit.net_init((in_dim, *cfg.hidden, codec.action_dim), cfg.activation, rng)
        return PolicyNet(net, "categorical", n_actions=codec.action_dim)
    net = nnkit.net_init((in_dim, *cfg.hidden, 2 * codec.action_dim), cfg.activation, rng)
    return PolicyNet(net, "gaussian", action_dim=codec.action_dim,
                     action_max=codec.action_max)


def _logsumexp_rows(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True)))[..., 0]


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    return logits - _logsumexp_rows(logits)[..., None]


def policy_probs(policy: PolicyNet, sg: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(forward(policy.net, sg)))


def _split_gaussian(out: np.ndarray, action_dim: int) -> tuple[np.ndarray, np.ndarray]:
    mean = out[..., :action_dim]
    log_std = np.clip(out[..., action_dim:], LOG_STD_MIN, LOG_STD_MAX)
    return mean, log_std


def gaussian_action(policy: PolicyNet, sg: np.ndarray, noise: np.ndarray,
                    deterministic: bool = False):
    """Squashed action plus the pre-squash value needed for log-probs."""
    mean, log_std = _split_gaussian(forward(policy.net, sg), policy.action_dim)
    u = mean if deterministic else mean + np.exp(log_std) * noise
    return policy.action_max * np.tanh(u), u


def gaussian_log_prob(policy: PolicyNet, mean, log_std, u) -> np.ndarray:
    """log pi(a|s,g) at a = action_max * tanh(u), with the change-of-variables
    correction; stable via log(1 - tanh(u)^2) = 2(log2 - u - softplus(-2u))."""
    std = np.exp(log_std)
    base = -0.5 * ((u - mean) / std) ** 2 - log_std - 0.5 * _LOG_2PI
    log_det = 2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u)) \
        + np.log(policy.action_max)
    return (base - log_det).sum(axis=-1)


def sample_actions(policy: PolicyNet, sg: np.ndarray, rng: np.random.Generator,
                   deterministic: bool = False) -> np.ndarray:
    """Batch of actions; tabular indices or continuous vectors."""
    if policy.kind == "categorical":
        probs = policy_probs(policy, sg)
        if deterministic:
            return probs.argmax(axis=-1)
        u = rng.random((len(probs), 1))
        idx = (probs.cumsum(axis=1) < u).sum(axis=1)
        return np.minimum(idx, policy.n_actions - 1)
    noise = rng.standard_normal((len(sg), policy.action_dim))
    a, _ = gaussian_action(policy, sg, noise, deterministic=deterministic)
    return a


@dataclass
class EntropyValueNet:
    """Scalar head H(s,a,g) for discounted future policy entropy, with a
    Polyak-averaged target copy used in the TD backup."""

    net: DenseNet
    target_params: np.ndarray
    polyak: float = 0.005


def entropy_net_init(codec, cfg: MaxEntConfig, rng: np.random.Generator) -> EntropyValueNet:
    net = nnkit.net_init(
        (codec.state_dim + codec.action_dim + codec.goal_dim, *cfg.hidden, 1),
        cfg.activation, rng)
    return EntropyValueNet(net, net.params.copy(), polyak=cfg.polyak)


def polyak_update(ent: EntropyValueNet) -> EntropyValueNet:
    new_target = (1.0 - ent.polyak) * ent.target_params + ent.polyak * ent.net.params
    return replace(ent, target_params=new_target)


# ---------------------------------------------------------------------------
# Losses


def critic_loss(critic: ContrastiveCritic, sa: np.ndarray, goals: np.ndarray,
                c_reg: float) -> tuple[float, dict]:
    """Forward InfoNCE with in-batch negatives plus a squared-logsumexp penalty.

    L = -mean_i [E_ii - log sum_j exp(E_ij)] + c_reg * mean_i (log sum_j exp(E_ij))^2
    over the energy matrix E = phi(sa) psi(goals)^T. Returns gradients for
    both encoders.
    """
    B = len(sa)
    if B < 1:
        raise EnvError("critic batch must be nonempty")
    phi, sa_cache = forward_cached(critic.sa_encoder, sa)
    psi, g_cache = forward_cached(critic.goal_encoder, goals)
    energy = phi @ psi.T
    lse = _logsumexp_rows(energy)
    softmax = np.exp(energy - lse[:, None])
    loss = float(-(np.diag(energy) - lse).mean() + c_reg * (lse**2).mean())
    g_energy = -(np.eye(B) - softmax) / B \
        + (2.0 * c_reg / B) * lse[:, None] * softmax
    d_phi = g_energy @ psi
    d_psi = g_energy.T @ phi
    sa_grad, _ = backward_from_cache(critic.sa_encoder, sa_cache, d_phi)
    g_grad, _ = backward_from_cache(critic.goal_encoder, g_cache, d_psi)
    return loss, {"sa": sa_grad, "goal": g_grad}


def entropy_td_loss(
    entropy: EntropyValueNet,
    policy: PolicyNet,
    batch: dict,
    alpha: float,
    gamma: float,
    codec,
    next_noise: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Squared TD residual against y = gamma * E_{a'}[-alpha log pi + H_target].

    Tabular policies take the exact expectation over next actions; continuous
    ones use the provided reparameterization noise. Gradient flows only into
    the online entropy net.
    """
    s = codec.encode_states(batch["states"])
    a = codec.encode_actions(batch["actions"])
    s_next = codec.encode_states(batch["next_states"])
    g = codec.encode_goals(batch["goals"])
    B = len(s)
    target_net = entropy.net.with_params(entropy.target_params)

    sg_next = np.concatenate([s_next, g], axis=1)
    if policy.kind == "categorical":
        log_pi = _log_softmax(forward(policy.net, sg_next))          # (B, A)
        pi = np.exp(log_pi)
        A = policy.n_actions
        eye = np.eye(A)
        sag = np.concatenate([
            np.repeat(s_next, A, axis=0),
            np.tile(eye, (B, 1)),
            np.repeat(g, A, axis=0),
        ], axis=1)
        h_target = forward(target_net, sag)[:, 0].reshape(B, A)
        y = gamma * (pi * (-alpha * log_pi + h_target)).sum(axis=1)
    else:
        mean, log_std = _split_gaussian(forward(policy.net, sg_next), policy.action_dim)
        u = mean + np.exp(log_std) * next_noise
        a_next = policy.action_max * np.tanh(u)
        log_pi = gaussian_log_prob(policy, mean, log_std, u)
        h_target = forward(target_net, np.concatenate([s_next, a_next, g], axis=1))[:, 0]
        y = gamma * (-alpha * log_pi + h_target)

    sag_now = np.concatenate([s, a, g], axis=1)
    h, cache = forward_cached(entropy.net, sag_now)
    resid = h[:, 0] - y
    loss = float((resid**2).mean())
    grad, _ = backward_from_cache(entropy.net, cache, (2.0 / B) * resid[:, None])
    return loss, grad


def actor_loss(
    policy: PolicyNet,
    critic: ContrastiveCritic,
    entropy: EntropyValueNet,
    states: np.ndarray,
    goals: np.ndarray,
    cfg: MaxEntConfig,
    codec,
    noise: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Negated actor objective J = E[score(f) + H(s,a,g) - alpha log pi].

    score(f) is exp(min(f, f_max)) by default, or raw f when
    cfg.actor_uses_log_ratio is set. Critic and entropy nets are frozen;
    gradient is returned for the policy parameters only. Tabular policies use
    the exact expectation over actions; continuous ones differentiate through
    the tanh-squashed reparameterized sample.
    """
    s = codec.encode_states(states)
    g = codec.encode_goals(goals)
    B = len(s)
    sg = np.concatenate([s, g], axis=1)
    psi = forward(critic.goal_encoder, g)

    if policy.kind == "categorical":
        A = policy.n_actions
        out, cache = forward_cached(policy.net, sg)
        log_pi = _log_softmax(out)
        pi = np.exp(log_pi)
        eye = np.eye(A)
        sa = np.concatenate([np.repeat(s, A, axis=0), np.tile(eye, (B, 1))], axis=1)
        f = (forward(critic.sa_encoder, sa).reshape(B, A, -1)
             * psi[:, None, :]).sum(axis=2)
        score = f if cfg.actor_uses_log_ratio else np.exp(np.minimum(f, cfg.f_max))
        if cfg.include_future_entropy:
            sag = np.concatenate([sa, np.repeat(g, A, axis=0)], axis=1)
            score = score + forward(entropy.net, sag)[:, 0].reshape(B, A)
        pi_score = (pi * score).sum(axis=1)
        ent = -(pi * log_pi).sum(axis=1)
        j = pi_score + cfg.alpha * ent
        # dJ/dlogit_b = pi_b (score_b - pi.score) - alpha pi_b (log pi_b + ent)
        d_logits = pi * (score - pi_score[:, None]) \
            - cfg.alpha * pi * (log_pi + ent[:, None])
        grad, _ = backward_from_cache(policy.net, cache, -d_logits / B)
        return float(-j.mean()), grad

    da = policy.action_dim
    out, cache = forward_cached(policy.net, sg)
    mean, log_std = _split_gaussian(out, da)
    in_clip = (out[:, da:] > LOG_STD_MIN) & (out[:, da:] < LOG_STD_MAX)
    std = np.exp(log_std)
    u = mean + std * noise
    tanh_u = np.tanh(u)
    a = policy.action_max * tanh_u
    sa = np.concatenate([s, a], axis=1)

    phi, sa_cache = forward_cached(critic.sa_encoder, sa)
    f = (phi * psi).sum(axis=1)
    if cfg.actor_uses_log_ratio:
        score, d_score_df = f, np.ones_like(f)
    else:
        clipped = f >= cfg.f_max
        score = np.exp(np.minimum(f, cfg.f_max))
        d_score_df = np.where(clipped, 0.0, score)
    _, df_dsa = backward_from_cache(critic.sa_encoder, sa_cache, psi)
    d_da = d_score_df[:, None] * df_dsa[:, codec.state_dim:]       # dscore/da

    h_term = 0.0
    if cfg.include_future_entropy:
        sag = np.concatenate([sa, g], axis=1)
        h, h_cache = forward_cached(entropy.net, sag)
        h_term = h[:, 0]
        _, dh_dsag = backward_from_cache(entropy.net, h_cache, np.ones((B, 1)))
        d_da = d_da + dh_dsag[:, codec.state_dim:codec.state_dim + da]

    log_pi = gaussian_log_prob(policy, mean, log_std, u)
    j = score + h_term - cfg.alpha * log_pi

    du = d_da * policy.action_max * (1.0 - tanh_u**2)              # through a = amax tanh(u)
    # d log pi / du = 2 tanh(u) per dim (density term is constant in u - mean)
    d_mean = du - cfg.alpha * 2.0 * tanh_u
    d_logstd = du * std * noise - cfg.alpha * (-1.0 + 2.0 * tanh_u * std * noise)
    d_out = np.concatenate([d_mean, d_logstd * in_clip], axis=1)
    grad, _ = backward_from_cache(policy.net, cache, -d_out / B)
    if not np.isfinite(j).all():
        raise nnkit.NumericalError(
            f"actor objective non-finite (max f = {np.max(f):.3g})")
    return float(-j.mean()), grad


# ---------------------------------------------------------------------------
# Rollouts (lockstep waves; one RNG stream per wave keeps runs reproducible
# for any fixed wave width)


def rollout_wave(env, codec, policy: PolicyNet, goals, rng: np.random.Generator,
                 deterministic: bool = False) -> list[Trajectory]:
    """Collect len(goals) episodes in lockstep with the goal-conditioned policy."""
    W = len(goals)
    if is_tabular(env):
        states = np.array([env.sample_initial(rng) for _ in range(W)])
        g_enc = codec.encode_goals(goals)
        s_hist, a_hist = [states.copy()], []
        for _ in range(env.horizon):
            sg = np.concatenate([codec.encode_states(states), g_enc], axis=1)
            acts = sample_actions(policy, sg, rng, deterministic)
            a_hist.append(acts)
            states = env.step_batch(states, acts, rng)
            s_hist.append(states.copy())
        sg = np.concatenate([codec.encode_states(states), g_enc], axis=1)
        a_hist.append(sample_actions(policy, sg, rng, deterministic))
        S = np.stack(s_hist, axis=1)
        A = np.stack(a_hist, axis=1)
        return [Trajectory(S[i], A[i], commanded_goal=int(goals[i]), env_id=env.name)
                for i in range(W)]

    states = np.stack([env.sample_initial(rng) for _ in range(W)])
    goals = np.asarray(goals, dtype=np.float64)
    s_hist, a_hist = [states.copy()], []
    for _ in range(env.horizon):
        sg = np.concatenate([states, goals], axis=1)
        acts = sample_actions(policy, sg, rng, deterministic)
        a_hist.append(acts)
        states = env.step(states, acts, rng)
        s_hist.append(states.copy())
    sg = np.concatenate([states, goals], axis=1)
    a_hist.append(sample_actions(policy, sg, rng, deterministic))
    S = np.stack(s_hist, axis=1)
    A = np.stack(a_hist, axis=1)
    return [Trajectory(S[i], A[i], commanded_goal=goals[i], env_id=env.name)
            for i in range(W)]


def rollout_policy(env, codec, policy: PolicyNet, goal, rng: np.random.Generator,
                   deterministic: bool = False) -> Trajectory:
    return rollout_wave(env, codec, policy, [goal], rng, deterministic)[0]


def random_action_wave(env, codec, goals, rng: np.random.Generator) -> list[Trajectory]:
    """Uniform-random-action episodes used to pre-fill the buffer."""
    W = len(goals)
    if is_tabular(env):
        states = np.array([env.sample_initial(rng) for _ in range(W)])
        s_hist, a_hist = [states.copy()], []
        for _ in range(env.horizon):
            acts = rng.integers(0, env.n_actions, size=W)
            a_hist.append(acts)
            states = env.step_batch(states, acts, rng)
            s_hist.append(states.copy())
        a_hist.append(rng.integers(0, env.n_actions, size=W))
        S, A = np.stack(s_hist, axis=1), np.stack(a_hist, axis=1)
        return [Trajectory(S[i], A[i], commanded_goal=int(goals[i]), env_id=env.name)
                for i in range(W)]
    states = np.stack([env.sample_initial(rng) for _ in range(W)])
    s_hist, a_hist = [states.copy()], []
    for _ in range(env.horizon):
        acts = rng.uniform(-env.action_max, env.action_max, size=(W, 2))
        a_hist.append(acts)
        states = env.step(states, acts, rng)
        s_hist.append(states.copy())
    a_hist.append(rng.uniform(-env.action_max, env.action_max, size=(W, 2)))
    S, A = np.stack(s_hist, axis=1), np.stack(a_hist, axis=1)
    return [Trajectory(S[i], A[i], commanded_goal=np.asarray(goals[i]), env_id=env.name)
            for i in range(W)]


def episode_success(env, traj: Trajectory, goal=None) -> bool:
    goal = traj.commanded_goal if goal is None else goal
    if is_tabular(env):
        return bool(np.any(np.asarray(traj.states) == int(goal)))
    dists = np.linalg.norm(np.asarray(traj.states) - np.asarray(goal), axis=1)
    return bool(np.any(dists < env.goal_radius))


# ---------------------------------------------------------------------------
# Training orchestration


@dataclass
class Learner:
    """All trainable state for one run."""

    codec: object
    cfg: MaxEntConfig
    critic: ContrastiveCritic
    policy: PolicyNet
    entropy: EntropyValueNet
    adam_sa: nnkit.AdamState
    adam_goal: nnkit.AdamState
    adam_policy: nnkit.AdamState
    adam_entropy: nnkit.AdamState

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {
            "critic.sa": self.critic.sa_encoder.params,
            "critic.goal": self.critic.goal_encoder.params,
            "policy": self.policy.net.params,
            "entropy": self.entropy.net.params,
            "entropy_target": self.entropy.target_params,
        }

    def load_param_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        def _take(name, current):
            if name not in arrays:
                raise ValueError(f"checkpoint missing array {name!r}")
            if arrays[name].shape != current.shape:
                raise ValueError(
                    f"checkpoint array {name!r} has length {arrays[name].shape}, "
                    f"expected {current.shape}")
            return arrays[name].copy()

        self.critic.sa_encoder.params = _take("critic.sa", self.critic.sa_encoder.params)
        self.critic.goal_encoder.params = _take("critic.goal",
                                                self.critic.goal_encoder.params)
        self.policy.net.params = _take("policy", self.policy.net.params)
        self.entropy.net.params = _take("entropy", self.entropy.net.params)
        self.entropy.target_params = _take("entropy_target", self.entropy.target_params)


def learner_init(env, cfg: MaxEntConfig, rng: np.random.Generator) -> Learner:
    codec = make_codec(env)
    critic = critic_init(codec, cfg, rng)
    policy = policy_init(codec, cfg, rng)
    entropy = entropy_net_init(codec, cfg, rng)
    lr = cfg.learning_rate
    return Learner(
        codec, cfg, critic, policy, entropy,
        adam_sa=nnkit.adam_init(critic.sa_encoder.params.size, lr),
        adam_goal=nnkit.adam_init(critic.goal_encoder.params.size, lr),
        adam_policy=nnkit.adam_init(policy.net.params.size, lr),
        adam_entropy=nnkit.adam_init(entropy.net.params.size, lr),
    )


METRIC_FIELDS = ("step", "critic_loss", "entropy_loss", "actor_loss", "info_nll",
                 "success_rate", "kde_min_density")


def train(
    env,
    cfg: MaxEntConfig,
    goal_sampler,
    posterior_trainer=None,
    *,
    step_budget: int,
    workers: int = 4,
    prefill_episodes: int = 50,
    replay_capacity: int = 1000,
    seed: int = 0,
    learner: Learner | None = None,
    metrics_cb=None,
    checkpoint_cb=None,
    checkpoint_every: int = 0,
) -> tuple[Learner, list[dict]]:
    """Algorithm loop: sample goals, roll out in parallel, then interleave
    critic / entropy / actor / posterior updates on fresh batches.

    Deterministic for a fixed (seed, workers); emits one metrics row per
    iteration and invokes checkpoint_cb at the configured iteration cadence.
    """
    if abs(cfg.gamma - env.discount) > 1e-12:
        raise EnvError(
            f"config gamma {cfg.gamma} != env discount {env.discount}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    if learner is None:
        learner = learner_init(env, cfg, rng)
    codec = learner.codec
    buffer = ReplayBuffer(replay_capacity,
                          np.random.default_rng(np.random.SeedSequence((seed, 1))))
    env_rng = np.random.default_rng(np.random.SeedSequence((seed, 2)))

    uniform = UniformGoalStream(env)
    prefill_goals = [uniform.sample(env_rng) for _ in range(max(prefill_episodes, 1))]
    for traj in random_action_wave(env, codec, prefill_goals, env_rng):
        buffer.append(traj)

    metrics: list[dict] = []
    env_steps = 0
    iteration = 0
    while env_steps < step_budget:
        goals, info = goal_sampler.sample_wave(buffer, env_rng, workers)
        episodes = rollout_wave(env, codec, learner.policy, goals, env_rng)
        for traj in episodes:
            buffer.append(traj)
        env_steps += workers * env.horizon
        succ = np.mean([episode_success(env, tr) for tr in episodes])

        sums = {"critic_loss": 0.0, "entropy_loss": 0.0, "actor_loss": 0.0,
                "info_nll": 0.0}
        for _ in range(cfg.num_updates):
            # One future-relabeled batch feeds the critic, entropy, and actor
            # updates; the posterior trains on commanded-goal pairs.
            fb = buffer.sample_future_batch(cfg.batch_size, cfg.gamma)
            sa = np.concatenate([codec.encode_states(fb["states"]),
                                 codec.encode_actions(fb["actions"])], axis=1)
            c_loss, c_grads = critic_loss(learner.critic, sa,
                                          codec.encode_goals(fb["goals"]), cfg.c_reg)
            new_p, learner.adam_sa = nnkit.adam_update(
                learner.adam_sa, learner.critic.sa_encoder.params, c_grads["sa"])
            learner.critic.sa_encoder.params = new_p
            new_p, learner.adam_goal = nnkit.adam_update(
                learner.adam_goal, learner.critic.goal_encoder.params, c_grads["goal"])
            learner.critic.goal_encoder.params = new_p

            noise = None
            if learner.policy.kind == "gaussian":
                noise = env_rng.standard_normal((cfg.batch_size, learner.policy.action_dim))
            e_loss, e_grad = entropy_td_loss(learner.entropy, learner.policy, fb,
                                             cfg.alpha, cfg.gamma, codec, noise)
            new_p, learner.adam_entropy = nnkit.adam_update(
                learner.adam_entropy, learner.entropy.net.params, e_grad)
            learner.entropy.net.params = new_p
            learner.entropy = polyak_update(learner.entropy)

            noise = None
            if learner.policy.kind == "gaussian":
                noise = env_rng.standard_normal((cfg.batch_size, learner.policy.action_dim))
            a_loss, a_grad = actor_loss(learner.policy, learner.critic, learner.entropy,
                                        fb["states"], fb["goals"], cfg, codec, noise)
            new_p, learner.adam_policy = nnkit.adam_update(
                learner.adam_policy, learner.policy.net.params, a_grad)
            learner.policy.net.params = new_p

            nll = 0.0
            if posterior_trainer is not None:
                nll = posterior_trainer.train_step(buffer)
            sums["critic_loss"] += c_loss
            sums["entropy_loss"] += e_loss
            sums["actor_loss"] += a_loss
            sums["info_nll"] += nll

        iteration += 1
        row = {
            "step": env_steps,
            "critic_loss": sums["critic_loss"] / cfg.num_updates,
            "entropy_loss": sums["entropy_loss"] / cfg.num_updates,
            "actor_loss": sums["actor_loss"] / cfg.num_updates,
            "info_nll": sums["info_nll"] / cfg.num_updates,
            "success_rate": float(succ),
            "kde_min_density": float(info.get("kde_min_density", np.nan)),
        }
        metrics.append(row)
        if metrics_cb is not None:
            metrics_cb(row)
        if checkpoint_cb is not None and checkpoint_every and \
                iteration % checkpoint_every == 0:
            checkpoint_cb(learner, iteration)
    return learner, metrics


class UniformGoalStream:
    """Uniform draws over the goal space (helper shared with explore)."""

    def __init__(self, env):
        self.env = env

    def sample(self, rng: np.random.Generator):
        if is_tabular(self.env):
            return int(rng.integers(0, self.env.n_goals))
        return rng.uniform(-1.0, 1.0, size=2)
