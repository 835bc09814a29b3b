"""Automatic goal sampling.

GoalKDE: fit a product-Gaussian kernel density estimate on a subsample of
replay states and command the lowest-density buffer state as the next goal.
Uniform and oracle (test-distribution) samplers exist for ablations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .envs import EnvError, is_tabular


@dataclass
class KdeModel:
    """Gaussian product-kernel density over n support points in d dimensions."""

    points: np.ndarray        # (n, d)
    bandwidth: np.ndarray     # (d,)


def fit_kde(states: np.ndarray, bandwidth_floor: float = 1e-3) -> KdeModel:
    """Scott's rule per dimension: h_j = sigma_j * n^(-1/(d+4)), floored.

    Zero-variance dimensions fall back to the floor rather than failing.
    """
    pts = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if pts.ndim != 2 or len(pts) < 1:
        raise EnvError("KDE needs an (n, d) sample with n >= 1")
    n, d = pts.shape
    sigma = pts.std(axis=0, ddof=0)
    h = np.maximum(sigma * n ** (-1.0 / (d + 4)), bandwidth_floor)
    return KdeModel(points=pts, bandwidth=h)


def log_density(model: KdeModel, x: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Log of (1/n) sum_i prod_j N(x_j - p_ij; h_j); x is (d,) or (m, d).

    Evaluated in query chunks to bound the (m, n) kernel matrix size.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    const = -np.log(model.bandwidth).sum() - 0.5 * x.shape[1] * np.log(2.0 * np.pi) \
        - np.log(len(model.points))
    out = np.empty(len(x))
    for lo in range(0, len(x), chunk):
        q = x[lo:lo + chunk]
        diff = (q[:, None, :] - model.points[None, :, :]) / model.bandwidth
        log_kernel = -0.5 * (diff**2).sum(axis=2)
        out[lo:lo + chunk] = logsumexp(log_kernel, axis=1) + const
    return out


def density(model: KdeModel, x: np.ndarray) -> float | np.ndarray:
    out = np.exp(log_density(model, x))
    return float(out[0]) if out.size == 1 else out


def _state_features(env, states: np.ndarray) -> np.ndarray:
    if is_tabular(env):
        return env.state_coords[np.asarray(states, dtype=int)]
    return np.atleast_2d(states)


def sample_goal_kde(buffer, env, rng: np.random.Generator,
                    fit_subsample: int = 2048,
                    candidate_count: int = 2048) -> tuple[object, dict]:
    """Command the lowest-KDE-density buffer state as the next goal.

    Fits on one uniform state subsample and scores an independent candidate
    subsample; ties resolve to the earliest stored state (argmin over
    buffer-ordered candidates).
    """
    if len(buffer) == 0:
        raise EnvError("cannot sample a KDE goal from an empty buffer")
    fit_states = buffer.all_states(fit_subsample, rng)
    model = fit_kde(_state_features(env, fit_states))
    candidates = buffer.all_states(candidate_count, rng)
    if is_tabular(env):
        # Duplicates share a density; score unique states once and break
        # density ties by the earliest buffer occurrence.
        uniq, first_idx = np.unique(np.asarray(candidates, dtype=int),
                                    return_index=True)
        scores = log_density(model, env.state_coords[uniq])
        tied = np.flatnonzero(scores == scores.min())
        best = tied[np.argmin(first_idx[tied])]
        return int(uniq[best]), {"kde_min_density": float(np.exp(scores[best]))}
    scores = log_density(model, np.atleast_2d(candidates))
    best = int(np.argmin(scores))
    return (np.asarray(candidates[best], dtype=np.float64),
            {"kde_min_density": float(np.exp(scores[best]))})


def sample_goal_uniform(env, rng: np.random.Generator):
    if is_tabular(env):
        return int(rng.integers(0, env.n_goals))
    return rng.uniform(-1.0, 1.0, size=2)


def sample_goal_oracle(test_dist: dict, env, rng: np.random.Generator):
    """Draw from the configured test-time goal distribution.

    Supported kinds: "uniform", "point" {goal}, "categorical" {probs}.
    """
    kind = test_dist.get("kind", "uniform")
    if kind == "uniform":
        return sample_goal_uniform(env, rng)
    if kind == "point":
        goal = test_dist["goal"]
        return int(goal) if is_tabular(env) else np.asarray(goal, dtype=np.float64)
    if kind == "categorical":
        probs = np.asarray(test_dist["probs"], dtype=np.float64)
        return int(rng.choice(len(probs), p=probs))
    raise EnvError(f"unknown oracle goal distribution kind {kind!r}")


class KdeSampler:
    def __init__(self, env, fit_subsample: int = 2048, candidate_count: int = 2048):
        self.env = env
        self.fit_subsample = fit_subsample
        self.candidate_count = candidate_count

    def sample(self, buffer, rng):
        return sample_goal_kde(buffer, self.env, rng,
                               self.fit_subsample, self.candidate_count)

    def sample_wave(self, buffer, rng, n: int):
        """The n lowest-density candidate states, one per parallel env.

        One KDE fit per iteration; mirrors per-env argmin selection while
        keeping the commanded wave diverse. Replicates the argmin when fewer
        than n distinct candidates exist.
        """
        if len(buffer) == 0:
            raise EnvError("cannot sample KDE goals from an empty buffer")
        fit_states = buffer.all_states(self.fit_subsample, rng)
        model = fit_kde(_state_features(self.env, fit_states))
        candidates = buffer.all_states(self.candidate_count, rng)
        if is_tabular(self.env):
            uniq, first_idx = np.unique(np.asarray(candidates, dtype=int),
                                        return_index=True)
            scores = log_density(model, self.env.state_coords[uniq])
            order = np.lexsort((first_idx, scores))[:n]
            goals = [int(uniq[i]) for i in order]
        else:
            scores = log_density(model, np.atleast_2d(candidates))
            order = np.argsort(scores, kind="stable")[:n]
            goals = [np.asarray(candidates[i], dtype=np.float64) for i in order]
        goals = (goals * (n // len(goals) + 1))[:n]
        info = {"kde_min_density": float(np.exp(scores[order[0]]))}
        return goals, info


class UniformSampler:
    def __init__(self, env):
        self.env = env

    def sample(self, buffer, rng):
        return sample_goal_uniform(self.env, rng), {}

    def sample_wave(self, buffer, rng, n: int):
        return [sample_goal_uniform(self.env, rng) for _ in range(n)], {}


class OracleSampler:
    def __init__(self, env, test_dist: dict | None = None):
        self.env = env
        self.test_dist = test_dist or {"kind": "uniform"}

    def sample(self, buffer, rng):
        return sample_goal_oracle(self.test_dist, self.env, rng), {}

    def sample_wave(self, buffer, rng, n: int):
        return [sample_goal_oracle(self.test_dist, self.env, rng)
                for _ in range(n)], {}


def make_sampler(kind: str, env, **params):
    if kind == "kde":
        return KdeSampler(env, **params)
    if kind == "uniform":
        return UniformSampler(env)
    if kind == "oracle":
        return OracleSampler(env, params.get("test_dist"))
    raise EnvError(f"unknown sampler kind {kind!r}")
