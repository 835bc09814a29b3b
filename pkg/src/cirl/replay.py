"""Episode replay buffer with discounted future-state goal relabeling.

Positives for the contrastive critic are (s_t, a_t, s_{t+d}) triples with
d >= 1 drawn from a per-(episode, t) truncated geometric law
P(d = k) proportional to gamma^{k-1}. Eviction is whole-episode FIFO.

Sampling runs off a flat cached view of the stored episodes (rebuilt lazily
after appends), so batch assembly is pure fancy indexing.
"""

from __future__ import annotations

import numpy as np

from .envs import EnvError, Trajectory, save_trajectories


class _FlatView:
    """Contiguous copies of all stored steps plus (episode, t) index tables."""

    def __init__(self, episodes: list[Trajectory]):
        lengths = np.array([len(tr) for tr in episodes])
        offsets = np.concatenate([[0], np.cumsum(lengths)])
        self.states = np.concatenate([np.asarray(tr.states) for tr in episodes])
        self.actions = np.concatenate([np.asarray(tr.actions) for tr in episodes])
        self.goals = np.array([tr.commanded_goal for tr in episodes])
        # All (episode, t) pairs, flat row index, and remaining steps after t.
        ep = np.repeat(np.arange(len(episodes)), lengths)
        t = np.arange(len(self.states)) - offsets[ep]
        self.ep, self.t = ep, t
        self.flat = offsets[ep] + t
        self.remaining = (lengths[ep] - 1 - t).astype(np.int64)
        self.has_future = self.remaining >= 1


class ReplayBuffer:
    """Ring of complete episodes plus the relabeling sampler.

    Owns its RNG stream; all sampling is deterministic given the seed and the
    append order.
    """

    def __init__(self, capacity: int, rng: np.random.Generator):
        if capacity < 1:
            raise ValueError("capacity must be >= 1 episode")
        self.capacity = int(capacity)
        self.rng = rng
        self.episodes: list[Trajectory] = []
        self.total_steps = 0
        self._view: _FlatView | None = None

    def __len__(self) -> int:
        return len(self.episodes)

    def append(self, trajectory: Trajectory) -> None:
        if len(trajectory) == 0:
            raise EnvError("cannot append an empty trajectory")
        self.episodes.append(trajectory)
        self.total_steps += len(trajectory)
        if len(self.episodes) > self.capacity:
            evicted = self.episodes.pop(0)
            self.total_steps -= len(evicted)
        self._view = None

    def _flat(self) -> _FlatView:
        if not self.episodes:
            raise EnvError("buffer is empty")
        if self._view is None:
            self._view = _FlatView(self.episodes)
        return self._view

    # -- sampling ----------------------------------------------------------

    def sample_future_batch(self, batch_size: int, gamma: float) -> dict:
        """(s_t, a_t, goal = s_{t+d}) with truncated-geometric d >= 1.

        t is uniform over all valid (episode, t) pairs; d is sampled by
        inverse CDF of gamma^{k-1} renormalized over 1..L-1-t.
        """
        if batch_size < 1:
            raise EnvError("batch_size must be >= 1")
        view = self._flat()
        pool = np.flatnonzero(view.has_future)
        if pool.size == 0:
            raise EnvError("buffer has no episode long enough to sample from")
        pick = pool[self.rng.integers(0, pool.size, size=batch_size)]
        max_d = view.remaining[pick]
        u = self.rng.random(batch_size)
        if gamma <= 0.0:
            d = np.ones(batch_size, dtype=np.int64)
        else:
            # CDF(k) = (1 - gamma^k) / (1 - gamma^K); invert for k.
            scale = -np.expm1(max_d * np.log(gamma))          # 1 - gamma^K
            d = np.ceil(np.log1p(-u * scale) / np.log(gamma)).astype(np.int64)
            d = np.clip(d, 1, max_d)
        flat = view.flat[pick]
        return {
            "states": view.states[flat],
            "actions": view.actions[flat],
            "next_states": view.states[flat + 1],
            "goals": view.states[flat + d],
            "deltas": d,
        }

    def sample_transition_batch(self, batch_size: int) -> dict:
        """(s_t, a_t, s_{t+1}, commanded goal) for TD-style updates."""
        if batch_size < 1:
            raise EnvError("batch_size must be >= 1")
        view = self._flat()
        pool = np.flatnonzero(view.has_future)
        if pool.size == 0:
            raise EnvError("buffer has no episode long enough to sample from")
        pick = pool[self.rng.integers(0, pool.size, size=batch_size)]
        flat = view.flat[pick]
        return {
            "states": view.states[flat],
            "actions": view.actions[flat],
            "next_states": view.states[flat + 1],
            "goals": view.goals[view.ep[pick]],
        }

    def sample_step_goal_batch(self, batch_size: int) -> dict:
        """(s_t, a_t, commanded goal) pairs for posterior training."""
        view = self._flat()
        pick = self.rng.integers(0, len(view.flat), size=batch_size)
        flat = view.flat[pick]
        return {
            "states": view.states[flat],
            "actions": view.actions[flat],
            "goals": view.goals[view.ep[pick]],
        }

    def all_states(self, max_n: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform subsample (without replacement) of up to max_n stored states.

        Returned in buffer order so density argmin ties resolve to the
        earliest stored state.
        """
        stacked = self._flat().states
        if len(stacked) <= max_n:
            return stacked
        idx = np.sort(rng.choice(len(stacked), size=max_n, replace=False))
        return stacked[idx]

    def dump(self, path) -> None:
        save_trajectories(path, self.episodes)
