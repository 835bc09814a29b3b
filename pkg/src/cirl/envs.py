"""Goal-conditioned environments.

Two families: exact tabular MDPs (a configurable builder, the 2-state
absorbing counterexample, and a four-rooms grid world) and a continuous 2-D
point mass in a clamped box. Goals live in the state space; the reward is the
scaled probability of landing on the goal next step (tabular) or a success
ball around it (continuous).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class EnvError(ValueError):
    """Invalid environment input (bad index, bad parameter, mismatched env)."""


# ---------------------------------------------------------------------------
# Tabular MDPs


@dataclass
class TabularMDP:
    """Finite goal-conditioned MDP with explicit transition tensor.

    transition[s, a, s'] are next-state probabilities, initial_dist is the
    start distribution, and goals are state indices. state_coords embeds each
    state as a low-dimensional vector (grid cells use (row, col)); it feeds
    the KDE sampler and distance-based diagnostics.
    """

    transition: np.ndarray
    initial_dist: np.ndarray
    discount: float
    horizon: int
    state_coords: np.ndarray = None
    name: str = "tabular"

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.initial_dist = np.asarray(self.initial_dist, dtype=np.float64)
        if self.transition.ndim != 3 or self.transition.shape[0] != self.transition.shape[2]:
            raise EnvError(f"transition must be (S, A, S), got {self.transition.shape}")
        rowsums = self.transition.sum(axis=2)
        if np.max(np.abs(rowsums - 1.0)) > 1e-12:
            raise EnvError("transition rows must sum to 1 within 1e-12")
        if np.any(self.transition < 0.0):
            raise EnvError("transition probabilities must be non-negative")
        if abs(self.initial_dist.sum() - 1.0) > 1e-12 or np.any(self.initial_dist < 0):
            raise EnvError("initial_dist must be a distribution")
        if not (0.0 < self.discount < 1.0):
            raise EnvError(f"discount must be in (0, 1), got {self.discount}")
        if self.horizon < 1:
            raise EnvError(f"horizon must be positive, got {self.horizon}")
        if self.state_coords is None:
            self.state_coords = np.arange(self.n_states, dtype=np.float64)[:, None]
        else:
            self.state_coords = np.asarray(self.state_coords, dtype=np.float64)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def n_goals(self) -> int:
        return self.n_states

    def reward_table(self) -> np.ndarray:
        """r[s, a, g] = (1 - gamma) * P[s, a, g]."""
        return (1.0 - self.discount) * self.transition

    def goal_reward(self, state: int, action: int, next_state: int, goal: int) -> float:
        return (1.0 - self.discount) * self.transition[state, action, goal]

    def step(self, state: int, action: int, rng: np.random.Generator) -> int:
        if not (0 <= state < self.n_states and 0 <= action < self.n_actions):
            raise EnvError(f"invalid (state, action) = ({state}, {action})")
        return int(rng.choice(self.n_states, p=self.transition[state, action]))

    def step_batch(self, states: np.ndarray, actions: np.ndarray,
                   rng: np.random.Generator) -> np.ndarray:
        probs = self.transition[states, actions]         # (W, S)
        u = rng.random(len(states))[:, None]
        idx = (probs.cumsum(axis=1) < u).sum(axis=1)
        return np.minimum(idx, self.n_states - 1)

    def sample_initial(self, rng: np.random.Generator) -> int:
        return int(rng.choice(self.n_states, p=self.initial_dist))

    def success(self, state: int, goal: int) -> bool:
        return int(state) == int(goal)


def build_counterexample_mdp(gamma: float, horizon: int = 8) -> TabularMDP:
    """Two-state MDP where visitation frequency and intent disagree.

    From s1, action a1 stays put; action a2 moves to the absorbing state s2
    with probability 1/2. Starts at s1 with certainty.
    """
    if not (0.0 < gamma < 1.0):
        raise EnvError(f"gamma must be in (0, 1), got {gamma}")
    P = np.zeros((2, 2, 2))
    P[0, 0, 0] = 1.0
    P[0, 1, 0] = 0.5
    P[0, 1, 1] = 0.5
    P[1, 0, 1] = 1.0
    P[1, 1, 1] = 1.0
    return TabularMDP(
        transition=P,
        initial_dist=np.array([1.0, 0.0]),
        discount=gamma,
        horizon=horizon,
        state_coords=np.array([[0.0], [1.0]]),
        name="counterexample",
    )


GRID_ACTIONS = ((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1))  # stay, up, down, left, right


def build_grid_rooms(
    gamma: float = 0.9,
    horizon: int = 40,
    size: int = 11,
    slip: float = 0.1,
    wall_row: int = 5,
    wall_col: int = 5,
    start_cell: tuple[int, int] = (1, 1),
) -> TabularMDP:
    """Four-rooms grid: walls along one row and one column with four doorways.

    Actions are stay/up/down/left/right; with probability `slip` the executed
    action is replaced by a uniformly random one. Moves into walls or off the
    grid leave the state unchanged. Start is a fixed cell so that coverage is
    an actual exploration problem.
    """
    if not (0.0 < gamma < 1.0):
        raise EnvError(f"gamma must be in (0, 1), got {gamma}")
    if not (0.0 <= slip <= 1.0):
        raise EnvError(f"slip must be in [0, 1], got {slip}")
    walls = np.zeros((size, size), dtype=bool)
    walls[wall_row, :] = True
    walls[:, wall_col] = True
    # One doorway per wall segment, at the segment midpoint.
    for c in (wall_col // 2, wall_col + (size - wall_col) // 2):
        walls[wall_row, c] = False
    for r in (wall_row // 2, wall_row + (size - wall_row) // 2):
        walls[r, wall_col] = False

    cells = [(r, c) for r in range(size) for c in range(size) if not walls[r, c]]
    index = {cell: i for i, cell in enumerate(cells)}
    if start_cell not in index:
        raise EnvError(f"start cell {start_cell} is a wall")
    n = len(cells)

    def move(cell, delta):
        r, c = cell[0] + delta[0], cell[1] + delta[1]
        if not (0 <= r < size and 0 <= c < size) or walls[r, c]:
            return cell
        return (r, c)

    n_act = len(GRID_ACTIONS)
    P = np.zeros((n, n_act, n))
    for cell, s in index.items():
        landings = [index[move(cell, d)] for d in GRID_ACTIONS]
        for a in range(n_act):
            P[s, a, landings[a]] += 1.0 - slip
            for a2 in range(n_act):
                P[s, a, landings[a2]] += slip / n_act
    rho0 = np.zeros(n)
    rho0[index[start_cell]] = 1.0
    coords = np.array(cells, dtype=np.float64)
    return TabularMDP(
        transition=P,
        initial_dist=rho0,
        discount=gamma,
        horizon=horizon,
        state_coords=coords,
        name="grid_rooms",
    )


# ---------------------------------------------------------------------------
# Continuous point mass


@dataclass
class PointMassEnv:
    """2-D point mass in [-1, 1]^2 with clamped noisy position dynamics."""

    action_max: float = 0.1
    dyn_noise: float = 0.005
    goal_radius: float = 0.05
    horizon: int = 100
    discount: float = 0.95
    name: str = "point_mass"

    def __post_init__(self):
        if not (0.0 < self.discount < 1.0):
            raise EnvError(f"discount must be in (0, 1), got {self.discount}")
        if self.action_max <= 0 or self.goal_radius <= 0 or self.dyn_noise < 0:
            raise EnvError("action_max and goal_radius must be positive, dyn_noise >= 0")

    @property
    def state_dim(self) -> int:
        return 2

    def step(self, state: np.ndarray, action: np.ndarray,
             rng: np.random.Generator) -> np.ndarray:
        state = np.asarray(state, dtype=np.float64)
        action = np.clip(np.asarray(action, dtype=np.float64),
                         -self.action_max, self.action_max)
        if state.shape[-1] != 2 or action.shape[-1] != 2:
            raise EnvError("point-mass states and actions are 2-D")
        noise = rng.normal(0.0, self.dyn_noise, size=state.shape) if self.dyn_noise > 0 \
            else np.zeros_like(state)
        return np.clip(state + action + noise, -1.0, 1.0)

    def sample_initial(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, size=2)

    def goal_reward(self, state, action, next_state, goal) -> float:
        hit = np.linalg.norm(np.asarray(next_state) - np.asarray(goal)) < self.goal_radius
        return (1.0 - self.discount) * float(hit)

    def success(self, state, goal) -> bool:
        return bool(np.linalg.norm(np.asarray(state) - np.asarray(goal)) < self.goal_radius)


def step(env, state, action, rng: np.random.Generator):
    """Dispatching step shared by both env families."""
    return env.step(state, action, rng)


def goal_reward(env, state, action, next_state, goal) -> float:
    return env.goal_reward(state, action, next_state, goal)


def is_tabular(env) -> bool:
    return isinstance(env, TabularMDP)


# ---------------------------------------------------------------------------
# Trajectories


@dataclass
class Trajectory:
    """Rollout record: equal-length state and action sequences.

    The final action is sampled at the final state but its outcome is not
    recorded, so |states| == |actions| always holds.
    """

    states: np.ndarray
    actions: np.ndarray
    commanded_goal: object = None
    env_id: str = ""

    def __post_init__(self):
        self.states = np.asarray(self.states)
        self.actions = np.asarray(self.actions)
        if len(self.states) == 0:
            raise EnvError("trajectory must be nonempty")
        if len(self.states) != len(self.actions):
            raise EnvError(
                f"|states| = {len(self.states)} != |actions| = {len(self.actions)}"
            )

    def __len__(self) -> int:
        return len(self.states)


def rollout_tabular(mdp: TabularMDP, policy_fn, goal: int,
                    rng: np.random.Generator, start: int | None = None) -> Trajectory:
    """Roll one episode; policy_fn(t, state, rng) -> action index."""
    s = mdp.sample_initial(rng) if start is None else int(start)
    states, actions = [s], []
    for t in range(mdp.horizon):
        a = int(policy_fn(t, s, rng))
        actions.append(a)
        s = mdp.step(s, a, rng)
        states.append(s)
    actions.append(int(policy_fn(mdp.horizon, s, rng)))
    return Trajectory(np.array(states), np.array(actions),
                      commanded_goal=goal, env_id=mdp.name)


# ---------------------------------------------------------------------------
# Line-oriented trajectory serialization: one row per step with columns
# episode_id, t, state..., action..., goal...


def _columns(traj: Trajectory) -> tuple[list[str], list[str], list[str]]:
    if traj.states.ndim == 1:
        return ["state"], ["action"], ["goal"]
    sd = traj.states.shape[1]
    ad = traj.actions.shape[1]
    gd = len(np.atleast_1d(traj.commanded_goal))
    return (
        [f"state_{i}" for i in range(sd)],
        [f"action_{i}" for i in range(ad)],
        [f"goal_{i}" for i in range(gd)],
    )


def _fmt(value) -> str:
    if np.issubdtype(np.asarray(value).dtype, np.integer):
        return str(int(value))
    return repr(float(value))


def save_trajectories(path, trajectories: list[Trajectory]) -> None:
    if not trajectories:
        raise EnvError("nothing to save")
    scols, acols, gcols = _columns(trajectories[0])
    with open(path, "w") as f:
        f.write(",".join(["episode_id", "t"] + scols + acols + gcols) + "\n")
        for ep, traj in enumerate(trajectories):
            goal = np.atleast_1d(traj.commanded_goal)
            for t in range(len(traj)):
                row = [str(ep), str(t)]
                row += [_fmt(v) for v in np.atleast_1d(traj.states[t])]
                row += [_fmt(v) for v in np.atleast_1d(traj.actions[t])]
                row += [_fmt(v) for v in goal]
                f.write(",".join(row) + "\n")


def load_trajectories(path) -> list[Trajectory]:
    with open(path) as f:
        header = f.readline().strip().split(",")
        rows = [line.strip().split(",") for line in f if line.strip()]
    if header[:2] != ["episode_id", "t"]:
        raise EnvError(f"{path}: not a trajectory file (header {header[:2]})")
    scols = [i for i, h in enumerate(header) if h == "state" or h.startswith("state_")]
    acols = [i for i, h in enumerate(header) if h == "action" or h.startswith("action_")]
    gcols = [i for i, h in enumerate(header) if h == "goal" or h.startswith("goal_")]
    tabular = header[scols[0]] == "state"
    episodes: dict[int, list] = {}
    for row in rows:
        episodes.setdefault(int(row[0]), []).append(row)
    out = []
    for ep in sorted(episodes):
        rows_ep = sorted(episodes[ep], key=lambda r: int(r[1]))
        if tabular:
            states = np.array([int(float(r[scols[0]])) for r in rows_ep])
            actions = np.array([int(float(r[acols[0]])) for r in rows_ep])
            goal = int(float(rows_ep[0][gcols[0]]))
        else:
            states = np.array([[float(r[i]) for i in scols] for r in rows_ep])
            actions = np.array([[float(r[i]) for i in acols] for r in rows_ep])
            goal = np.array([float(rows_ep[0][i]) for i in gcols])
        out.append(Trajectory(states, actions, commanded_goal=goal))
    return out
