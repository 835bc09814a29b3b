"""Zero-shot imitation evaluation.

Expert generation (exact MaxEnt soft policies on tabular MDPs, trained
goal-conditioned policies elsewhere), per-demo imitation runs for every
method, imitation scores against the expert's hidden goal, and per-prefix
posterior traces. Evaluation never updates parameters; run_eval asserts this
with a parameter hash.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import baselines, infer, oracle
from .crl import Learner, episode_success, make_codec, rollout_wave
from .envs import EnvError, Trajectory, is_tabular
from .infer import GoalPosterior, aggregate, map_goal

EVAL_METHODS = ("cirl_meanfield", "cirl_fulltau", "cirl_laststate",
                "cirl_truegoal", "nn_baseline", "fb_analytic")


@dataclass
class EvalRecord:
    method: str
    demo_id: int
    goal_true: object
    goal_inferred: object
    score: float
    success: bool
    flagged: bool = False        # expert return was zero; score undefined


@dataclass
class EvalReport:
    method: str
    records: list[EvalRecord] = field(default_factory=list)

    @property
    def scores(self) -> np.ndarray:
        return np.array([r.score for r in self.records if not r.flagged])

    @property
    def mean_score(self) -> float:
        s = self.scores
        return float(s.mean()) if s.size else float("nan")

    @property
    def std_score(self) -> float:
        s = self.scores
        return float(s.std()) if s.size else float("nan")

    @property
    def success_rate(self) -> float:
        return float(np.mean([r.success for r in self.records]))


@dataclass
class Artifacts:
    """Trained networks needed by the evaluation methods."""

    learner: Learner
    posterior_mf: GoalPosterior | None = None
    posterior_ft: GoalPosterior | None = None

    def param_arrays(self) -> dict[str, np.ndarray]:
        arrays = dict(self.learner.param_arrays())
        if self.posterior_mf is not None:
            arrays["posterior.head"] = self.posterior_mf.head.params
        if self.posterior_ft is not None:
            arrays["posterior_ft.head"] = self.posterior_ft.head.params
            arrays["posterior_ft.feature"] = self.posterior_ft.feature_net.params
        return arrays


def episode_return(env, traj: Trajectory, goal) -> float:
    """Undiscounted per-step success indicator summed over the episode."""
    states = np.asarray(traj.states)
    if is_tabular(env):
        return float(np.sum(states == int(goal)))
    dists = np.linalg.norm(states - np.asarray(goal), axis=1)
    return float(np.sum(dists < env.goal_radius))


def imitation_score(expert_return: float, agent_return: float) -> float:
    """Agent return over expert return on the expert's hidden goal."""
    if expert_return == 0.0:
        raise ZeroDivisionError("expert return is zero; score undefined")
    return agent_return / expert_return


# ---------------------------------------------------------------------------
# Expert demonstrations


def make_experts(env, n_demos: int, expert_source: str, rng: np.random.Generator,
                 *, expert_alpha: float = 0.05, learner: Learner | None = None,
                 test_dist: dict | None = None,
                 success_gate: float = 0.9) -> list[Trajectory]:
    """Demo set labeled with true goals (held out from the imitator).

    oracle_maxent (tabular): exact finite-horizon MaxEnt soft policy per goal
    at temperature expert_alpha. crl_oracle_goals: rollouts of a trained
    goal-conditioned policy; rejected unless the demo success rate clears the
    gate.
    """
    from .explore import sample_goal_oracle

    if n_demos == 0:
        return []
    test_dist = test_dist or {"kind": "uniform"}
    goals = [sample_goal_oracle(test_dist, env, rng) for _ in range(n_demos)]
    if expert_source == "oracle_maxent":
        if not is_tabular(env):
            raise EnvError("oracle_maxent experts need a tabular MDP")
        solutions: dict[int, oracle.OracleSolution] = {}
        demos = []
        for g in goals:
            if g not in solutions:
                solutions[g] = oracle.soft_value_iteration(env, g, expert_alpha)
            demos += oracle.sample_soft_trajectories(env, solutions[g], 1, rng)
        return demos
    if expert_source == "crl_oracle_goals":
        if learner is None:
            raise EnvError("crl_oracle_goals experts need a trained learner")
        codec = learner.codec
        demos = []
        for i in range(0, n_demos, 50):
            demos += rollout_wave(env, codec, learner.policy, goals[i:i + 50], rng)
        reached = np.mean([episode_success(env, d) for d in demos])
        if reached < success_gate:
            raise EnvError(
                f"expert too weak: demo success {reached:.2f} < gate {success_gate}")
        return demos
    raise EnvError(f"unknown expert source {expert_source!r}")


# ---------------------------------------------------------------------------
# Method rollouts


def _nn_rollout(env, demo: Trajectory, rng: np.random.Generator) -> Trajectory:
    policy = baselines.nn_policy_from_demo(demo, env)
    s = env.sample_initial(rng)
    states, actions = [s], []
    for _ in range(env.horizon):
        a = baselines.nn_act(policy, s)
        actions.append(a)
        s = env.step(s, a, rng)
        states.append(s)
    actions.append(baselines.nn_act(policy, s))
    return Trajectory(np.array(states), np.array(actions), env_id=env.name)


def _fb_rollout(env, demo: Trajectory, rng: np.random.Generator,
                fb_mode: str) -> Trajectory:
    occupancy_weighted = fb_mode == "discounted"
    reward = baselines.fb_infer_reward(demo.states, env.n_states,
                                       occupancy_weighted=occupancy_weighted,
                                       gamma=env.discount)
    greedy = baselines.fb_imitate(env, reward)
    s = env.sample_initial(rng)
    states, actions = [s], []
    for _ in range(env.horizon):
        a = int(greedy[s])
        actions.append(a)
        s = env.step(s, a, rng)
        states.append(s)
    actions.append(int(greedy[s]))
    return Trajectory(np.array(states), np.array(actions), env_id=env.name)


def _infer_goals(method: str, env, demos, artifacts: Artifacts, prior):
    codec = artifacts.learner.codec
    goals = []
    for demo in demos:
        if method == "cirl_meanfield":
            agg = aggregate(artifacts.posterior_mf, codec, demo, prior=prior)
            goals.append(map_goal(agg))
        elif method == "cirl_fulltau":
            agg = aggregate(artifacts.posterior_ft, codec, demo, prior=prior)
            goals.append(map_goal(agg))
        elif method == "cirl_laststate":
            g = demo.states[-1]
            goals.append(int(g) if is_tabular(env) else np.asarray(g, dtype=float))
        elif method == "cirl_truegoal":
            goals.append(demo.commanded_goal)
        else:
            raise EnvError(f"method {method} does not infer goals")
    return goals


def run_eval(method: str, env, demos: list[Trajectory], artifacts: Artifacts,
             seed: int = 0, prior: np.ndarray | None = None,
             fb_mode: str = "discounted") -> EvalReport:
    """Zero-shot evaluation of one method over a demo set.

    Every record is (inferred goal, imitation score on the true goal, success
    flag); no parameter updates happen (asserted by hashing parameters before
    and after). Deterministic given the seed.
    """
    if method not in EVAL_METHODS:
        raise EnvError(f"unknown method {method!r}; choose from {EVAL_METHODS}")
    if method == "fb_analytic" and not is_tabular(env):
        raise EnvError("fb_analytic runs on tabular environments only")
    if method == "cirl_meanfield" and artifacts.posterior_mf is None:
        raise EnvError("cirl_meanfield needs a trained mean-field posterior")
    if method == "cirl_fulltau" and artifacts.posterior_ft is None:
        raise EnvError("cirl_fulltau needs a trained full-trajectory posterior")
    before = _param_hash(artifacts)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 17)))
    codec = artifacts.learner.codec

    if method in ("nn_baseline", "fb_analytic"):
        rollouts = []
        for demo in demos:
            rollouts.append(_nn_rollout(env, demo, rng) if method == "nn_baseline"
                            else _fb_rollout(env, demo, rng, fb_mode))
        inferred = [None] * len(demos)
    else:
        inferred = _infer_goals(method, env, demos, artifacts, prior)
        rollouts = []
        for i in range(0, len(demos), 50):
            rollouts += rollout_wave(env, codec, artifacts.learner.policy,
                                     inferred[i:i + 50], rng)

    report = EvalReport(method=method)
    for i, (demo, rollout) in enumerate(zip(demos, rollouts)):
        true_goal = demo.commanded_goal
        expert_ret = episode_return(env, demo, true_goal)
        agent_ret = episode_return(env, rollout, true_goal)
        flagged = expert_ret == 0.0
        score = float("nan") if flagged else imitation_score(expert_ret, agent_ret)
        report.records.append(EvalRecord(
            method=method, demo_id=i, goal_true=true_goal,
            goal_inferred=inferred[i], score=score,
            success=episode_success(env, rollout, true_goal), flagged=flagged))
    if _param_hash(artifacts) != before:
        raise RuntimeError("zero-shot contract violated: parameters changed")
    return report


def _param_hash(artifacts: Artifacts) -> str:
    h = hashlib.sha256()
    for name in sorted(artifacts.param_arrays()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(artifacts.param_arrays()[name]).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Posterior traces (per-prefix records)


def posterior_trace(posterior: GoalPosterior, codec, demo: Trajectory,
                    prior: np.ndarray | None = None, top_k: int = 5) -> list[dict]:
    """Aggregated posterior after each prefix length 1..len(demo)."""
    rows = []
    for t in range(1, len(demo) + 1):
        prefix = Trajectory(demo.states[:t], demo.actions[:t],
                            commanded_goal=demo.commanded_goal)
        agg = aggregate(posterior, codec, prefix, prior=prior)
        if agg.kind == "gaussian":
            row = {"t": t}
            for j in range(len(agg.mean)):
                row[f"mu_{j}"] = float(agg.mean[j])
                row[f"var_{j}"] = float(agg.var[j])
        else:
            order = np.argsort(-agg.probs)[:top_k]
            row = {"t": t}
            for k, g in enumerate(order):
                row[f"top{k + 1}"] = int(g)
                row[f"p_top{k + 1}"] = float(agg.probs[g])
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# Report serialization (CSV rows per (method, demo))


def _goal_fields(prefix: str, goal, tabular: bool) -> dict:
    if goal is None:
        return {}
    if tabular:
        return {prefix: int(goal)}
    g = np.atleast_1d(goal)
    return {f"{prefix}_{j}": repr(float(v)) for j, v in enumerate(g)}


def report_rows(reports: list[EvalReport], env) -> tuple[list[str], list[dict]]:
    tabular = is_tabular(env)
    rows = []
    for report in reports:
        for r in report.records:
            row = {"method": r.method, "demo_id": r.demo_id}
            row.update(_goal_fields("goal_true", r.goal_true, tabular))
            row.update(_goal_fields("goal_inferred", r.goal_inferred, tabular))
            row["score"] = "" if r.flagged else repr(float(r.score))
            row["success"] = int(r.success)
            rows.append(row)
    header: list[str] = []
    for row in rows:
        for key in row:
            if key not in header:
                header.append(key)
    return header, rows


def write_csv(path, header: list[str], rows: list[dict]) -> None:
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(str(row.get(k, "")) for k in header) + "\n")
