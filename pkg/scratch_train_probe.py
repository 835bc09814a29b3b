"""Scratch probe: hyperparameter comparison on grid-rooms."""
import sys
import time

import numpy as np

from cirl.crl import MaxEntConfig, train
from cirl.envs import build_grid_rooms
from cirl.explore import UniformSampler

variant = sys.argv[1]
budget = int(sys.argv[2]) if len(sys.argv) > 2 else 200_000

env = build_grid_rooms(gamma=0.9, horizon=40)
common = dict(alpha=1e-5, gamma=0.9, batch_size=128, num_updates=8)
cfgs = {
    "exp_h64": MaxEntConfig(learning_rate=3e-3, hidden=(64,), **common),
    "logratio_h64": MaxEntConfig(learning_rate=3e-3, hidden=(64,),
                                 actor_uses_log_ratio=True, **common),
    "exp_h6464": MaxEntConfig(learning_rate=3e-3, hidden=(64, 64), **common),
    "logratio_h6464": MaxEntConfig(learning_rate=3e-3, hidden=(64, 64),
                                   actor_uses_log_ratio=True, **common),
    "logratio_h64_lr1e2": MaxEntConfig(learning_rate=1e-2, hidden=(64,),
                                       actor_uses_log_ratio=True, **common),
    "exp_h64_lr1e2": MaxEntConfig(learning_rate=1e-2, hidden=(64,), **common),
}
cfg = cfgs[variant]
sampler = UniformSampler(env)

t0 = time.time()
learner, metrics = train(env, cfg, sampler, None, step_budget=budget, workers=8,
                         prefill_episodes=50, replay_capacity=2000, seed=0)
elapsed = time.time() - t0
succ = np.array([m["success_rate"] for m in metrics])
n = len(succ)
windows = " ".join(f"{succ[q * n // 8:(q + 1) * n // 8].mean():.2f}" for q in range(8))
print(f"{variant}: {elapsed:.0f}s  windows [{windows}]  tail {succ[3 * n // 4:].mean():.3f}")
