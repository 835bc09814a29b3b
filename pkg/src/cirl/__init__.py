"""Goal-conditioned self-supervised pretraining with amortized goal inference
for zero-shot imitation, plus exact tabular oracles and analytic baselines."""

__version__ = "0.1.0"
