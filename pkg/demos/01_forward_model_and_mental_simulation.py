"""Babble with the arm, learn a forward model, then let it imagine ten steps ahead.

Run from the repository root:

    python3 demos/01_forward_model_and_mental_simulation.py
"""

from pathlib import Path

import numpy as np

from armcausal import models, nn, report
from armcausal.sim import BabbleConfig, run_session

out = Path("demo_output/forward")

# Motor babbling: the arm picks random joint targets and we record what it
# actually reached.  Eight thousand transitions keep this under a minute.
kin = run_session(BabbleConfig(mode="kinematics", steps=8000, seed=0))
print(len(kin), "transitions, state", kin.state_schema.labels)
print("largest |theta' - theta - a|:", kin.joint_identity_error())

fm = models.build_fm(kin.state_schema, kin.action_schema, seed=0)
fm, cv = models.train_fm(fm, kin, nn.TrainConfig(epochs=30, batch_size=128), nn.OptimizerConfig(), kfold=3)
for head, mae in cv.mean().items():
    print(f"cross-validated {head:18s} MAE {mae:.4f}")

# A fresh session the model has never seen, cut into 10-step windows.
fresh = run_session(BabbleConfig(mode="kinematics", steps=2000, seed=1))
states, actions = models.trajectories_from_set(fresh, 10)
result = models.eval_rollout(fm, states, actions, 10)

print("\nsteps ahead   joints MAE   effector MAE")
for t in range(10):
    print(f"{t + 1:>11d}   {result.mean['joints'][t]:.5f}      {result.mean['effector'][t]:.5f}")

growth = result.mean["joints"][-1] / result.mean["joints"][0]
print(f"\nerror after 10 imagined steps is {growth:.1f}x the one-step error")

report.write_rollout(out, result)
print("wrote", out / "rollout.csv", "and", out / "rollout.svg")

# One trajectory in detail: the imagined effector path against the real one.
imagined = models.mental_rollout(fm, states[0, 0], actions[0])
real = states[0, 1:]
eff = kin.state_schema.slice_of("effector")
print("\nimagined vs real effector position (m):")
print(np.round(np.hstack([imagined[:, eff], real[:, eff]]), 3))
