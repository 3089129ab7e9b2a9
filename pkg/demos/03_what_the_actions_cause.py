"""Shapley attributions on the magnet-and-cube forward model.

The arm babbles with a magnetic end effector near a coloured cube.  After a
forward model has learned the dynamics, Deep SHAP measures how much each
action feature moved each predicted state feature.  Nothing the arm does can
change the cube's colour, and joint 6 is never commanded, so both should show
up as (near) zero.
"""

from pathlib import Path

import numpy as np

from armcausal import attribution as attr
from armcausal import models, nn, report
from armcausal.sim import BabbleConfig, run_session

out = Path("demo_output/explain")

phys = run_session(BabbleConfig(mode="physics", episodes=20, iterations=500, max_joint_speed=0.05, seed=0))
print(len(phys), "transitions;", int(np.count_nonzero(phys.A[:, -1])), "magnet switches")

fm = models.build_fm(phys.state_schema, phys.action_schema, seed=0)
fm, _ = models.train_fm(fm, phys, nn.TrainConfig(epochs=40, batch_size=256), nn.OptimizerConfig(), kfold=None)
print({k: round(v, 4) for k, v in models.fm_mae(fm, phys).items()})

X = np.hstack([phys.S, phys.A])
instances = X[attr.sample_rows(len(X), 200, seed=0)]
background = X[attr.sample_rows(len(X), 100, seed=1)]
tensor = attr.attribute_dataset(fm, instances, background, method="deep")
importance = attr.aggregate_global(tensor)
relevance = attr.relevance_report(importance, threshold_fraction=0.02)

peak = importance.matrix.max()
print("\nlargest action -> state contributions")
order = np.argsort(-importance.matrix, axis=None)[:8]
for r, c in zip(*np.unravel_index(order, importance.matrix.shape)):
    print(f"  {importance.row_labels[r]:>6s} -> {importance.col_labels[c]:<8s} {importance.matrix[r, c]:.4f}")

print("\nstate features no action reaches (prunable):", [r.feature for r in relevance if r.prunable])
print("a_6 row max / peak:", round(importance.matrix[importance.row_labels.index("a_6")].max() / peak, 4))

oz = importance.col_labels.index("o_z")
ranking = [importance.row_labels[i] for i in np.argsort(-importance.matrix[:, oz])]
print("who moves the cube up and down (o_z):", ranking[:3])

pdp = attr.pdp_series(tensor, "a_mgt", "o_z")
on = np.abs(pdp.phi[pdp.values != 0])
print("|phi| when the magnet switches:", np.round(on, 3), " median when idle:", np.median(np.abs(pdp.phi[pdp.values == 0])))

report.write_explain(out, tensor, importance, relevance)
print("\nwrote heat map, PDPs and CSVs to", out)
