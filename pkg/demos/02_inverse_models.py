"""Why the inverse model needs theta(t+1).

Three networks infer the action that took the arm from s(t) to s(t+1):

* a monolithic net that only sees the states (joint angles stripped from s(t+1)),
* a base net that is also given the true theta(t+1),
* an assembly where a pre-network guesses theta(t+1) for the base net.

Then the base net's theta(t+1) input is replaced by zeros or by random
values to see how much it leans on that input.
"""

import numpy as np

from armcausal import dataset as ds
from armcausal import models, nn
from armcausal.sim import BabbleConfig, run_session

kin = run_session(BabbleConfig(mode="kinematics", steps=8000, seed=0))
train, test = ds.split(kin, 0.2, seed=0)

cfg = nn.TrainConfig(epochs=25, batch_size=128)
adamw = nn.OptimizerConfig(kind="adamw", eta=1e-3, weight_decay=0.004)
adam = nn.OptimizerConfig()

mono, _ = models.train_im_monolithic(train, cfg, adamw, hidden=(256, 256))
pre, _ = models.train_pre_network(train, cfg, adamw, hidden=(256, 256))
base, _ = models.train_base_im(train, cfg, adam)
assembly = models.assemble(pre, base)

rows = {
    "base (true theta')": models.im_mae(base, test)["joint_action"],
    "assembly (pre-network)": models.assembly_mae(assembly, test)["joint_action"],
    "monolithic": models.im_mae(mono, test)["joint_action"],
    "base, theta' = 0": models.eval_theta_substitution(base, test, "zeros")["joint_action"],
    "base, theta' sampled": models.eval_theta_substitution(base, test, "sampled", seed=0, reference=train)["joint_action"],
}
print("held-out joint action MAE (rad)")
for name, mae in rows.items():
    print(f"  {name:24s} {mae:.5f}")

print("\npre-network theta(t+1) MAE:", round(models.im_mae(pre, test)["theta_next"], 5))
print("mean |a| on the test split:", round(float(np.abs(test.A).mean()), 5))
