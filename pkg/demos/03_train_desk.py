"""Train one desk-scale model and look at what it learned.

Scenario 2, two digits, 1k sequences per epoch for 20 epochs: about ten
minutes on one CPU core. Runs are cached, so rerunning only evaluates.
"""
import logging

import numpy as np

from dive import experiments
from dive.data import read_dataset
from dive.render import render_sample
from dive.training import latest_checkpoint, load_checkpoint

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

cfg = experiments.desk_config(seed=0)
print("steps:", cfg.total_iterations, "batch:", cfg.batch_size)
result = experiments.run(cfg)

loss = result.nelbo_curve
print(f"per-pixel NELBO: first 100 steps {loss[:100].mean():.4f}, last 100 {loss[-100:].mean():.4f}")
print(f"smoothed drop from step 100 to the end: {result.smoothed_drop():.1%}")

r = result.report
print("reconstruction:", {k: round(v, 3) for k, v in r.rec.items()})
print("prediction:    ", {k: round(v, 3) for k, v in r.pred.items()})
print("missingness balanced accuracy:", round(r.missingness_balanced_accuracy, 3))
print(r.table_row("desk"))

# per-object decomposition for the first few test sequences
model, _, _, _ = load_checkpoint(latest_checkpoint(result.run_dir))
_, samples = read_dataset(experiments.frozen_test_set())
for i in range(3):
    print("wrote", render_sample(model, samples[i], result.run_dir / f"desk_sample{i}.png"))
    print("  true missing steps:", [np.flatnonzero(m).tolist() for m in samples[i].object_missing_mask])
