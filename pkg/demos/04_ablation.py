"""With and without the missingness variable, three seeds each."""
import logging

import numpy as np

from dive import experiments
from dive.evaluation import compare_ablations

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

results = experiments.desk_suite()
for full, ablated in zip(results["full"], results["no_missingness"]):
    print(f"seed {full.cfg.seed}")
    print(compare_ablations([full.report, ablated.report], ["full", "no_missingness"]).to_text())
    print()

ba = [r.report.missingness_balanced_accuracy for r in results["full"]]
print("missingness balanced accuracy per seed:", np.round(ba, 3), "median", round(float(np.median(ba)), 3))
