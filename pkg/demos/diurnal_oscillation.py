"""
Day and night on a label-skewed logistic task
=============================================

Fifty clients each hold a single digit-like class. Clients holding class 0
are online in even blocks of ten rounds, everyone else in odd blocks. FedAvg
chases whichever group is online; latest averaging does not.
"""

import numpy as np

from fedsim.harness import config_from_dict, run_experiment

base = {
    "clients": 50, "select_frac": 0.1, "local_iters": 10, "rounds": 200, "lr": 0.05, "seed": 0,
    "objective": {"kind": "logistic"},
    "availability": {"kind": "diurnal", "block_len": 10, "D": 1},
}

curves = {}
for algorithm in ("fedavg", "fedlaavg", "fedprox"):
    trace = run_experiment(config_from_dict({**base, "algorithm": algorithm}), write=False)
    curves[algorithm] = np.array([r.train_loss for r in trace.records])

print("round  " + "  ".join(f"{a:>9}" for a in curves))
for r in range(9, 200, 10):
    print(f"{r + 1:5d}  " + "  ".join(f"{c[r]:9.4f}" for c in curves.values()))

for algorithm, c in curves.items():
    tail = c[-60:]
    print(f"{algorithm:>9}: last-60 mean {tail.mean():.4f}, std {tail.std():.4f}")
