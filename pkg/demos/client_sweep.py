"""
Sweeping the number of clients
==============================

A sweep varies one axis of a base config across values and seeds and writes a
CSV summary. Here the same total data is split across more and more clients.
Set FEDSIM_THREADS to control parallelism.
"""

import sys

from fedsim.harness import SweepSpec, config_from_dict, run_sweep, summary_csv

base = config_from_dict({
    "algorithm": "fedlaavg", "clients": 40, "select_frac": 0.1, "local_iters": 10, "rounds": 120,
    "lr": 0.03, "seed": 0, "batch_size": 1,
    "objective": {"kind": "logistic", "total_samples": 8000, "sample_sigma": 1.5},
    "availability": {"kind": "diurnal", "block_len": 10, "D": 1},
})

spec = SweepSpec(base, "N", (40, 80, 160), seeds=(0, 1), target_loss=1.1)
rows = run_sweep(spec)
sys.stdout.write(summary_csv(rows))
