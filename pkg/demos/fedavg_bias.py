"""
Why plain averaging drifts under intermittent availability
==========================================================

Two clients with quadratic losses centered at 0 and 1. Client 1 is online for
two steps, then client 2 for one, over and over. The pooled optimum is 0.5.
"""

import numpy as np

from fedsim.algorithms import fedavg_round, run_fedlaavg
from fedsim.analysis import fedavg_fixed_point, fedavg_limit_point
from fedsim.availability import Alternating
from fedsim.objectives import QuadraticProblem

problem = QuadraticProblem((0.0, 1.0))
schedule = Alternating(2, 1, {1}, {2})
gamma = 0.1

# FedAvg: average whatever the online clients send
x = problem.initial_params()
for r in range(1, 601):
    x, _ = fedavg_round(x, schedule.available(r), problem, gamma, K=1, C=1, seed=0, r=r)
print("FedAvg after 600 steps:", x[0])
print("closed-form fixed point:", fedavg_fixed_point(0.0, 1.0, 2, 1, gamma))
print("small-rate limit:", fedavg_limit_point(0.0, 1.0, 2, 1))

# the limit is the availability-weighted mean, not the optimum
for g in (0.1, 0.01, 0.001):
    print(f"  gamma={g:<6} X={fedavg_fixed_point(0.0, 1.0, 2, 1, g):.6f}")

# latest averaging keeps the absent client's last gradient in the mix
T = 1600
trace = run_fedlaavg(problem, schedule, 1, 1 / (2 * np.sqrt(T)), T, seed=0)
errors = [(p[0] - 0.5) ** 2 for p in trace.params]
print("FedLaAvg best squared error over", T, "steps:", min(errors))
print("FedLaAvg final iterate:", trace.params[-1][0])
