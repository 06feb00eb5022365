"""
Evaluating the convergence bounds
=================================

The bound evaluators are plain functions of the problem constants. Here they
are evaluated on a few settings, and the automatic learning rate is resolved.
"""

from fedsim.analysis import staleness_bound, theorem2_bound, theorem3_terms, theorem4_terms
from fedsim.core import BoundInputs, RunConfig, resolve_learning_rate

print("staleness for N=1000, K=100, E=100:", staleness_bound(1000, 100, 100))

for T in (100, 400, 1600, 6400):
    print(f"two-client bound at T={T}: {theorem2_bound(T, I=2, G=1.0, B0=0.25):.5f}")

inputs = BoundInputs(L=1.0, G=2.0, sigma=1.0, B=1.0, N=4, T=100, gamma=0.1, I=3)
terms = theorem3_terms(inputs)
for name, value in terms.items():
    print(f"  {name:>20}: {value:.4f}")
print("  sum:", sum(terms.values()))

print("round mode:", theorem4_terms(BoundInputs(L=1.0, G=1.0, N=1, R=50, C=2, gamma=0.1, I=1, B=1.0)))

config = RunConfig(
    algorithm="fedlaavg", num_clients=1000, select_frac=0.1, local_iters=1, rounds=10**6,
    learning_rate="auto", objective={"kind": "quadratic", "means": [0, 1]}, availability={"kind": "always_on"},
)
print("auto learning rate:", resolve_learning_rate(config, BoundInputs(L=1.0, E=100)))
