"""Training state machines: latest averaging and the FedAvg-family baselines."""

from .aggregation import LatestAverage, exact_mean
from .baselines import (
    fedavg_round,
    fedprox_local_step,
    fedsgd_step,
    pooled_sgd_step,
    seqsgd_round,
    seqsgd_steps_per_round,
)
from .fedlaavg import (
    ClientCache,
    FedLaAvgTrace,
    ServerState,
    fedlaavg_round,
    fedlaavg_round_reference,
    fedlaavg_step,
    init_fedlaavg,
    local_update,
    run_fedlaavg,
)
from .selection import InsufficientAvailable, SelectionOutcome, select_latest, select_uniform

__all__ = [
    "ClientCache",
    "FedLaAvgTrace",
    "InsufficientAvailable",
    "LatestAverage",
    "SelectionOutcome",
    "ServerState",
    "exact_mean",
    "fedavg_round",
    "fedlaavg_round",
    "fedlaavg_round_reference",
    "fedlaavg_step",
    "fedprox_local_step",
    "fedsgd_step",
    "init_fedlaavg",
    "local_update",
    "pooled_sgd_step",
    "run_fedlaavg",
    "select_latest",
    "select_uniform",
    "seqsgd_round",
    "seqsgd_steps_per_round",
]
