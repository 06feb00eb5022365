"""FedAvg, FedSGD, FedProx and sequential SGD baselines.

Baselines hold no per-client state on the server: each call takes the current
global parameters and returns the new ones. Clients are drawn uniformly from
the available set; since local objectives are already rescaled by ``w_i N``,
the selected clients' updates are averaged with equal weights.
"""

from __future__ import annotations

import numpy as np

from ..core import derive_stream
from .aggregation import exact_mean
from .selection import SelectionOutcome, select_uniform


def fedprox_local_step(
    x_local: np.ndarray, x_global: np.ndarray, g: np.ndarray, mu: float, gamma: float
) -> np.ndarray:
    """One SGD step on the local loss plus ``mu/2 ||x_local - x_global||^2``."""
    if mu < 0:
        raise ValueError("mu must be non-negative")
    if mu == 0:
        return x_local - gamma * g
    return x_local - gamma * (g + mu * (x_local - x_global))


def fedsgd_step(
    x: np.ndarray,
    available: frozenset[int],
    problem,
    gamma: float,
    K: int,
    seed: int,
    t: int,
    strict: bool = False,
) -> tuple[np.ndarray, SelectionOutcome]:
    """Average the selected clients' gradients at ``x`` and take one step."""
    outcome = select_uniform(available, K, derive_stream(seed, "select", 0, t, 0), strict)
    ids = sorted(outcome.selected)
    grads = [problem.client_gradient(i, x, derive_stream(seed, "batch", i, t, 1)) for i in ids]
    return x - gamma * exact_mean(grads), outcome


def fedavg_round(
    x: np.ndarray,
    available: frozenset[int],
    problem,
    gamma: float,
    K: int,
    C: int,
    seed: int,
    r: int,
    mu: float = 0.0,
    strict: bool = False,
) -> tuple[np.ndarray, SelectionOutcome]:
    """``C`` local steps on each selected client, then average the model updates.

    A positive ``mu`` turns this into FedProx.
    """
    outcome = select_uniform(available, K, derive_stream(seed, "select", 0, r, 0), strict)
    updates = []
    for i in sorted(outcome.selected):
        x_local = x.copy()
        for c in range(1, C + 1):
            g = problem.client_gradient(i, x_local, derive_stream(seed, "batch", i, r, c))
            x_local = fedprox_local_step(x_local, x, g, mu, gamma)
        updates.append(x_local - x)
    return x + exact_mean(updates), outcome


def pooled_sgd_step(x: np.ndarray, problem, gamma: float, seed: int, t: int) -> np.ndarray:
    """Mini-batch SGD on the pooled data, one micro-batch per client.

    Uses the same random streams as the federated algorithms, so under full
    participation it is the centralized counterpart of a federated step.
    """
    ids = range(1, problem.num_clients + 1)
    grads = [problem.client_gradient(i, x, derive_stream(seed, "batch", i, t, 1)) for i in ids]
    return x - gamma * exact_mean(grads)


def seqsgd_steps_per_round(beta: float, N: int, C: int) -> int:
    """Sequential SGD steps that match the federated computation budget of one round."""
    return max(1, int(round(beta * N * C)))


def seqsgd_round(x: np.ndarray, problem, gamma: float, steps: int, seed: int, r: int) -> np.ndarray:
    """``steps`` sequential mini-batch SGD steps on the pooled dataset."""
    for s in range(1, steps + 1):
        g = problem.pooled_gradient(x, derive_stream(seed, "pooled", 0, r, s))
        x = x - gamma * g
    return x

