"""Federated latest averaging.

The server keeps the average of every client's most recent upload, refreshing
the entries of the K selected clients through upload differences, and steps
the model along that average even though most entries are stale.

Two granularities are supported: :func:`fedlaavg_step` (one local gradient
per participating client per iteration) and :func:`fedlaavg_round`
(``C`` local iterations, clients upload accumulated model updates).
:func:`fedlaavg_round_reference` is an independent re-derivation of the round
mode that tracks every client's local trajectory explicitly; it exists to
check the incremental implementation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..availability import Schedule
from ..core import derive_stream
from .aggregation import LatestAverage
from .selection import SelectionOutcome, select_latest


@dataclass
class ServerState:
    params: np.ndarray
    cache: LatestAverage
    last_participation: np.ndarray
    counter: int = 0

    @property
    def cached_avg(self) -> np.ndarray:
        return self.cache.value

    @property
    def num_clients(self) -> int:
        return len(self.last_participation)


@dataclass
class ClientCache:
    last_upload: np.ndarray


def init_fedlaavg(x0: np.ndarray, num_clients: int) -> tuple[ServerState, list[ClientCache]]:
    """Zero average, zero client caches, every client last seen at step 0."""
    x0 = np.array(x0, dtype=np.float64)
    state = ServerState(
        params=x0,
        cache=LatestAverage(num_clients, x0.size),
        last_participation=np.zeros(num_clients, dtype=np.int64),
    )
    caches = [ClientCache(np.zeros(x0.size)) for _ in range(num_clients)]
    return state, caches


def _upload(state: ServerState, caches: list[ClientCache], uploads: dict[int, np.ndarray]) -> None:
    # ascending id order pins the float summation order
    for i in sorted(uploads):
        new = uploads[i]
        state.cache.apply_difference(new, caches[i - 1].last_upload)
        caches[i - 1].last_upload = new


def fedlaavg_step(
    state: ServerState,
    caches: list[ClientCache],
    available: frozenset[int],
    problem,
    gamma: float,
    K: int,
    seed: int,
    strict: bool = False,
) -> SelectionOutcome:
    """Advance one iteration; ``state`` and ``caches`` are updated in place."""
    t = state.counter + 1
    outcome = select_latest(available, state.last_participation, K, strict)
    x = state.params
    grads = {i: problem.client_gradient(i, x, derive_stream(seed, "batch", i, t, 1)) for i in outcome.selected}
    _upload(state, caches, grads)
    for i in outcome.selected:
        state.last_participation[i - 1] = t
    state.params = x - gamma * state.cached_avg
    state.counter = t
    return outcome


def local_update(problem, client: int, x: np.ndarray, gamma: float, C: int, seed: int, r: int) -> np.ndarray:
    """Accumulated update ``-gamma * sum_c g_c`` over ``C`` local SGD steps from ``x``."""
    x_local = x.copy()
    grads = []
    for c in range(1, C + 1):
        g = problem.client_gradient(client, x_local, derive_stream(seed, "batch", client, r, c))
        grads.append(g)
        x_local = x_local - gamma * g
    total = np.array([math.fsum(col) for col in np.asarray(grads).T])
    return -gamma * total


def fedlaavg_round(
    state: ServerState,
    caches: list[ClientCache],
    available: frozenset[int],
    problem,
    gamma: float,
    K: int,
    C: int,
    seed: int,
    strict: bool = False,
) -> SelectionOutcome:
    """Advance one communication round of ``C`` local iterations, in place."""
    r = state.counter + 1
    outcome = select_latest(available, state.last_participation, K, strict)
    x = state.params
    updates = {i: local_update(problem, i, x, gamma, C, seed, r) for i in outcome.selected}
    _upload(state, caches, updates)
    for i in outcome.selected:
        state.last_participation[i - 1] = r
    state.params = x + state.cached_avg
    state.counter = r
    return outcome


def fedlaavg_round_reference(
    problem,
    schedule: Schedule,
    K: int,
    C: int,
    rounds: int,
    gamma: float,
    seed: int,
    x0: np.ndarray | None = None,
    strict: bool = False,
) -> list[np.ndarray]:
    """Round-mode latest averaging written iteration by iteration.

    Every gradient a client has ever computed is kept, indexed by global
    iteration; gradients at indices ``<= 0`` are zero. At iteration ``t`` of
    round ``r`` the global model moves by ``-(gamma/N) sum_i g_i`` where, for
    each client, ``g_i`` is the gradient from the same position within the
    client's latest participating round ``R_i``: index ``R_i C - r C + t``.
    Returns ``x^{rC}`` for ``r = 0..rounds``.
    """
    N = problem.num_clients
    x = problem.initial_params() if x0 is None else np.array(x0, dtype=np.float64)
    zero = np.zeros_like(x)
    history: dict[tuple[int, int], np.ndarray] = {}
    latest_round = np.zeros(N, dtype=np.int64)
    local: dict[int, np.ndarray] = {}
    selected: tuple[int, ...] = ()
    out = [x.copy()]
    for t in range(1, rounds * C + 1):
        r = (t - 1) // C + 1
        j = t - (r - 1) * C
        if j == 1:
            sel = select_latest(schedule.available(r), latest_round, K, strict)
            selected = sel.selected
            for i in selected:
                latest_round[i - 1] = r
                local[i] = x.copy()
        for i in selected:
            history[(i, t)] = problem.client_gradient(i, local[i], derive_stream(seed, "batch", i, r, j))
        step = zero.copy()
        for i in range(1, N + 1):
            idx = int(latest_round[i - 1]) * C - r * C + t
            step = step + history.get((i, idx), zero)
        x = x - gamma / N * step
        for i in selected:
            local[i] = local[i] - gamma * history[(i, t)]
        if j == C:
            out.append(x.copy())
    return out


@dataclass
class FedLaAvgTrace:
    params: list[np.ndarray]
    last_participation: list[np.ndarray]
    outcomes: list[SelectionOutcome]
    cache_snapshots: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)


def run_fedlaavg(
    problem,
    schedule: Schedule,
    K: int,
    gamma: float,
    steps: int,
    seed: int,
    *,
    C: int = 1,
    strict: bool = False,
    record_caches: bool = False,
    x0: np.ndarray | None = None,
    on_step: Callable[[int, ServerState, SelectionOutcome], None] | None = None,
) -> FedLaAvgTrace:
    """Run ``steps`` iterations (``C == 1``) or rounds (``C > 1``) and record the path.

    ``params[k]`` is the model after ``k`` steps. With ``record_caches`` the
    server average and a copy of every client's latest upload are snapshotted
    after each step, for checking the latest-average identity offline.
    """
    x0 = problem.initial_params() if x0 is None else x0
    state, caches = init_fedlaavg(x0, problem.num_clients)
    trace = FedLaAvgTrace([state.params.copy()], [state.last_participation.copy()], [])
    for k in range(1, steps + 1):
        available = schedule.available(k)
        if C == 1:
            outcome = fedlaavg_step(state, caches, available, problem, gamma, K, seed, strict)
        else:
            outcome = fedlaavg_round(state, caches, available, problem, gamma, K, C, seed, strict)
        trace.params.append(state.params.copy())
        trace.last_participation.append(state.last_participation.copy())
        trace.outcomes.append(outcome)
        if record_caches:
            trace.cache_snapshots.append((state.cached_avg, np.array([c.last_upload for c in caches])))
        if on_step is not None:
            on_step(k, state, outcome)
    return trace
