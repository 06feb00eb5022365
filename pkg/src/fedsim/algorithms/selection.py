"""Client selection policies."""

from __future__ import annotations

from dataclasses import dataclass
from typing import AbstractSet, Sequence

import numpy as np

from ..core import FedSimError


class InsufficientAvailable(FedSimError, RuntimeError):
    """Strict selection was asked for K clients but fewer were available."""


@dataclass(frozen=True)
class SelectionOutcome:
    selected: tuple[int, ...]
    available_count: int

    def __len__(self) -> int:
        return len(self.selected)


def _check(available: AbstractSet[int], K: int, strict: bool) -> int:
    if not available:
        raise ValueError("no client is available")
    if K < 1:
        raise ValueError("K must be positive")
    if strict and len(available) < K:
        raise InsufficientAvailable(f"{len(available)} clients available, {K} required")
    return min(K, len(available))


def select_latest(
    available: AbstractSet[int], last_participation: Sequence[int], K: int, strict: bool = False
) -> SelectionOutcome:
    """Pick the available clients that have been absent the longest.

    ``last_participation[i - 1]`` is the last step client ``i`` took part in
    (0 if never). Ties go to the smaller client id.
    """
    k = _check(available, K, strict)
    ranked = sorted(available, key=lambda i: (last_participation[i - 1], i))
    return SelectionOutcome(tuple(ranked[:k]), len(available))


def select_uniform(
    available: AbstractSet[int], K: int, stream: np.random.Generator, strict: bool = False
) -> SelectionOutcome:
    """Draw ``min(K, |available|)`` clients uniformly without replacement."""
    k = _check(available, K, strict)
    pool = np.array(sorted(available))
    chosen = stream.choice(pool, size=k, replace=False)
    return SelectionOutcome(tuple(int(i) for i in chosen), len(available))
