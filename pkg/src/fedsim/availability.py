"""Client availability schedules and the minimal-availability validator.

A schedule maps a 1-based iteration (or round) index to the set of client ids
that may be selected at that index. Client ids are ``1..N``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import FedSimError


class NeverAvailable(FedSimError, ValueError):
    """Some client does not appear at all within the inspected horizon."""


class Schedule:
    kind = "custom"
    num_clients: int
    declared_E: int

    def available(self, t: int) -> frozenset[int]:
        raise NotImplementedError

    def period(self) -> int | None:
        """Length of one repetition of the pattern, when it is periodic."""
        return None

    def describe(self) -> dict:
        return {"kind": self.kind, "declared_E": self.declared_E}


def available_set(schedule: Schedule, t: int) -> frozenset[int]:
    if t < 1:
        raise ValueError("schedule indices start at 1")
    return schedule.available(t)


@dataclass(frozen=True)
class AlwaysOn(Schedule):
    num_clients: int
    kind = "always_on"

    @property
    def declared_E(self) -> int:
        return 1

    def available(self, t: int) -> frozenset[int]:
        return frozenset(range(1, self.num_clients + 1))

    def period(self) -> int:
        return 1


@dataclass(frozen=True)
class Alternating(Schedule):
    """``group1`` is available for ``t1`` indices, then ``group2`` for ``t2``, repeating."""

    t1: int
    t2: int
    group1: frozenset[int]
    group2: frozenset[int]
    kind = "alternating"

    def __post_init__(self):
        if self.t1 < 1 or self.t2 < 1:
            raise ValueError("t1 and t2 must be positive")
        object.__setattr__(self, "group1", frozenset(self.group1))
        object.__setattr__(self, "group2", frozenset(self.group2))
        if self.group1 & self.group2:
            raise ValueError("alternating groups must be disjoint")
        if not self.group1 or not self.group2:
            raise ValueError("alternating groups must be non-empty")
        ids = self.group1 | self.group2
        if ids != frozenset(range(1, len(ids) + 1)):
            raise ValueError("alternating groups must cover clients 1..N")

    @property
    def num_clients(self) -> int:
        return len(self.group1) + len(self.group2)

    @property
    def declared_E(self) -> int:
        return max(self.t1, self.t2) + 1

    def available(self, t: int) -> frozenset[int]:
        return self.group1 if (t - 1) % (self.t1 + self.t2) < self.t1 else self.group2

    def period(self) -> int:
        return self.t1 + self.t2


@dataclass(frozen=True)
class Diurnal(Schedule):
    """Two groups taking turns in blocks of ``block_len``; ``group_a`` goes first.

    A client sits out ``block_len`` consecutive indices, so the tightest
    minimal-availability parameter is ``block_len + 1``.
    """

    block_len: int
    group_a: frozenset[int]
    group_b: frozenset[int]
    kind = "diurnal"

    def __post_init__(self):
        if self.block_len < 1:
            raise ValueError("block_len must be positive")
        object.__setattr__(self, "group_a", frozenset(self.group_a))
        object.__setattr__(self, "group_b", frozenset(self.group_b))
        if self.group_a & self.group_b or not self.group_a or not self.group_b:
            raise ValueError("diurnal groups must be disjoint and non-empty")

    @property
    def num_clients(self) -> int:
        return len(self.group_a) + len(self.group_b)

    @property
    def declared_E(self) -> int:
        return self.block_len + 1

    def available(self, t: int) -> frozenset[int]:
        block = (t - 1) // self.block_len
        return self.group_a if block % 2 == 0 else self.group_b

    def period(self) -> int:
        return 2 * self.block_len

    def describe(self) -> dict:
        return {**super().describe(), "block_len": self.block_len}


def diurnal_from_labels(block_len: int, client_labels: Sequence[int], D: int) -> Diurnal:
    """Diurnal schedule where clients holding labels ``0..D-1`` form the first group."""
    group_a = {i + 1 for i, lab in enumerate(client_labels) if lab < D}
    group_b = {i + 1 for i, lab in enumerate(client_labels) if lab >= D}
    return Diurnal(block_len, frozenset(group_a), frozenset(group_b))


@dataclass(frozen=True)
class SleepWindow(Schedule):
    """Each client is available for one third of every day, from its own start offset."""

    rounds_per_day: int
    window_starts: tuple[int, ...]
    kind = "sleep_window"

    def __post_init__(self):
        if self.rounds_per_day < 3 or self.rounds_per_day % 3:
            raise ValueError("rounds_per_day must be a positive multiple of 3")
        object.__setattr__(self, "window_starts", tuple(int(s) % self.rounds_per_day for s in self.window_starts))

    @property
    def window_len(self) -> int:
        return self.rounds_per_day // 3

    @property
    def num_clients(self) -> int:
        return len(self.window_starts)

    @property
    def declared_E(self) -> int:
        return self.rounds_per_day - self.window_len + 1

    def available(self, t: int) -> frozenset[int]:
        slot = (t - 1) % self.rounds_per_day
        return frozenset(
            i + 1 for i, s in enumerate(self.window_starts) if (slot - s) % self.rounds_per_day < self.window_len
        )

    def period(self) -> int:
        return self.rounds_per_day

    @classmethod
    def random(cls, num_clients: int, rounds_per_day: int, stream: np.random.Generator) -> "SleepWindow":
        starts = stream.integers(0, rounds_per_day, size=num_clients)
        return cls(rounds_per_day, tuple(int(s) for s in starts))

    def describe(self) -> dict:
        return {**super().describe(), "rounds_per_day": self.rounds_per_day}


@dataclass(frozen=True)
class Custom(Schedule):
    """Explicit availability bitmap, ``bitmap[r - 1, i - 1]`` true iff client i is available at r."""

    bitmap: np.ndarray
    declared_E: int = field(default=0)
    kind = "custom"

    def __post_init__(self):
        bm = np.asarray(self.bitmap, dtype=bool)
        if bm.ndim != 2:
            raise ValueError("bitmap must be rounds x clients")
        bm = bm.copy()
        bm.setflags(write=False)
        object.__setattr__(self, "bitmap", bm)
        if self.declared_E == 0:
            object.__setattr__(self, "declared_E", minimal_E(self, bm.shape[0]))

    @property
    def num_clients(self) -> int:
        return self.bitmap.shape[1]

    @property
    def horizon(self) -> int:
        return self.bitmap.shape[0]

    def available(self, t: int) -> frozenset[int]:
        if t > self.horizon:
            raise IndexError(f"custom schedule covers indices 1..{self.horizon}, asked for {t}")
        return frozenset((np.flatnonzero(self.bitmap[t - 1]) + 1).tolist())


def load_custom_schedule(path: str | Path) -> Custom:
    """Parse the text format: ``"N R"`` then R lines of N ``0``/``1`` characters."""
    lines = Path(path).read_text().split("\n")
    try:
        N, R = (int(tok) for tok in lines[0].split())
    except ValueError:
        raise ValueError(f"{path}: first line must be 'N R'") from None
    rows = [ln.strip() for ln in lines[1:] if ln.strip()]
    if len(rows) != R:
        raise ValueError(f"{path}: header announces {R} rows, found {len(rows)}")
    for k, row in enumerate(rows, start=2):
        if len(row) != N or set(row) - {"0", "1"}:
            raise ValueError(f"{path}:{k}: expected {N} characters of '0'/'1'")
    bm = np.array([[c == "1" for c in row] for row in rows], dtype=bool)
    return Custom(bm)


def write_custom_schedule(bitmap: np.ndarray, path: str | Path) -> None:
    bm = np.asarray(bitmap, dtype=bool)
    R, N = bm.shape
    body = "\n".join("".join("1" if v else "0" for v in row) for row in bm)
    Path(path).write_text(f"{N} {R}\n{body}\n")


def _membership(schedule: Schedule, horizon: int) -> np.ndarray:
    N = schedule.num_clients
    m = np.zeros((horizon, N), dtype=bool)
    for t in range(1, horizon + 1):
        ids = list(schedule.available(t))
        if ids:
            m[t - 1, np.asarray(ids) - 1] = True
    return m


def validate_min_availability(schedule: Schedule, E: int, horizon: int) -> list[tuple[int, int]]:
    """Check that every client appears in every window of ``E`` consecutive indices.

    Returns the earliest violating ``(client, window_start)`` per client, in
    client order; an empty list means the schedule passes.
    """
    if E < 1 or horizon < E:
        raise ValueError("need 1 <= E <= horizon")
    m = _membership(schedule, horizon)
    # windows[s, i] = number of appearances of client i in [s + 1, s + E]
    csum = np.vstack([np.zeros((1, m.shape[1]), dtype=np.int64), np.cumsum(m, axis=0)])
    windows = csum[E:] - csum[:-E]
    violations = []
    for i in range(m.shape[1]):
        bad = np.flatnonzero(windows[:, i] == 0)
        if bad.size:
            violations.append((i + 1, int(bad[0]) + 1))
    return violations


def absence_gaps(schedule: Schedule, horizon: int) -> dict[int, int]:
    """Longest run of consecutive indices in ``[1, horizon]`` each client is absent."""
    m = _membership(schedule, horizon)
    out = {}
    for i in range(m.shape[1]):
        longest = run = 0
        for present in m[:, i]:
            run = 0 if present else run + 1
            longest = max(longest, run)
        out[i + 1] = longest
    return out


def minimal_E(schedule: Schedule, horizon: int) -> int:
    """Smallest ``E`` for which :func:`validate_min_availability` passes on the horizon."""
    gaps = absence_gaps(schedule, horizon)
    missing = [i for i, g in gaps.items() if g == horizon]
    if missing:
        raise NeverAvailable(f"clients {missing} are never available in 1..{horizon}")
    return max(gaps.values()) + 1


def round_availability(schedule: Schedule, r: int, C: int) -> frozenset[int]:
    """Clients available in every iteration of round ``r`` (iterations ``(r-1)C+1..rC``)."""
    sets: Iterable[frozenset[int]] = (schedule.available(t) for t in range((r - 1) * C + 1, r * C + 1))
    out = next(iter(sets))
    for s in sets:
        out = out & s
    return out
