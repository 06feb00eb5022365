"""Exact aggregation of client uploads.

Every float64 is an integer multiple of 2**-1074, so sums of float64 values
can be carried exactly as Python integers in units of that quantum. The
server's running average is stored this way: applying an upload difference
is exact, and reading the average out rounds only once, so the cached value
is the correctly rounded mean of the clients' latest uploads no matter how
many differences were applied before.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

_QUANTUM_BITS = 1074
_QUANTUM = 1 << _QUANTUM_BITS


def _to_units(v: float) -> int:
    p, q = v.as_integer_ratio()
    return p << (_QUANTUM_BITS - (q.bit_length() - 1))


def to_exact(x: np.ndarray) -> list[int]:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("cannot aggregate non-finite values")
    return [_to_units(v) for v in x.tolist()]


def exact_sum_to_float(units: Sequence[int]) -> np.ndarray:
    # int / int true division is correctly rounded
    return np.array([u / _QUANTUM for u in units], dtype=np.float64)


def exact_mean(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Coordinate-wise correctly rounded sum of ``vectors``, divided by their count.

    Produces bit-for-bit the same value that :class:`LatestAverage` reports
    once every client has uploaded ``vectors[i]``.
    """
    if len(vectors) == 0:
        raise ValueError("nothing to average")
    stacked = np.asarray(vectors, dtype=np.float64)
    sums = np.array([math.fsum(col) for col in stacked.T])
    return sums / len(vectors)


class LatestAverage:
    """Running average ``(1/N) sum_i latest_i`` maintained from upload differences.

    This is the only parameter-sized vector the server keeps besides the model.
    """

    __slots__ = ("num_clients", "dim", "_units")

    def __init__(self, num_clients: int, dim: int):
        self.num_clients = num_clients
        self.dim = dim
        self._units = [0] * dim

    def apply_difference(self, new: np.ndarray, old: np.ndarray) -> None:
        """Fold in one client's upload of ``new - old``, computed exactly."""
        a, b = to_exact(new), to_exact(old)
        self._units = [s + p - q for s, p, q in zip(self._units, a, b)]

    @property
    def value(self) -> np.ndarray:
        return exact_sum_to_float(self._units) / self.num_clients
