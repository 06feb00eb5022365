"""Closed forms, convergence bounds and trace checkers."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Any, Sequence

import numpy as np

from .core import BoundInputs, FedSimError


class DegenerateRate(FedSimError, ValueError):
    pass


class RateTooLarge(FedSimError, ValueError):
    pass


class NonPositiveValue(FedSimError, ValueError):
    pass


def staleness_bound(N: int, K: int, E: int) -> int:
    """Maximum age ``ceil(N/K) E - 1`` of any client's latest contribution."""
    if not 1 <= K <= N or E < 1:
        raise ValueError("need 1 <= K <= N and E >= 1")
    return -(-N // K) * E - 1


def fedavg_fixed_point(e1: float, e2: float, t1: int, t2: int, gamma: float) -> float:
    """Where FedAvg's end-of-period iterate settles in the two-client alternating example.

    Client 1 alone trains for ``t1`` iterations, then client 2 for ``t2``; with
    exact gradients of ``(x - e_i)^2`` the period map is affine and its fixed
    point is returned.
    """
    if not 0 < gamma < 0.5:
        raise DegenerateRate(f"need 0 < gamma < 1/2, got {gamma}")
    q = 1.0 - 2.0 * gamma
    qp = q ** (t1 + t2)
    return (q**t2 * (e1 - e2) + e2 - e1 * qp) / (1.0 - qp)


def fedavg_limit_point(e1: float, e2: float, t1: int, t2: int) -> float:
    """Small-learning-rate limit of :func:`fedavg_fixed_point`: the availability-weighted mean."""
    return (t1 * e1 + t2 * e2) / (t1 + t2)


def fedavg_period_map(x: float, e1: float, e2: float, t1: int, t2: int, gamma: float) -> float:
    """One full period of FedAvg in the alternating example, in closed form."""
    q = 1.0 - 2.0 * gamma
    return q ** (t1 + t2) * (x - e1) + q**t2 * (e1 - e2) + e2


def theorem2_bound(T: int, I: int, G: float, B0: float) -> float:
    """Bound ``B0/sqrt(T) + I^2 G^2 / (4T)`` on the squared error of the best iterate.

    Applies to latest averaging on the two-client quadratic example run with
    ``gamma = 1/(2 sqrt(T))``.
    """
    if T < 1:
        raise ValueError("T must be positive")
    return B0 / math.sqrt(T) + I**2 * G**2 / (4.0 * T)


def _staleness(inputs: BoundInputs) -> int:
    if inputs.I is not None:
        return inputs.I
    return staleness_bound(inputs.N, inputs.K, inputs.E)


def theorem3_terms(inputs: BoundInputs) -> dict[str, float]:
    """The five terms bounding the average squared gradient norm (one local iteration)."""
    L, G, s, N, T, g = inputs.L, inputs.G, inputs.sigma, inputs.N, inputs.T, inputs.gamma
    if g is None or T is None:
        raise ValueError("theorem3 needs gamma and T")
    if g * L >= 0.5:
        raise RateTooLarge(f"need gamma < 1/(2L) = {0.5 / L}, got {g}")
    I = _staleness(inputs)
    return {
        "staleness_variance": 2 * g * I * L * (G**2 + s**2) / math.sqrt(N),
        "staleness_drift": 2 * g**2 * I**2 * L**2 * G**2 / (1 - 2 * g * L),
        "staleness_square": 4 * g**2 * I**2 * L**2 * G**2,
        "gradient_variance": 4 * g * s**2 * L / N,
        "objective_distance": 4 * inputs.B / (g * T),
    }


def theorem3_bound(inputs: BoundInputs) -> float:
    return math.fsum(theorem3_terms(inputs).values())


def theorem4_terms(inputs: BoundInputs) -> dict[str, float]:
    """The four terms bounding the round-mode average squared gradient norm."""
    L, G, s, N, R, C, g = inputs.L, inputs.G, inputs.sigma, inputs.N, inputs.R, inputs.C, inputs.gamma
    if g is None or R is None:
        raise ValueError("theorem4 needs gamma and R")
    if g * L >= 0.5:
        raise RateTooLarge(f"need gamma < 1/(2L) = {0.5 / L}, got {g}")
    I = _staleness(inputs)
    return {
        "gradient_variance": 4 * g * s**2 * L / N,
        "staleness_variance": 2 * g * I * C * L * (G**2 + s**2) / math.sqrt(N),
        "staleness_drift": (2 * I**2 / (1 - 2 * g * L) + 4 * I**2 + 4 * I + 2) * g**2 * C**2 * L**2 * G**2,
        "objective_distance": 4 * inputs.B / (g * R * C),
    }


def theorem4_bound_shape(inputs: BoundInputs) -> float:
    return math.fsum(theorem4_terms(inputs).values())


def check_latest_average(
    snapshots: Sequence[tuple[np.ndarray, np.ndarray]], rtol: float = 1e-9
) -> int | None:
    """Verify the server average against a brute-force mean of the client caches.

    ``snapshots[k]`` is ``(server_average, latest_uploads)`` after step
    ``k + 1``, with one row per client. Returns ``None`` when every step
    agrees within ``rtol * (1 + ||average||)``, otherwise the first failing
    step number.
    """
    for k, (avg, uploads) in enumerate(snapshots, start=1):
        brute = np.asarray(uploads, dtype=np.float64).mean(axis=0)
        avg = np.asarray(avg, dtype=np.float64)
        if np.linalg.norm(avg - brute) > rtol * (1.0 + np.linalg.norm(avg)):
            return k
    return None


def staleness_violations(last_participation: Sequence[np.ndarray], I: int) -> list[tuple[int, int]]:
    """All ``(step, client)`` pairs whose age ``t - T_i^t`` exceeds ``I``.

    ``last_participation[t]`` holds the per-client table after step ``t``
    (index 0 is the initial all-zero table).
    """
    out = []
    for t, table in enumerate(last_participation):
        for i in np.flatnonzero(t - np.asarray(table) > I):
            out.append((t, int(i) + 1))
    return out


def loglog_slope(series: Sequence[tuple[float, float]]) -> float:
    """Least-squares slope of ``log(error)`` against ``log(T)``."""
    if len(series) < 3:
        raise ValueError("need at least three points")
    arr = np.asarray(series, dtype=np.float64)
    if np.any(arr <= 0):
        raise NonPositiveValue("log-log fit needs positive values")
    slope, _ = np.polyfit(np.log(arr[:, 0]), np.log(arr[:, 1]), 1)
    return float(slope)


def min_iterate(xs: Sequence[np.ndarray], loss) -> tuple[int, np.ndarray]:
    """Iterate with the lowest loss (earliest on ties)."""
    values = [loss(x) for x in xs]
    k = int(np.argmin(values))
    return k, xs[k]


@dataclass
class BoundReport:
    bound_name: str
    inputs: dict[str, Any]
    value: float
    lhs_empirical: float

    def __post_init__(self):
        # numpy scalars would leak into the JSON reports
        self.value = float(self.value)
        self.lhs_empirical = float(self.lhs_empirical)
        self.inputs = {k: v.item() if isinstance(v, np.generic) else v for k, v in self.inputs.items()}

    @property
    def satisfied(self) -> bool:
        return self.lhs_empirical <= self.value

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["satisfied"] = self.satisfied
        return d
