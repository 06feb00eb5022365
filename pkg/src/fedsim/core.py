"""Shared value types, the seeded stream contract, and run configuration."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Any, Union

import numpy as np

ALGORITHMS = ("fedlaavg", "fedavg", "fedsgd", "fedprox", "seqsgd")

# Symbolic learning rates accepted in place of a number.
#   auto     -> the sublinear-speedup rate derived from (beta, N, L, E, T)
#   inv_sqrt -> 1 / (2 sqrt(T)), used for the two-client quadratic example
SYMBOLIC_RATES = ("auto", "inv_sqrt")


class FedSimError(Exception):
    """Base class for every error raised by this package."""


class SchemaError(FedSimError, KeyError):
    """A configuration document has a missing, unknown or mistyped key."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")

    def __str__(self) -> str:
        return self.args[0]


class RangeError(FedSimError, ValueError):
    """A configuration value falls outside its allowed range."""


class AutoRateExceedsCap(FedSimError, ValueError):
    """The automatically chosen learning rate is larger than 1/(4L)."""


ParamVector = np.ndarray
"""Model parameters: a 1-D float64 array whose length is fixed for a run."""


def as_params(values) -> ParamVector:
    """Copy ``values`` into a fresh 1-D float64 parameter vector."""
    x = np.array(values, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ValueError("parameter vector must have positive dimension")
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("parameter vector contains non-finite entries")
    return x


def _label_key(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def derive_stream(
    master_seed: int,
    purpose: str,
    client: int = 0,
    round: int = 0,
    local_iter: int = 0,
) -> np.random.Generator:
    """Return the random stream identified by the given tuple.

    Streams are counter-based: the identifier tuple is hashed into a
    ``SeedSequence`` instead of being drawn from one shared sequential
    generator. Two algorithms running on the same seed therefore see the same
    data noise for a given (client, round, local iteration), whatever order
    they happen to consume it in.
    """
    ints = (master_seed, client, round, local_iter)
    if any(v < 0 for v in ints):
        raise ValueError("stream identifiers must be non-negative")
    master_seed &= (1 << 64) - 1
    seq = np.random.SeedSequence(
        [master_seed & 0xFFFFFFFF, master_seed >> 32, _label_key(purpose), client, round, local_iter]
    )
    return np.random.Generator(np.random.PCG64(seq))


@dataclass(frozen=True)
class MetricRecord:
    round: int
    iteration: int
    train_loss: float
    grad_norm_sq: float
    num_available: int
    num_selected: int
    wall_ms: float = 0.0

    def __post_init__(self):
        if self.num_selected > self.num_available:
            raise ValueError("more clients selected than were available")

    def to_dict(self) -> dict[str, Any]:
        return {
            "round": self.round,
            "iteration": self.iteration,
            "train_loss": self.train_loss,
            "grad_norm_sq": self.grad_norm_sq,
            "num_available": self.num_available,
            "num_selected": self.num_selected,
            "wall_ms": self.wall_ms,
        }


LearningRate = Union[float, str]


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce one simulation run."""

    algorithm: str
    num_clients: int
    select_frac: float
    local_iters: int
    rounds: int
    learning_rate: LearningRate
    objective: dict[str, Any]
    availability: dict[str, Any]
    prox_mu: float = 0.0
    batch_size: int = 5
    master_seed: int = 0
    eval_every: int = 1
    strict_selection: bool = False
    output_path: str | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise RangeError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        for name in ("num_clients", "local_iters", "rounds", "batch_size", "eval_every"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise RangeError(f"{name} must be a positive integer, got {value!r}")
        if not 0.0 < self.select_frac <= 1.0:
            raise RangeError(f"select_frac must lie in (0, 1], got {self.select_frac}")
        if isinstance(self.learning_rate, str):
            if self.learning_rate not in SYMBOLIC_RATES:
                raise RangeError(f"learning rate must be positive or one of {SYMBOLIC_RATES}")
        elif not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise RangeError(f"learning rate must be positive, got {self.learning_rate}")
        if self.prox_mu < 0:
            raise RangeError(f"prox_mu must be non-negative, got {self.prox_mu}")
        if self.algorithm == "fedsgd" and self.local_iters != 1:
            raise RangeError("fedsgd runs exactly one local iteration per round")
        if not 0 <= self.master_seed < 2**64:
            raise RangeError("seed must be a 64-bit unsigned integer")

    @property
    def K(self) -> int:
        """Number of clients selected per round, ``round(beta * N)`` but at least 1."""
        return max(1, int(round(self.select_frac * self.num_clients)))

    @property
    def total_iterations(self) -> int:
        return self.rounds * self.local_iters


@dataclass(frozen=True)
class BoundInputs:
    """Constants that enter the convergence bounds.

    Only the fields a particular bound needs have to be set.
    """

    L: float = 1.0
    G: float = 0.0
    sigma: float = 0.0
    B: float = 0.0
    N: int = 1
    K: int = 1
    E: int = 1
    T: int | None = None
    R: int | None = None
    C: int = 1
    gamma: float | None = None
    I: int | None = None

    @property
    def beta(self) -> float:
        return self.K / self.N


def resolve_learning_rate(config: RunConfig, bound_inputs: BoundInputs | None = None) -> float:
    """Turn ``config.learning_rate`` into a number.

    ``"auto"`` picks the rate that yields the sublinear-speedup guarantee:
    ``sqrt(beta) N^(1/4) / (2 L sqrt(E T))`` for one local iteration and
    ``sqrt(beta) N^(1/4) / (2 L C sqrt(E R))`` otherwise. Both require the
    result to stay at or below ``1/(4L)``.
    """
    lr = config.learning_rate
    if not isinstance(lr, str):
        return float(lr)
    if lr == "inv_sqrt":
        return 1.0 / (2.0 * math.sqrt(config.total_iterations))
    if bound_inputs is None:
        raise ValueError("an automatic learning rate needs L and E")
    L, E = bound_inputs.L, bound_inputs.E
    beta = config.K / config.num_clients
    N = config.num_clients
    C = config.local_iters
    if C == 1:
        gamma = math.sqrt(beta) * N**0.25 / (2.0 * L * math.sqrt(E * config.total_iterations))
    else:
        gamma = math.sqrt(beta) * N**0.25 / (2.0 * L * C * math.sqrt(E * config.rounds))
    if gamma > 1.0 / (4.0 * L):
        raise AutoRateExceedsCap(f"automatic rate {gamma:.6g} exceeds 1/(4L) = {1.0 / (4.0 * L):.6g}")
    return gamma
