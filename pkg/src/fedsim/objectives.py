"""Loss and gradient oracles, synthetic non-IID data, and client weighting.

Two problem families are provided:

* :class:`QuadraticProblem` -- every client wants to learn the mean of its own
  one-dimensional data, ``f_i(x) = E[(x - xi)^2]`` with ``xi ~ N(e_i, sigma^2)``.
  With ``sigma = 0`` clients compute exact gradients.
* :class:`LogisticProblem` -- multinomial logistic regression on per-client
  datasets, usually produced by :func:`partition_synthetic`.

Both expose the same small interface used by the training loops: per-client
stochastic gradients of the *rescaled* local objective ``w_i N f_i``, plus the
population loss and full gradient of ``f = sum_i w_i f_i``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import FedSimError, as_params


class DimensionMismatch(FedSimError, ValueError):
    pass


class IndivisibleClients(FedSimError, ValueError):
    pass


# --------------------------------------------------------------------------
# quadratic mean-estimation objective


def quadratic_gradient(x: float, e_i: float, sigma: float, stream: np.random.Generator | None = None) -> float:
    """Stochastic gradient ``2 (x - xi)`` of ``(x - xi)^2``.

    ``xi`` equals ``e_i`` when ``sigma == 0`` and is drawn from
    ``N(e_i, sigma^2)`` otherwise.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        xi = e_i
    else:
        if stream is None:
            raise ValueError("a random stream is required when sigma > 0")
        xi = e_i + sigma * stream.standard_normal()
    return 2.0 * (x - xi)


def quadratic_loss(x: float, means: Sequence[float], sigma: float) -> float:
    """Population loss ``(1/N) sum_i (x - e_i)^2 + sigma^2``."""
    e = np.asarray(means, dtype=np.float64)
    return float(np.mean((x - e) ** 2) + sigma**2)


@dataclass(frozen=True)
class QuadraticProblem:
    means: tuple[float, ...]
    noise_sigma: float = 0.0
    x0: float = 0.0

    def __post_init__(self):
        if len(self.means) == 0:
            raise ValueError("need at least one client mean")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")

    @property
    def num_clients(self) -> int:
        return len(self.means)

    @property
    def dim(self) -> int:
        return 1

    @property
    def optimum(self) -> np.ndarray:
        return np.array([math.fsum(self.means) / len(self.means)])

    def initial_params(self) -> np.ndarray:
        return as_params([self.x0])

    def client_labels(self) -> list[int]:
        """Index of the distinct mean each client holds, in order of first appearance."""
        seen: dict[float, int] = {}
        return [seen.setdefault(m, len(seen)) for m in self.means]

    def client_gradient(self, client: int, x: np.ndarray, stream: np.random.Generator) -> np.ndarray:
        # equal weights, so the rescaling factor w_i N is exactly 1
        return np.array([quadratic_gradient(x[0], self.means[client - 1], self.noise_sigma, stream)])

    def pooled_gradient(self, x: np.ndarray, stream: np.random.Generator, batch_size: int = 1) -> np.ndarray:
        g = [quadratic_gradient(x[0], e, self.noise_sigma, stream) for e in self.means]
        return np.array([math.fsum(g) / len(g)])

    def loss(self, x: np.ndarray) -> float:
        return quadratic_loss(x[0], self.means, self.noise_sigma)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return np.array([2.0 * (x[0] - self.optimum[0])])

    def bound_constants(self) -> dict[str, float]:
        """Smoothness, gradient and variance constants for the convergence bounds.

        ``G`` bounds the expected squared gradient norm for iterates that stay
        inside the hull of ``x0`` and the client means.
        """
        pts = list(self.means) + [self.x0]
        spread = max(pts) - min(pts)
        sigma = 2.0 * self.noise_sigma
        G = math.sqrt((2.0 * spread) ** 2 + sigma**2)
        B = self.loss(self.initial_params()) - self.loss(self.optimum)
        return {"L": 2.0, "G": G, "sigma": sigma, "B": B}


# --------------------------------------------------------------------------
# multinomial logistic regression


def _split_params(W: np.ndarray, num_classes: int, dim: int) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    if W.size != num_classes * (dim + 1):
        raise DimensionMismatch(f"expected {num_classes * (dim + 1)} parameters, got {W.size}")
    return W.reshape(num_classes, dim + 1)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=1, keepdims=True)


def logistic_loss(W: np.ndarray, features: np.ndarray, labels: np.ndarray, num_classes: int) -> float:
    """Mean softmax cross-entropy; ``W`` is ``num_classes x (dim + 1)``, bias last."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    Wm = _split_params(W, num_classes, features.shape[1])
    logits = features @ Wm[:, :-1].T + Wm[:, -1]
    m = logits.max(axis=1, keepdims=True)
    lse = (m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True))).ravel()
    return float(np.mean(lse - logits[np.arange(len(labels)), labels]))


def logistic_gradient(W: np.ndarray, features: np.ndarray, labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Mean gradient over the batch of ``-log softmax(W x)[label]``.

    Returns a flat vector with the same layout as ``W``.
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if len(labels) == 0:
        raise ValueError("empty batch")
    if features.shape[0] != len(labels):
        raise DimensionMismatch("features and labels disagree on batch size")
    Wm = _split_params(W, num_classes, features.shape[1])
    probs = _softmax(features @ Wm[:, :-1].T + Wm[:, -1])
    probs[np.arange(len(labels)), labels] -= 1.0
    probs /= len(labels)
    grad = np.empty_like(Wm)
    grad[:, :-1] = probs.T @ features
    grad[:, -1] = probs.sum(axis=0)
    return grad.ravel()


@dataclass
class ClientDataset:
    client_id: int
    features: np.ndarray
    labels: np.ndarray
    weight: float

    def __post_init__(self):
        if len(self.labels) == 0:
            raise ValueError(f"client {self.client_id} holds no samples")
        if not 0 < self.weight <= 1:
            raise ValueError(f"client weight must lie in (0, 1], got {self.weight}")

    def __len__(self) -> int:
        return len(self.labels)


def normalized_weights(counts: Sequence[int]) -> np.ndarray:
    """Data-volume proportions whose float sum is exactly one."""
    counts = np.asarray(counts, dtype=np.float64)
    w = counts / counts.sum()
    # absorb the residual in the smallest weight: the rest then sums to >= 1/2,
    # so 1 - rest is exact
    k = int(np.argmin(w))
    rest = math.fsum(np.delete(w, k))
    w[k] = 1.0 - rest
    while math.fsum(w) != 1.0:
        w[k] = np.nextafter(w[k], 1.0 if math.fsum(w) < 1.0 else 0.0)
    return w


def rescale_local_objective(w_i: float, N: int) -> float:
    """Factor ``w_i N`` turning ``sum_i w_i f_i`` into ``(1/N) sum_i (w_i N f_i)``."""
    if not 0 < w_i <= 1:
        raise ValueError(f"client weight must lie in (0, 1], got {w_i}")
    return w_i * N


def make_class_centers(num_classes: int, dim: int, scale: float, stream: np.random.Generator) -> np.ndarray:
    """Class centers along random orthonormal directions, ``scale`` away from the origin."""
    if dim >= num_classes:
        q, _ = np.linalg.qr(stream.standard_normal((dim, num_classes)))
        dirs = q.T
    else:
        dirs = stream.standard_normal((num_classes, dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return scale * dirs


def _client_sizes(N: int, total_samples: int, stream: np.random.Generator) -> np.ndarray:
    mean = total_samples / N
    sizes = np.rint(stream.normal(mean, mean / 6.0, size=N)).astype(np.int64)
    return np.maximum(sizes, 1)


def partition_synthetic(
    num_clients: int,
    num_classes: int,
    total_samples: int,
    stream: np.random.Generator,
    *,
    dim: int = 20,
    centers: np.ndarray | None = None,
    sample_sigma: float = 1.0,
    center_scale: float = 3.0,
) -> list[ClientDataset]:
    """One-label-per-client synthetic partition.

    Clients ``1..N/num_classes`` hold class 0, the next block class 1 and so
    on. Sample counts are drawn from ``N(S/N, (S/(6N))^2)`` and clipped at 1;
    features of class ``c`` are ``N(center_c, sample_sigma^2 I)``.
    """
    if num_clients % num_classes:
        raise IndivisibleClients(f"{num_clients} clients cannot be split evenly over {num_classes} classes")
    if centers is None:
        centers = make_class_centers(num_classes, dim, center_scale, stream)
    centers = np.asarray(centers, dtype=np.float64)
    dim = centers.shape[1]
    sizes = _client_sizes(num_clients, total_samples, stream)
    weights = normalized_weights(sizes)
    per_class = num_clients // num_classes
    out = []
    for idx in range(num_clients):
        label = idx // per_class
        n = int(sizes[idx])
        x = centers[label] + sample_sigma * stream.standard_normal((n, dim))
        out.append(ClientDataset(idx + 1, x, np.full(n, label, dtype=np.int64), float(weights[idx])))
    return out


def partition_by_label(
    features: np.ndarray, labels: np.ndarray, num_clients: int, stream: np.random.Generator
) -> list[ClientDataset]:
    """Split a real labelled dataset so each client holds a single label.

    Each label's samples are shuffled and cut among its ``N / num_labels``
    clients at normally distributed proportions.
    """
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.unique(labels)
    if num_clients % len(classes):
        raise IndivisibleClients(f"{num_clients} clients cannot be split evenly over {len(classes)} labels")
    per_class = num_clients // len(classes)
    parts: list[tuple[np.ndarray, np.ndarray]] = []
    for c in classes:
        idx = stream.permutation(np.flatnonzero(labels == c))
        if len(idx) < per_class:
            raise ValueError(f"label {c} has fewer samples than clients")
        shares = np.maximum(stream.normal(1.0, 1.0 / 6.0, size=per_class), 1e-3)
        cuts = np.floor(np.cumsum(shares) / shares.sum() * len(idx)).astype(np.int64)
        cuts = np.maximum(cuts, np.arange(1, per_class + 1))
        cuts[-1] = len(idx)
        start = 0
        for stop in cuts:
            sel = idx[start:stop]
            parts.append((features[sel], labels[sel]))
            start = stop
    weights = normalized_weights([len(y) for _, y in parts])
    return [ClientDataset(i + 1, x, y, float(w)) for i, ((x, y), w) in enumerate(zip(parts, weights))]


def sleep_window_positive_share(window_starts: Sequence[int], rounds_per_day: int, alpha: float) -> np.ndarray:
    """Positive-label proportion for clients whose availability starts at each offset.

    The proportion is read off at the middle of the window and interpolates
    linearly from ``alpha`` at hour 0 to ``1 - alpha`` at hour 12 and back.
    """
    if not 0 <= alpha <= 0.5:
        raise ValueError("alpha must lie in [0, 0.5]")
    length = rounds_per_day / 3.0
    mid = (np.asarray(window_starts, dtype=np.float64) + length / 2.0) % rounds_per_day
    hour = 24.0 * mid / rounds_per_day
    closeness = 1.0 - np.abs(hour - 12.0) / 12.0
    return alpha + (1.0 - 2.0 * alpha) * closeness


def partition_label_skew(
    positive_share: Sequence[float],
    total_samples: int,
    stream: np.random.Generator,
    *,
    dim: int = 20,
    centers: np.ndarray | None = None,
    sample_sigma: float = 1.0,
    center_scale: float = 3.0,
) -> list[ClientDataset]:
    """Binary-label clients whose positive share is given per client."""
    share = np.asarray(positive_share, dtype=np.float64)
    N = len(share)
    if centers is None:
        centers = make_class_centers(2, dim, center_scale, stream)
    centers = np.asarray(centers, dtype=np.float64)
    sizes = _client_sizes(N, total_samples, stream)
    weights = normalized_weights(sizes)
    out = []
    for i in range(N):
        n = int(sizes[i])
        y = (stream.random(n) < share[i]).astype(np.int64)
        x = centers[y] + sample_sigma * stream.standard_normal((n, centers.shape[1]))
        out.append(ClientDataset(i + 1, x, y, float(weights[i])))
    return out


def load_csv_dataset(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read a CSV with a header row: feature columns followed by an integer label column."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 2:
            raise ValueError(f"{path}: need a header with at least one feature and a label column")
        rows = [row for row in reader if row]
    data = np.array(rows, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ValueError(f"{path}: ragged rows")
    labels = data[:, -1]
    if not np.all(labels == np.round(labels)) or labels.min() < 0:
        raise ValueError(f"{path}: label column must hold non-negative integers")
    return data[:, :-1], labels.astype(np.int64)


class LogisticProblem:
    """Multinomial logistic regression over fixed per-client datasets."""

    def __init__(self, datasets: Sequence[ClientDataset], num_classes: int, batch_size: int = 5):
        if not datasets:
            raise ValueError("need at least one client dataset")
        self.datasets = list(datasets)
        self.num_classes = num_classes
        self.batch_size = batch_size
        self.feature_dim = self.datasets[0].features.shape[1]
        N = len(self.datasets)
        self._scale = np.array([rescale_local_objective(d.weight, N) for d in self.datasets])
        self._X = np.concatenate([d.features for d in self.datasets])
        self._y = np.concatenate([d.labels for d in self.datasets])
        if self._y.max() >= num_classes:
            raise DimensionMismatch("a label exceeds num_classes - 1")

    @property
    def num_clients(self) -> int:
        return len(self.datasets)

    @property
    def dim(self) -> int:
        return self.num_classes * (self.feature_dim + 1)

    def initial_params(self) -> np.ndarray:
        return np.zeros(self.dim)

    def client_labels(self) -> list[int]:
        """Smallest label each client holds."""
        return [int(d.labels.min()) for d in self.datasets]

    def client_gradient(self, client: int, x: np.ndarray, stream: np.random.Generator) -> np.ndarray:
        d = self.datasets[client - 1]
        idx = stream.integers(0, len(d), size=self.batch_size)
        g = logistic_gradient(x, d.features[idx], d.labels[idx], self.num_classes)
        return self._scale[client - 1] * g

    def pooled_gradient(self, x: np.ndarray, stream: np.random.Generator, batch_size: int | None = None) -> np.ndarray:
        idx = stream.integers(0, len(self._y), size=batch_size or self.batch_size)
        return logistic_gradient(x, self._X[idx], self._y[idx], self.num_classes)

    def loss(self, x: np.ndarray) -> float:
        return logistic_loss(x, self._X, self._y, self.num_classes)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return logistic_gradient(x, self._X, self._y, self.num_classes)
