"""Synthetic federated datasets and the generalized linear models trained on them.

Two generators are shipped: an iid linear-regression recipe (one global
coefficient vector, clients are random chunks of one pool) and a
heterogeneous softmax recipe where per-client model parameters and feature
means are drawn around client-specific centers whose spread is controlled
by (alpha, beta).  Models are deliberately small: least squares and
softmax regression with L2 regularization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np


class TaskKind(Enum):
    LEAST_SQUARES = "least_squares"
    SOFTMAX = "softmax"


@dataclass(frozen=True)
class ClientDataset:
    """Feature matrix (n, d) with aligned targets (n,)."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError(f"features must be (n>=1, d), got {x.shape}")
        if y.shape != (x.shape[0],):
            raise ValueError(f"labels must be ({x.shape[0]},), got {y.shape}")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class ClientData:
    """One client's train/validation split (disjoint, exhaustive)."""

    train: ClientDataset
    val: ClientDataset

    @property
    def n_total(self) -> int:
        return self.train.n + self.val.n


def split_train_val(features: np.ndarray, labels: np.ndarray, val_fraction: float = 0.2) -> ClientData:
    """Tail split with n_val = max(1, floor(val_fraction * n))."""
    n = features.shape[0]
    if n < 2:
        raise ValueError("need at least 2 samples per client to split off validation")
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must lie in (0, 1)")
    n_val = max(1, math.floor(val_fraction * n))
    if n_val >= n:
        raise ValueError(f"val_fraction {val_fraction} leaves no training data for n={n}")
    return ClientData(
        train=ClientDataset(features[: n - n_val], labels[: n - n_val]),
        val=ClientDataset(features[n - n_val :], labels[n - n_val :]),
    )


@dataclass(frozen=True)
class FederatedDataset:
    """Client splits plus the data-share weights p_k = n_k / sum_j n_j."""

    task: TaskKind
    clients: tuple[ClientData, ...]
    p: np.ndarray
    num_classes: int | None = None

    def __post_init__(self):
        if not self.clients:
            raise ValueError("need at least one client")
        counts = np.array([c.n_total for c in self.clients], dtype=float)
        expect = counts / counts.sum()
        p = np.asarray(self.p, dtype=float)
        if p.shape != expect.shape or np.max(np.abs(p - expect)) > 1e-12:
            raise ValueError("p must equal per-client sample counts over the total")
        if self.task is TaskKind.SOFTMAX:
            if not self.num_classes or self.num_classes < 2:
                raise ValueError("softmax datasets need num_classes >= 2")
            for c in self.clients:
                for part in (c.train, c.val):
                    y = part.labels
                    if y.dtype.kind not in "iu" or y.min() < 0 or y.max() >= self.num_classes:
                        raise ValueError("labels must be integers in [0, num_classes)")
        object.__setattr__(self, "p", p)

    @classmethod
    def from_splits(
        cls, task: TaskKind, clients: Sequence[ClientData], num_classes: int | None = None
    ) -> "FederatedDataset":
        counts = np.array([c.n_total for c in clients], dtype=float)
        return cls(task, tuple(clients), counts / counts.sum(), num_classes)

    @property
    def n_clients(self) -> int:
        return len(self.clients)

    @property
    def dim(self) -> int:
        return self.clients[0].train.dim


@dataclass
class GlmModel:
    """Least squares (weights (d,)) or softmax regression (weights (C, d)),
    both with an L2 penalty of l2_reg/2 * ||w||^2 on the training loss."""

    kind: TaskKind
    weights: np.ndarray
    l2_reg: float = 1e-4

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if self.kind is TaskKind.LEAST_SQUARES and w.ndim != 1:
            raise ValueError("least squares weights must be a vector")
        if self.kind is TaskKind.SOFTMAX and (w.ndim != 2 or w.shape[0] < 2):
            raise ValueError("softmax weights must be (num_classes >= 2, d)")
        if self.l2_reg < 0:
            raise ValueError("l2_reg must be >= 0")
        self.weights = w

    @classmethod
    def zeros(cls, task: TaskKind, dim: int, num_classes: int | None = None, l2_reg: float = 1e-4):
        if task is TaskKind.LEAST_SQUARES:
            return cls(task, np.zeros(dim), l2_reg)
        return cls(task, np.zeros((num_classes, dim)), l2_reg)

    def copy(self) -> "GlmModel":
        return GlmModel(self.kind, self.weights.copy(), self.l2_reg)

    def flat_weights(self) -> np.ndarray:
        return self.weights.ravel().copy()

    def assign_flat(self, w: np.ndarray) -> None:
        self.weights = np.asarray(w, dtype=float).reshape(self.weights.shape)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def loss_and_grad(
    model: GlmModel, data: ClientDataset, indices: np.ndarray | None = None
) -> tuple[float, np.ndarray]:
    """Mean regularized loss over the (sub)batch and its gradient.

    Least squares uses 0.5 (x.w - y)^2 per sample; softmax uses
    cross-entropy.  The gradient has the shape of the model weights.
    """
    if indices is None:
        x, y = data.features, data.labels
    else:
        x, y = data.features[indices], data.labels[indices]
    b = x.shape[0]
    if b == 0:
        raise ValueError("empty batch")
    lam = model.l2_reg
    if model.kind is TaskKind.LEAST_SQUARES:
        w = model.weights
        resid = x @ w - y
        loss = 0.5 * float(resid @ resid) / b + 0.5 * lam * float(w @ w)
        grad = x.T @ resid / b + lam * w
        return loss, grad
    w = model.weights
    logp = _log_softmax(x @ w.T)
    loss = -float(logp[np.arange(b), y].mean()) + 0.5 * lam * float(np.sum(w * w))
    probs = np.exp(logp)
    probs[np.arange(b), y] -= 1.0
    grad = probs.T @ x / b + lam * w
    return loss, grad


def predictions(model: GlmModel, features: np.ndarray) -> np.ndarray:
    if model.kind is TaskKind.LEAST_SQUARES:
        return features @ model.weights
    return np.argmax(features @ model.weights.T, axis=1)


def dataset_loss(model: GlmModel, data: ClientDataset) -> tuple[float, float]:
    """Unregularized mean prediction loss and accuracy on a dataset.

    Least-squares 'accuracy' counts predictions that round to the target,
    matching the integer-valued regression labels of the iid recipe.
    """
    if model.kind is TaskKind.LEAST_SQUARES:
        pred = data.features @ model.weights
        resid = pred - data.labels
        loss = 0.5 * float(resid @ resid) / data.n
        acc = float(np.mean(np.round(pred) == data.labels))
        return loss, acc
    logp = _log_softmax(data.features @ model.weights.T)
    loss = -float(logp[np.arange(data.n), data.labels].mean())
    acc = float(np.mean(np.argmax(logp, axis=1) == data.labels))
    return loss, acc


@dataclass(frozen=True)
class EvalMetrics:
    loss: float
    accuracy: float


def evaluate(model: GlmModel, fed: FederatedDataset, mode: str = "per_sample") -> EvalMetrics:
    """Validation metrics, pooled over samples or averaged per user."""
    if mode not in ("per_sample", "per_user"):
        raise ValueError(f"unknown evaluation mode {mode!r}")
    per_client = [dataset_loss(model, c.val) for c in fed.clients]
    if mode == "per_user":
        losses, accs = zip(*per_client)
        return EvalMetrics(float(np.mean(losses)), float(np.mean(accs)))
    counts = np.array([c.val.n for c in fed.clients], dtype=float)
    weights = counts / counts.sum()
    loss = float(np.sum(weights * np.array([m[0] for m in per_client])))
    acc = float(np.sum(weights * np.array([m[1] for m in per_client])))
    return EvalMetrics(loss, acc)


def global_objective(model: GlmModel, fed: FederatedDataset) -> float:
    """The federated training objective: sum_k p_k (train loss_k + reg)."""
    total = 0.0
    for pk, client in zip(fed.p, fed.clients):
        loss, _ = loss_and_grad(model, client.train)
        total += pk * loss
    return float(total)


def _as_rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def generate_synthetic_iid(
    seed,
    task: TaskKind = TaskKind.LEAST_SQUARES,
    n_clients: int = 100,
    samples_per_client: int = 100,
    dim: int = 100,
    num_classes: int = 10,
    val_fraction: float = 0.2,
) -> FederatedDataset:
    """iid recipe: one pool of standard-normal features, linear targets.

    Features are N(0, I), a single coefficient vector is N(0, I), and raw
    targets are round(x . beta).  Least squares keeps the rounded value as
    a float target; softmax maps it to ``num_classes`` labels by
    equal-mass quantile binning.  Clients are consecutive equal chunks.
    """
    rng = _as_rng(seed)
    total = n_clients * samples_per_client
    x = rng.standard_normal((total, dim))
    beta = rng.standard_normal(dim)
    rounded = np.round(x @ beta)
    if task is TaskKind.LEAST_SQUARES:
        labels = rounded
        classes = None
    else:
        edges = np.quantile(rounded, np.linspace(0.0, 1.0, num_classes + 1)[1:-1])
        labels = np.searchsorted(edges, rounded, side="right").astype(np.int64)
        classes = num_classes
    clients = []
    for k in range(n_clients):
        rows = slice(k * samples_per_client, (k + 1) * samples_per_client)
        clients.append(split_train_val(x[rows], labels[rows], val_fraction))
    return FederatedDataset.from_splits(task, clients, classes)


def generate_synthetic_alpha(
    alpha: float,
    beta_h: float,
    n_clients: int,
    n_per_client,
    dim: int = 60,
    classes: int = 10,
    seed=0,
    val_fraction: float = 0.2,
) -> FederatedDataset:
    """Heterogeneous softmax recipe synthetic(alpha, beta).

    Per client k: a scalar center u_k ~ N(0, alpha) seeds the model
    parameters W_k, b_k ~ N(u_k, 1); a scalar center B_k ~ N(0, beta)
    seeds the feature means v_k ~ N(B_k, 1); features are
    N(v_k, diag(j^-1.2)) and labels are argmax softmax(W_k x + b_k).
    alpha spreads the per-client models, beta the per-client features.

    ``n_per_client`` is an int (equal sizes) or a per-client sequence.
    """
    rng = _as_rng(seed)
    if np.isscalar(n_per_client):
        counts = np.full(n_clients, int(n_per_client))
    else:
        counts = np.asarray(n_per_client, dtype=int)
        if counts.shape != (n_clients,):
            raise ValueError(f"n_per_client must be scalar or length {n_clients}")
    if np.any(counts < 2):
        raise ValueError("every client needs at least 2 samples")
    u = rng.normal(0.0, alpha, n_clients)
    b_center = rng.normal(0.0, beta_h, n_clients)
    feat_scale = np.sqrt(np.arange(1, dim + 1, dtype=float) ** -1.2)
    clients = []
    for k in range(n_clients):
        w_k = rng.normal(u[k], 1.0, (classes, dim))
        b_k = rng.normal(u[k], 1.0, classes)
        v_k = rng.normal(b_center[k], 1.0, dim)
        x = v_k + rng.standard_normal((counts[k], dim)) * feat_scale
        y = np.argmax(x @ w_k.T + b_k, axis=1).astype(np.int64)
        clients.append(split_train_val(x, y, val_fraction))
    return FederatedDataset.from_splits(TaskKind.SOFTMAX, clients, classes)


def lognormal_client_sizes(
    rng: np.random.Generator, n_clients: int, mean_log: float = 4.0, sigma_log: float = 2.0, floor: int = 50
) -> np.ndarray:
    """Heavy-tailed per-client sample counts (classic unbalanced recipe)."""
    return (rng.lognormal(mean_log, sigma_log, n_clients) + floor).astype(int)
