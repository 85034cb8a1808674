"""Training objectives over flat parameter vectors.

Multinomial logistic regression (softmax cross-entropy, optional L2
term) and a synthetic family of strongly convex client quadratics with
controllable heterogeneity. Both expose gradients on the flattened
parameter vector so the federated engine never needs to know shapes.

Logistic weights flatten row-major from (n_classes, n_features): each
class occupies one contiguous block, so for image features adjacent
coordinates are (mostly) adjacent pixels. The spectral tooling relies
on that layout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

__all__ = [
    "LogisticModel",
    "logistic_loss_grad",
    "per_example_xent",
    "predict",
    "accuracy",
    "LogisticTask",
    "QuadraticFamily",
    "quad_make",
    "quad_eval",
    "client_quad",
    "gradient_dissimilarity",
    "QuadraticTask",
]


def _log_softmax(w: np.ndarray, X: np.ndarray, n_classes: int) -> np.ndarray:
    W = w.reshape(n_classes, -1)
    assert X.shape[1] == W.shape[1], "feature width does not match weights"
    logits = X @ W.T
    logits -= logits.max(axis=1, keepdims=True)
    return logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))


def logistic_loss_grad(
    w: np.ndarray,
    X: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    weight_decay: float = 0.0,
) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient on the flat weights.

    The L2 term is 0.5 * weight_decay * ||w||^2, gradient weight_decay*w.
    A zero weight vector scores log(n_classes) on any batch.
    """
    n = X.shape[0]
    assert n >= 1 and y.shape == (n,)
    logp = _log_softmax(w, X, n_classes)
    nll = -float(logp[np.arange(n), y].mean())
    P = np.exp(logp)
    P[np.arange(n), y] -= 1.0
    G = (P.T @ X) / n
    loss = nll + 0.5 * weight_decay * float(np.dot(w, w))
    grad = G.ravel() + weight_decay * w
    return loss, grad


def per_example_xent(
    w: np.ndarray, X: np.ndarray, y: np.ndarray, n_classes: int
) -> np.ndarray:
    """Per-sample cross-entropy, no regularization term."""
    logp = _log_softmax(w, X, n_classes)
    return -logp[np.arange(X.shape[0]), y]


def predict(w: np.ndarray, X: np.ndarray, n_classes: int) -> np.ndarray:
    return np.argmax(X @ w.reshape(n_classes, -1).T, axis=1)


def accuracy(w: np.ndarray, X: np.ndarray, y: np.ndarray, n_classes: int) -> float:
    return float(np.mean(predict(w, X, n_classes) == y))


@dataclass(frozen=True)
class LogisticModel:
    """Flat multinomial logistic weights plus their shape metadata."""

    weights: np.ndarray
    n_classes: int
    n_features: int

    def __post_init__(self) -> None:
        assert self.weights.size == self.n_classes * self.n_features

    def loss_grad(
        self, X: np.ndarray, y: np.ndarray, weight_decay: float = 0.0
    ) -> tuple[float, np.ndarray]:
        return logistic_loss_grad(self.weights, X, y, self.n_classes, weight_decay)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return predict(self.weights, X, self.n_classes)


class LogisticTask:
    """Engine adapter: minibatch logistic SGD over per-client shards."""

    def __init__(self, shards, n_classes: int):
        assert len(shards) >= 1
        self.shards = shards
        self.n_classes = n_classes

    def steps_per_epoch(self, client: int, batch_size: int) -> int:
        return math.ceil(len(self.shards[client].labels) / batch_size)

    def batches(
        self, client: int, rng: np.random.Generator, batch_size: int
    ) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        shard = self.shards[client]
        n = len(shard.labels)
        while True:
            order = rng.permutation(n)
            for lo in range(0, n, batch_size):
                idx = order[lo : lo + batch_size]
                yield shard.features[idx], shard.labels[idx]

    def loss_grad(self, w: np.ndarray, batch) -> tuple[float, np.ndarray]:
        X, y = batch
        return logistic_loss_grad(w, X, y, self.n_classes)


@dataclass(frozen=True)
class QuadraticFamily:
    """Client objectives f_j(w) = 0.5 w'A_j w - b_j'w with shared curvature band.

    `mu` and `beta` are the extreme eigenvalues of the mean Hessian, so
    the average objective is mu-strongly convex and beta-smooth. All
    clients share the minimizer of the mean objective; `hetero`
    controls how far the individual minimizers spread around it.
    """

    A: np.ndarray
    b: np.ndarray
    mean_A: np.ndarray
    mean_b: np.ndarray
    w_opt: np.ndarray
    f_opt: float
    mu: float
    beta: float
    hetero: float

    @property
    def n_clients(self) -> int:
        return self.A.shape[0]

    @property
    def dim(self) -> int:
        return self.A.shape[1]


def quad_make(
    n_clients: int,
    dim: int,
    mu: float,
    beta: float,
    hetero: float,
    seed: int,
) -> QuadraticFamily:
    """Sample a family with per-client spectra log-uniform in [mu, beta].

    b_j = A_j w_shared + g_j with the g_j summing to zero, so the mean
    objective's minimizer is exactly w_shared for every heterogeneity
    level, while the client gradients at the optimum are the -g_j.
    """
    assert n_clients >= 1 and dim >= 1
    assert 0.0 < mu <= beta and hetero >= 0.0
    rng = np.random.default_rng(seed)
    A = np.empty((n_clients, dim, dim))
    for j in range(n_clients):
        Q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        eigs = np.exp(rng.uniform(math.log(mu), math.log(beta), size=dim))
        A[j] = (Q * eigs) @ Q.T
        A[j] = 0.5 * (A[j] + A[j].T)
    w_shared = rng.normal(size=dim)
    g = hetero * rng.normal(size=(n_clients, dim))
    g -= g.mean(axis=0)
    b = np.einsum("jkl,l->jk", A, w_shared) + g
    mean_A = A.mean(axis=0)
    mean_b = b.mean(axis=0)
    w_opt = np.linalg.solve(mean_A, mean_b)
    f_opt = 0.5 * float(w_opt @ mean_A @ w_opt) - float(mean_b @ w_opt)
    eigs = np.linalg.eigvalsh(mean_A)
    return QuadraticFamily(
        A=A,
        b=b,
        mean_A=mean_A,
        mean_b=mean_b,
        w_opt=w_opt,
        f_opt=f_opt,
        mu=float(eigs[0]),
        beta=float(eigs[-1]),
        hetero=float(hetero),
    )


def quad_eval(family: QuadraticFamily, w: np.ndarray) -> tuple[float, np.ndarray, float]:
    """(mean objective value, its gradient, suboptimality gap) at w."""
    value = 0.5 * float(w @ family.mean_A @ w) - float(family.mean_b @ w)
    grad = family.mean_A @ w - family.mean_b
    return value, grad, value - family.f_opt


def client_quad(
    family: QuadraticFamily, client: int, w: np.ndarray
) -> tuple[float, np.ndarray]:
    value = 0.5 * float(w @ family.A[client] @ w) - float(family.b[client] @ w)
    return value, family.A[client] @ w - family.b[client]


def gradient_dissimilarity(family: QuadraticFamily) -> float:
    """Mean squared client-gradient norm at the shared optimum."""
    resid = np.einsum("jkl,l->jk", family.A, family.w_opt) - family.b
    return float(np.mean(np.sum(resid * resid, axis=1)))


class QuadraticTask:
    """Engine adapter: one exact client gradient per local step."""

    def __init__(self, family: QuadraticFamily):
        self.family = family

    def steps_per_epoch(self, client: int, batch_size: int) -> int:
        return 1

    def batches(self, client: int, rng: np.random.Generator, batch_size: int):
        while True:
            yield client

    def loss_grad(self, w: np.ndarray, batch: int) -> tuple[float, np.ndarray]:
        return client_quad(self.family, batch, w)
