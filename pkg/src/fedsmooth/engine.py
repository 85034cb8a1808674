"""Federated averaging with per-step clipping, Gaussian noise, and
server-side circulant smoothing.

One round: the server draws a client subset, each selected client runs
local SGD whose displacement from the round's global iterate is clipped
to radius L after every step, the server sums the clipped deltas in
ascending client order, adds isotropic Gaussian noise, applies the
inverse smoothing operator, scales by eta_g / K, and steps the global
iterate.

Randomness is counter-based: client j in round t always draws from
substream(seed, t, j) and the server from substream(seed, t, SERVER),
so results are bit-identical regardless of execution order or worker
thread count.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .smoothing import SmoothingOperator, make_operator, smooth_apply

__all__ = [
    "SERVER",
    "substream",
    "clip_to_ball",
    "FedConfig",
    "select_clients",
    "client_update",
    "aggregate",
    "RoundMetrics",
    "RunResult",
    "run",
    "subsample_mean_variance",
    "save_model",
    "load_model",
    "write_metrics_csv",
    "METRICS_HEADER",
]

SERVER = 0xFFFFFFFF

SCHEMES = ("uniform", "poisson")
AVERAGING = ("last", "uniform", "geometric")


def substream(seed: int, *path: int) -> np.random.Generator:
    """Independent generator keyed by (seed, *path); order of use is irrelevant."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(path)))


def clip_to_ball(v: np.ndarray, radius: float) -> np.ndarray:
    """Project v onto the l2 ball of the given radius (scale, keep direction)."""
    assert radius > 0.0
    norm = float(np.linalg.norm(v))
    if norm <= radius:
        return v.copy()
    return v * (radius / norm)


@dataclass(frozen=True)
class FedConfig:
    """Everything one federated run depends on.

    Exactly one of local_epochs / local_steps must be set; epochs convert
    per client as S = E * ceil(shard_size / batch_size). `mu` is the
    objective's strong-convexity constant, required only for geometric
    iterate averaging.
    """

    n_clients: int
    tau: float
    scheme: str
    rounds: int
    eta_l: float
    eta_g: float
    clip: float
    nu: float
    sigma: float = 0.0
    batch_size: int = 1
    local_epochs: int | None = None
    local_steps: int | None = None
    lr_decay: float = 1.0
    weight_decay: float = 0.0
    seed: int = 0
    averaging: str = "last"
    mu: float | None = None

    def __post_init__(self) -> None:
        assert self.n_clients >= 1
        assert 0.0 < self.tau <= 1.0, "participation ratio must be in (0, 1]"
        assert self.scheme in SCHEMES, f"unknown scheme {self.scheme!r}"
        assert self.averaging in AVERAGING, f"unknown averaging {self.averaging!r}"
        assert self.rounds >= 0
        assert self.eta_l > 0.0 and self.eta_g > 0.0
        assert self.clip > 0.0
        assert self.nu >= 0.0 and self.sigma >= 0.0
        assert self.batch_size >= 1
        assert 0.0 < self.lr_decay <= 1.0
        assert self.weight_decay >= 0.0
        assert (self.local_epochs is None) != (self.local_steps is None), (
            "set exactly one of local_epochs / local_steps"
        )
        if self.local_epochs is not None:
            assert self.local_epochs >= 1
        if self.local_steps is not None:
            assert self.local_steps >= 1

    @property
    def k_nominal(self) -> int:
        """Data-independent aggregation denominator round(tau * N), >= 1."""
        return max(1, round(self.tau * self.n_clients))


def select_clients(
    n_clients: int, tau: float, scheme: str, rng: np.random.Generator
) -> np.ndarray:
    """Ascending indices of this round's participants."""
    if scheme == "uniform":
        k = round(tau * n_clients)
        return np.sort(rng.choice(n_clients, size=k, replace=False))
    return np.flatnonzero(rng.random(n_clients) < tau)


def client_update(
    w_global: np.ndarray,
    batches,
    loss_grad: Callable,
    steps: int,
    lr: float,
    clip: float,
    weight_decay: float,
) -> np.ndarray:
    """Clipped local SGD; returns the client's delta w - w_global."""
    assert steps >= 1
    w = w_global.copy()
    for _ in range(steps):
        _, g = loss_grad(w, next(batches))
        if weight_decay:
            g = g + weight_decay * w
        w = w_global + clip_to_ball(w - lr * g - w_global, clip)
    return w - w_global


def aggregate(
    delta_sum: np.ndarray,
    op: SmoothingOperator,
    nu: float,
    eta_g: float,
    k_nominal: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Noise, smooth, and scale the summed client deltas into a global step."""
    assert k_nominal >= 1 and nu >= 0.0
    noisy = delta_sum + rng.normal(0.0, nu, size=delta_sum.shape) if nu > 0 else delta_sum
    return (eta_g / k_nominal) * smooth_apply(op, noisy)


class RoundMetrics(NamedTuple):
    round: int
    train_loss: float
    val_loss: float
    train_acc: float
    val_acc: float
    grad_norm: float
    k_selected: int


@dataclass
class RunResult:
    metrics: list[RoundMetrics]
    w_last: np.ndarray
    w_avg: np.ndarray
    diverged: bool


def run(
    cfg: FedConfig,
    task,
    init_w: np.ndarray,
    evaluate: Callable | None = None,
    observer: Callable | None = None,
    workers: int = 1,
) -> RunResult:
    """Run the full protocol from init_w.

    `task` provides batches(client, rng, batch_size), steps_per_epoch
    (client, batch_size), and loss_grad(w, batch). `evaluate(w)` returns
    (train_loss, val_loss, train_acc, val_acc) once per round; `observer
    (round_1based, fed_avg)` sees the pre-noise, pre-smoothing federated
    average of client deltas. Divergence (non-finite iterate) aborts the
    remaining rounds and flags the result.
    """
    w = np.asarray(init_w, dtype=np.float64).copy()
    dim = w.size
    op = make_operator(cfg.sigma, dim)
    q = None
    if cfg.averaging == "geometric":
        assert cfg.mu is not None, "geometric averaging needs the objective's mu"
        steps = cfg.local_steps if cfg.local_steps is not None else cfg.local_epochs
        mu_smooth = cfg.mu * float(op.inv_eigenvalues.min())
        q = 1.0 - mu_smooth * cfg.eta_l * cfg.eta_g * steps / 2.0
        assert 0.0 < q < 1.0, "geometric averaging needs 0 < 1 - mu_s*lr*S/2 < 1"

    # Iterate averages include w^0; the geometric accumulator keeps the
    # weights q^{-t} normalized as it goes so nothing overflows.
    avg_acc = w.copy()
    avg_wt = 1.0
    metrics: list[RoundMetrics] = []
    diverged = False

    def one_delta(t: int, j: int, lr: float) -> np.ndarray:
        rng = substream(cfg.seed, t, int(j))
        stream = task.batches(int(j), rng, cfg.batch_size)
        if cfg.local_steps is not None:
            steps = cfg.local_steps
        else:
            steps = cfg.local_epochs * task.steps_per_epoch(int(j), cfg.batch_size)
        return client_update(
            w, stream, task.loss_grad, steps, lr, cfg.clip, cfg.weight_decay
        )

    for t in range(cfg.rounds):
        lr = cfg.eta_l * cfg.lr_decay**t
        server_rng = substream(cfg.seed, t, SERVER)
        selected = select_clients(cfg.n_clients, cfg.tau, cfg.scheme, server_rng)
        if len(selected) > 0:
            if workers > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    deltas = list(pool.map(lambda j: one_delta(t, j, lr), selected))
            else:
                deltas = [one_delta(t, j, lr) for j in selected]
            delta_sum = np.sum(deltas, axis=0)
            if observer is not None:
                observer(t + 1, delta_sum / len(selected))
            update = aggregate(delta_sum, op, cfg.nu, cfg.eta_g, cfg.k_nominal, server_rng)
            w = w + update
            grad_norm = float(np.linalg.norm(update))
        else:
            grad_norm = 0.0

        if not np.all(np.isfinite(w)):
            diverged = True

        if evaluate is not None and not diverged:
            train_loss, val_loss, train_acc, val_acc = evaluate(w)
        else:
            train_loss = val_loss = train_acc = val_acc = math.nan
        metrics.append(
            RoundMetrics(
                round=t + 1,
                train_loss=float(train_loss),
                val_loss=float(val_loss),
                train_acc=float(train_acc),
                val_acc=float(val_acc),
                grad_norm=grad_norm,
                k_selected=int(len(selected)),
            )
        )
        if diverged:
            break

        if cfg.averaging == "uniform":
            avg_acc += w
            avg_wt += 1.0
        elif cfg.averaging == "geometric":
            avg_acc = q * avg_acc + w
            avg_wt = q * avg_wt + 1.0

    w_avg = w.copy() if cfg.averaging == "last" else avg_acc / avg_wt
    return RunResult(metrics=metrics, w_last=w, w_avg=w_avg, diverged=diverged)


def subsample_mean_variance(vectors: np.ndarray, subset_size: int) -> float:
    """Exact E||mean over a uniform size-S subset - grand mean||^2.

    Finite-population correction: (1/S) * (1 - (S-1)/(N-1)) times the
    population mean squared deviation. Zero when S = N.
    """
    xs = np.asarray(vectors, dtype=np.float64)
    xs = xs.reshape(xs.shape[0], -1)
    n = xs.shape[0]
    assert n >= 2 and 1 <= subset_size <= n
    centered = xs - xs.mean(axis=0)
    pop = float(np.mean(np.sum(centered * centered, axis=1)))
    return (1.0 / subset_size) * (1.0 - (subset_size - 1) / (n - 1)) * pop


def save_model(path: str, w: np.ndarray) -> None:
    """Flat float64 little-endian vector with an 8-byte length header."""
    w = np.ascontiguousarray(np.asarray(w, dtype=np.float64).ravel())
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", w.size))
        fh.write(w.astype("<f8").tobytes())


def load_model(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 8:
        raise ValueError(f"{path}: missing length header")
    (count,) = struct.unpack_from("<Q", buf, 0)
    if len(buf) != 8 + 8 * count:
        raise ValueError(f"{path}: expected {count} float64 values")
    return np.frombuffer(buf, dtype="<f8", offset=8).astype(np.float64)


METRICS_HEADER = "round,train_loss,val_loss,train_acc,val_acc,grad_norm,k_selected"


def write_metrics_csv(path: str, metrics: Sequence[RoundMetrics]) -> None:
    """Deterministic text: shortest round-trip float repr, LF endings."""
    lines = [METRICS_HEADER]
    for m in metrics:
        lines.append(
            ",".join(
                [
                    str(m.round),
                    repr(m.train_loss),
                    repr(m.val_loss),
                    repr(m.train_acc),
                    repr(m.val_acc),
                    repr(m.grad_norm),
                    str(m.k_selected),
                ]
            )
        )
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
