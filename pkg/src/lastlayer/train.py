"""Minibatch SGD training and a deterministic full-batch descent variant.

Batches come from a counter-based stream: epoch e is a seeded permutation
of the sample indices, and batch t reads positions t*B .. t*B+B-1 of the
concatenated epoch streams (wrapping across epoch boundaries).  Together
with per-iteration dropout streams this makes a training run a pure
function of (network, data, config), so a run resumed from iteration t is
bit-identical to an uninterrupted one.

``full_batch_gd`` is the deterministic workhorse used by tests and by the
last-layer fine-tuning step: plain gradient descent with an Armijo
backtracking line search, which guarantees a non-increasing objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import jsonio
from .data import Dataset
from .linalg import Matrix, sq_frobenius
from .network import (
    Network,
    check_loss_pairing,
    forward,
    loss_and_gradients,
    loss_eval,
)
from .rng import Rng, derive

ARMIJO_SLOPE = 1e-4
MAX_HALVINGS = 50


class TrainingDivergedError(RuntimeError):
    """Loss became NaN; carries the iteration at which it happened."""

    def __init__(self, iteration: int):
        self.iteration = iteration
        super().__init__(f"training diverged: NaN loss at iteration {iteration}")


@dataclass
class TrainConfig:
    iterations: int
    batch_size: int
    lr0: float
    lr_decay: float = 1.0
    dropout_keep: Optional[list] = None  # one keep probability per hidden layer
    weight_decay: float = 0.0
    seed: int = 0
    eval_every: int = 100

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr0 <= 0.0:
            raise ValueError("lr0 must be positive")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.weight_decay < 0.0:
            raise ValueError("weight_decay must be nonnegative")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.dropout_keep is not None:
            for keep in self.dropout_keep:
                if not 0.0 < keep <= 1.0:
                    raise ValueError("dropout keep probabilities must lie in (0, 1]")


@dataclass
class MetricPoint:
    iteration: int
    train_loss: float
    test_loss: Optional[float] = None
    train_error: Optional[float] = None
    test_error: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "train_loss": self.train_loss,
            "test_loss": self.test_loss,
            "train_error": self.train_error,
            "test_error": self.test_error,
        }


@dataclass
class MetricsSeries:
    points: list = field(default_factory=list)
    termination: Optional[str] = None  # set by full-batch descent on early stop

    def __post_init__(self):
        for prev, cur in zip(self.points, self.points[1:]):
            if cur.iteration <= prev.iteration:
                raise ValueError("metric iterations must be strictly increasing")

    def append(self, point: MetricPoint) -> None:
        if self.points and point.iteration <= self.points[-1].iteration:
            raise ValueError("metric iterations must be strictly increasing")
        self.points.append(point)

    def train_losses(self) -> list:
        return [p.train_loss for p in self.points]

    def to_jsonl(self) -> str:
        return "".join(jsonio.dumps(p.to_dict()) + "\n" for p in self.points)

    def to_csv(self) -> str:
        def cell(v):
            return "" if v is None else jsonio.format_float(v)

        lines = ["iteration,train_loss,test_loss,train_error,test_error"]
        for p in self.points:
            lines.append(
                f"{p.iteration},{jsonio.format_float(p.train_loss)},"
                f"{cell(p.test_loss)},{cell(p.train_error)},{cell(p.test_error)}"
            )
        return "\n".join(lines) + "\n"

    def write_jsonl(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())

    def write_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())


def classification_error(output: Matrix, targets: Matrix) -> float:
    """Fraction of rows whose argmax disagrees with the target argmax."""
    pred = np.argmax(output, axis=1)
    true = np.argmax(targets, axis=1)
    return float(np.mean(pred != true))


def _evaluate(net: Network, loss: str, data: Dataset, eval_data: Optional[Dataset], iteration: int) -> MetricPoint:
    out = forward(net, data.x).output
    point = MetricPoint(iteration=iteration, train_loss=loss_eval(loss, out, data.y))
    if loss == "cross_entropy":
        point.train_error = classification_error(out, data.y)
    if eval_data is not None:
        test_out = forward(net, eval_data.x).output
        point.test_loss = loss_eval(loss, test_out, eval_data.y)
        if loss == "cross_entropy":
            point.test_error = classification_error(test_out, eval_data.y)
    return point


class _BatchStream:
    """Deterministic index stream: seeded shuffle per epoch, wraparound."""

    def __init__(self, n: int, batch_size: int, seed: int):
        self.n = n
        self.batch_size = batch_size
        self.seed = seed
        self._perms: dict = {}

    def _perm(self, epoch: int) -> np.ndarray:
        if epoch not in self._perms:
            self._perms[epoch] = Rng(derive(self.seed, "shuffle", epoch)).permutation(self.n)
        return self._perms[epoch]

    def batch(self, iteration: int) -> np.ndarray:
        start = iteration * self.batch_size
        idx = np.empty(self.batch_size, dtype=np.int64)
        for offset in range(self.batch_size):
            pos = start + offset
            idx[offset] = self._perm(pos // self.n)[pos % self.n]
        return idx


def _dropout_masks(net: Network, cfg: TrainConfig, iteration: int, batch: int):
    """Inverted dropout masks for one iteration, or None when disabled.

    Each iteration draws from its own derived stream (resumability); layers
    with keep probability exactly 1.0 consume no randomness.
    """
    if cfg.dropout_keep is None or all(k == 1.0 for k in cfg.dropout_keep):
        return None
    rng = Rng(derive(cfg.seed, "dropout", iteration))
    masks = []
    for layer, keep in zip(net.layers[:-1], cfg.dropout_keep):
        if keep == 1.0:
            masks.append(None)
            continue
        width = layer.spec.output_dim
        u = rng.uniforms(batch * width).reshape(batch, width)
        masks.append((u < keep).astype(np.float64) / keep)
    return masks


def sgd_train(
    net: Network,
    data: Dataset,
    cfg: TrainConfig,
    loss: str,
    eval_data: Optional[Dataset] = None,
    start_iteration: int = 0,
):
    """Run exactly cfg.iterations minibatch steps, returning a new network.

    The update is W <- W - lr_t * (grad + 2 * weight_decay * W) with
    lr_t = lr0 * lr_decay^t and t the global iteration index (so a resumed
    run continues the same schedule).  Weight decay does not touch biases.
    Metrics are recorded every cfg.eval_every iterations on the full
    training set (and on eval_data when given), with dropout off.
    """
    check_loss_pairing(net, loss)
    if cfg.batch_size > data.n:
        raise ValueError(f"batch_size {cfg.batch_size} exceeds dataset size {data.n}")
    n_hidden = net.depth - 1
    if cfg.dropout_keep is not None and len(cfg.dropout_keep) != n_hidden:
        raise ValueError(
            f"dropout_keep must list {n_hidden} probabilities, got {len(cfg.dropout_keep)}"
        )

    current = net.copy()
    metrics = MetricsSeries()
    stream = _BatchStream(data.n, cfg.batch_size, cfg.seed)

    for t in range(start_iteration, start_iteration + cfg.iterations):
        idx = stream.batch(t)
        xb = data.x[idx]
        yb = data.y[idx]
        masks = _dropout_masks(current, cfg, t, cfg.batch_size)
        batch_loss, grads = loss_and_gradients(current, xb, yb, loss, dropout_masks=masks)
        if math.isnan(batch_loss):
            raise TrainingDivergedError(t)
        lr_t = cfg.lr0 * cfg.lr_decay**t
        for layer, gw, gb in zip(current.layers, grads.weights, grads.biases):
            if cfg.weight_decay > 0.0:
                layer.weights -= lr_t * (gw + 2.0 * cfg.weight_decay * layer.weights)
            else:
                layer.weights -= lr_t * gw
            if gb is not None:
                layer.bias -= lr_t * gb
        if (t + 1) % cfg.eval_every == 0:
            metrics.append(_evaluate(current, loss, data, eval_data, t + 1))
    return current, metrics


def _decayed_objective(net: Network, data: Dataset, loss: str, weight_decay: float) -> float:
    value = loss_eval(loss, forward(net, data.x).output, data.y)
    if weight_decay > 0.0:
        value += weight_decay * sum(sq_frobenius(layer.weights) for layer in net.layers)
    return value


def full_batch_gd(
    net: Network,
    data: Dataset,
    iterations: int,
    loss: str,
    lr: Optional[float] = None,
    weight_decay: float = 0.0,
    eval_data: Optional[Dataset] = None,
):
    """Deterministic full-batch gradient descent.

    With lr=None an Armijo backtracking line search picks the step: start
    from twice the previously accepted step and halve (at most 50 times)
    until f(w - s g) <= f(w) - 1e-4 s |g|^2.  The recorded objective is then
    non-increasing by construction; if no step is accepted the run stops
    and metrics.termination reports "stalled".  The recorded train metric
    is the full objective including the weight-decay term.
    """
    check_loss_pairing(net, loss)
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if lr is not None and lr <= 0.0:
        raise ValueError("lr must be positive (or None for backtracking)")
    if weight_decay < 0.0:
        raise ValueError("weight_decay must be nonnegative")

    current = net.copy()
    metrics = MetricsSeries()

    def record(iteration: int, objective: float) -> None:
        point = _evaluate(current, loss, data, eval_data, iteration)
        point.train_loss = objective
        metrics.append(point)

    objective = _decayed_objective(current, data, loss, weight_decay)
    record(0, objective)
    step = 1.0
    for it in range(1, iterations + 1):
        _, grads = loss_and_gradients(current, data.x, data.y, loss)
        gw = []
        for layer, g in zip(current.layers, grads.weights):
            if weight_decay > 0.0:
                g = g + 2.0 * weight_decay * layer.weights
            gw.append(g)
        gb = grads.biases
        grad_sq = sum(sq_frobenius(g) for g in gw)
        grad_sq += sum(float(np.sum(g * g)) for g in gb if g is not None)

        def candidate(s: float) -> Network:
            trial = current.copy()
            for layer, g_w, g_b in zip(trial.layers, gw, gb):
                layer.weights -= s * g_w
                if g_b is not None:
                    layer.bias -= s * g_b
            return trial

        if lr is not None:
            trial = candidate(lr)
            current = trial
            objective = _decayed_objective(current, data, loss, weight_decay)
            record(it, objective)
            continue

        step *= 2.0
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            trial = candidate(step)
            trial_objective = _decayed_objective(trial, data, loss, weight_decay)
            if trial_objective <= objective - ARMIJO_SLOPE * step * grad_sq:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            metrics.termination = "stalled"
            break
        current = trial
        objective = trial_objective
        record(it, objective)
    return current, metrics
