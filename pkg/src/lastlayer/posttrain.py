"""Last-layer fine-tuning: freeze everything below the output layer and
minimize the l2-regularized empirical risk over the last weight matrix.

With the lower layers frozen, the embedded training set is computed once
and cached; every subsequent iteration works in the last layer's input
space only, which is what makes these iterations cheap.  For squared
error with an identity output the problem is a ridge-regularized least
squares, and the full-batch path exploits that: it precomputes the
feature Gram and cross terms and evaluates objective and gradient in the
feature dimension, never touching the sample axis again.  The general
path (softmax/cross-entropy, or minibatch mode) keeps per-sample
computations but still only over cached features.

The optimized objective is  mean_i loss(act(f_i @ W.T), y_i) + lam * |W|^2
with |.| the Frobenius norm over the whole last-layer matrix.  When the
last layer has a bias it is folded in as a constant-1 feature column, so
it is regularized with the weights and shifts the implied kernel by +1.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .linalg import Matrix, matmul, sq_frobenius
from .network import (
    Network,
    check_loss_pairing,
    feature_map,
    loss_eval,
    replace_last_layer,
    softmax_rows,
)
from .rng import derive
from .train import (
    ARMIJO_SLOPE,
    MAX_HALVINGS,
    MetricPoint,
    MetricsSeries,
    TrainingDivergedError,
    _BatchStream,
    classification_error,
)

MODES = ("full_batch_backtracking", "minibatch")

RECOMMENDED_LAMBDA = (1e-5, 1e-2)


@dataclass
class PostTrainConfig:
    lam: float
    iterations: int
    mode: str = "full_batch_backtracking"
    batch_size: int = 128  # minibatch mode only
    lr: float = 0.05  # minibatch mode only
    seed: int = 0
    grad_tol: float = 0.0  # full-batch mode: stop when |g| <= grad_tol * (1 + |W|)

    def __post_init__(self):
        if self.lam <= 0.0:
            raise ValueError("lam must be positive")
        if self.grad_tol < 0.0:
            raise ValueError("grad_tol must be nonnegative")
        low, high = RECOMMENDED_LAMBDA
        if not low <= self.lam <= high:
            warnings.warn(
                f"lam = {self.lam:g} is outside the recommended range [{low:g}, {high:g}]"
            )
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr <= 0.0:
            raise ValueError("lr must be positive")


def effective_features(net: Network, x: Matrix) -> Matrix:
    """Embedded samples as seen by the last layer.

    Appends a constant-1 column when the last layer has a bias, so bias
    and weights are handled uniformly by the fine-tuning and kernel paths.
    """
    feats = feature_map(net, x)
    if net.layers[-1].spec.has_bias:
        feats = np.hstack([feats, np.ones((feats.shape[0], 1))])
    return feats


def effective_last_weights(net: Network) -> Matrix:
    """Last-layer matrix with the bias folded in as a trailing column."""
    last = net.layers[-1]
    if last.bias is None:
        return last.weights.copy()
    return np.hstack([last.weights, last.bias[:, None]])


def _split_effective(net: Network, w_eff: Matrix):
    if net.layers[-1].spec.has_bias:
        return w_eff[:, :-1], w_eff[:, -1]
    return w_eff, None


def _last_activation(net: Network, z: Matrix) -> Matrix:
    kind = net.layers[-1].spec.activation
    if kind == "identity":
        return z
    if kind == "softmax":
        return softmax_rows(z)
    raise ValueError(f"fine-tuning supports identity or softmax outputs, got {kind!r}")


def posttrain_objective(net: Network, data: Dataset, lam: float, loss: str) -> float:
    """Regularized last-layer objective at the network's current weights.

    lam = 0 is accepted for diagnostics (plain empirical loss); negative
    values are rejected.
    """
    if lam < 0.0:
        raise ValueError("lam must be nonnegative")
    check_loss_pairing(net, loss)
    feats = effective_features(net, data.x)
    w_eff = effective_last_weights(net)
    out = _last_activation(net, matmul(feats, w_eff.T))
    return loss_eval(loss, out, data.y) + lam * sq_frobenius(w_eff)


class _CachedProblem:
    """Last-layer problem over cached features; all sizes are desk-scale."""

    def __init__(self, net: Network, data: Dataset, lam: float, loss: str,
                 eval_data: Dataset | None):
        self.loss = loss
        self.lam = lam
        self.last_activation = net.layers[-1].spec.activation
        self.features = effective_features(net, data.x)
        self.targets = data.y
        self.n = data.n
        self.eval_features = None
        self.eval_targets = None
        if eval_data is not None:
            self.eval_features = effective_features(net, eval_data.x)
            self.eval_targets = eval_data.y
        self.quadratic = loss == "squared_error" and self.last_activation == "identity"
        if self.quadratic:
            # d x d precomputation: objective and gradient never touch the
            # sample axis again
            self.gram_feat = matmul(self.features.T, self.features)
            self.cross = matmul(self.features.T, self.targets)
            self.targets_sq = sq_frobenius(self.targets)

    def predictions(self, w_eff: Matrix, feats: Matrix) -> Matrix:
        z = matmul(feats, w_eff.T)
        return softmax_rows(z) if self.last_activation == "softmax" else z

    def objective(self, w_eff: Matrix) -> float:
        if self.quadratic:
            fit = (
                float(np.sum(matmul(w_eff, self.gram_feat) * w_eff))
                - 2.0 * float(np.sum(w_eff * self.cross.T))
                + self.targets_sq
            )
            return fit / self.n + self.lam * sq_frobenius(w_eff)
        out = self.predictions(w_eff, self.features)
        return loss_eval(self.loss, out, self.targets) + self.lam * sq_frobenius(w_eff)

    def gradient(self, w_eff: Matrix) -> Matrix:
        if self.quadratic:
            return (2.0 / self.n) * (
                matmul(w_eff, self.gram_feat) - self.cross.T
            ) + 2.0 * self.lam * w_eff
        return self._batch_gradient(w_eff, self.features, self.targets) + 2.0 * self.lam * w_eff

    def _batch_gradient(self, w_eff: Matrix, feats: Matrix, targets: Matrix) -> Matrix:
        out = self.predictions(w_eff, feats)
        batch = feats.shape[0]
        if self.loss == "squared_error":
            delta = (2.0 / batch) * (out - targets)
        else:
            delta = (out - targets) / batch
        return matmul(delta.T, feats)

    def minibatch_gradient(self, w_eff: Matrix, idx: np.ndarray) -> Matrix:
        return self._batch_gradient(
            w_eff, self.features[idx], self.targets[idx]
        ) + 2.0 * self.lam * w_eff

    def metric_point(self, w_eff: Matrix, iteration: int) -> MetricPoint:
        point = MetricPoint(iteration=iteration, train_loss=self.objective(w_eff))
        if self.loss == "cross_entropy":
            out = self.predictions(w_eff, self.features)
            point.train_error = classification_error(out, self.targets)
        if self.eval_features is not None:
            eval_out = self.predictions(w_eff, self.eval_features)
            point.test_loss = loss_eval(self.loss, eval_out, self.eval_targets)
            if self.loss == "cross_entropy":
                point.test_error = classification_error(eval_out, self.eval_targets)
        return point


def post_train(
    net: Network,
    data: Dataset,
    cfg: PostTrainConfig,
    loss: str,
    eval_data: Dataset | None = None,
):
    """Optimize the last layer on frozen features; lower layers are returned
    bit-identical.

    The recorded train metric is the regularized objective on the full
    training set (so in full_batch_backtracking mode the series is
    non-increasing); the test metric is the plain loss on eval_data.
    Dropout is never applied here: it would change the frozen feature
    function.
    """
    check_loss_pairing(net, loss)
    problem = _CachedProblem(net, data, cfg.lam, loss, eval_data)
    w_eff = effective_last_weights(net)
    metrics = MetricsSeries()

    if cfg.mode == "full_batch_backtracking":
        objective = problem.objective(w_eff)
        if math.isnan(objective):
            raise TrainingDivergedError(0)
        metrics.append(problem.metric_point(w_eff, 0))
        step = 1.0
        stop_tol = max(cfg.grad_tol, 1e-14)
        for it in range(1, cfg.iterations + 1):
            grad = problem.gradient(w_eff)
            grad_sq = sq_frobenius(grad)
            if math.sqrt(grad_sq) <= stop_tol * (1.0 + math.sqrt(sq_frobenius(w_eff))):
                metrics.termination = "converged"
                break
            step *= 2.0
            accepted = False
            for _ in range(MAX_HALVINGS + 1):
                trial = w_eff - step * grad
                trial_objective = problem.objective(trial)
                if trial_objective <= objective - ARMIJO_SLOPE * step * grad_sq:
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                metrics.termination = "stalled"
                break
            w_eff = trial
            objective = trial_objective
            if math.isnan(objective):
                raise TrainingDivergedError(it)
            metrics.append(problem.metric_point(w_eff, it))
    else:
        if cfg.batch_size > data.n:
            raise ValueError(
                f"batch_size {cfg.batch_size} exceeds dataset size {data.n}"
            )
        stream = _BatchStream(data.n, cfg.batch_size, derive(cfg.seed, "posttrain"))
        metrics.append(problem.metric_point(w_eff, 0))
        for it in range(cfg.iterations):
            idx = stream.batch(it)
            grad = problem.minibatch_gradient(w_eff, idx)
            w_eff = w_eff - cfg.lr * grad
            if not np.all(np.isfinite(w_eff)):
                raise TrainingDivergedError(it)
            metrics.append(problem.metric_point(w_eff, it + 1))

    weights, bias = _split_effective(net, w_eff)
    return replace_last_layer(net, weights, bias), metrics
