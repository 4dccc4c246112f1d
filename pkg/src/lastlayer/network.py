"""Dense feedforward networks and exact reverse-mode gradients.

A network is an ordered list of affine layers with elementwise activations;
the final layer plays a special role throughout this package: the layers
below it form the feature map that embeds inputs into the last layer's
input space, and several consumers (the last-layer fine-tuning step, the
kernel solver) treat that embedding as fixed.

Weights are stored output_dim x input_dim; a batch is a matrix with one
sample per row, so a layer computes ``act(x @ W.T + b)``.  Networks are
treated as immutable values: training code copies before updating.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import jsonio
from .linalg import DimensionMismatchError, Matrix, matmul
from .rng import Rng, derive

ACTIVATIONS = ("identity", "tanh", "relu", "softmax")
LOSSES = ("squared_error", "cross_entropy")

NETWORK_FORMAT_VERSION = 1

# floor applied to predicted class probabilities inside the log
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LayerSpec:
    input_dim: int
    output_dim: int
    activation: str
    has_bias: bool = True

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError(f"layer dimensions must be >= 1, got {self}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(
                f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}"
            )


@dataclass
class Layer:
    spec: LayerSpec
    weights: Matrix
    bias: Optional[np.ndarray] = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        expected = (self.spec.output_dim, self.spec.input_dim)
        if self.weights.shape != expected:
            raise DimensionMismatchError(
                f"layer weights must be {expected}, got {self.weights.shape}"
            )
        if self.spec.has_bias:
            if self.bias is None:
                raise ValueError("layer spec requires a bias vector")
            self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
            if self.bias.shape != (self.spec.output_dim,):
                raise DimensionMismatchError(
                    f"bias must have length {self.spec.output_dim}, got {self.bias.shape}"
                )
        elif self.bias is not None:
            raise ValueError("layer spec has has_bias=False but a bias was given")

    def copy(self) -> "Layer":
        return Layer(self.spec, self.weights.copy(), None if self.bias is None else self.bias.copy())


@dataclass
class Network:
    layers: list

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        for lower, upper in zip(self.layers, self.layers[1:]):
            if lower.spec.output_dim != upper.spec.input_dim:
                raise DimensionMismatchError(
                    f"layer chain broken: output_dim {lower.spec.output_dim} feeds "
                    f"input_dim {upper.spec.input_dim}"
                )
        for layer in self.layers[:-1]:
            if layer.spec.activation == "softmax":
                raise ValueError("softmax is only allowed on the last layer")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].spec.input_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].spec.output_dim

    def copy(self) -> "Network":
        return Network([layer.copy() for layer in self.layers])


@dataclass
class ForwardTrace:
    """Per-layer pre- and post-activations for one batch.

    ``post`` holds what the next layer actually consumed, which includes
    dropout masking when a mask was supplied.
    """

    pre: list
    post: list

    @property
    def output(self) -> Matrix:
        return self.post[-1]


@dataclass
class Gradients:
    """Gradients of the batch-mean loss, one entry per layer."""

    weights: list
    biases: list  # None entries where the layer has no bias


# ---------------------------------------------------------------------------
# structural probe: counts matrix products attributable to non-final layers,
# used to verify that last-layer fine-tuning never re-runs the feature stack
# ---------------------------------------------------------------------------

@dataclass
class OpProbe:
    lower_layer_products: int = 0


_ACTIVE_PROBES: list = []


@contextmanager
def probe_lower_layer_products():
    probe = OpProbe()
    _ACTIVE_PROBES.append(probe)
    try:
        yield probe
    finally:
        _ACTIVE_PROBES.remove(probe)


def _tally_lower_products(count: int) -> None:
    if count and _ACTIVE_PROBES:
        for probe in _ACTIVE_PROBES:
            probe.lower_layer_products += count


def softmax_rows(z: Matrix) -> Matrix:
    """Row-wise softmax with max-subtraction for overflow safety."""
    shifted = z - np.max(z, axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=1, keepdims=True)


def _apply_activation(kind: str, z: Matrix) -> Matrix:
    if kind == "identity":
        return z
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "softmax":
        return softmax_rows(z)
    raise ValueError(f"unknown activation {kind!r}")


def _activation_derivative(kind: str, pre: Matrix) -> Optional[Matrix]:
    """d(act)/d(pre), or None for identity.  relu'(0) is fixed to 0."""
    if kind == "identity":
        return None
    if kind == "tanh":
        t = np.tanh(pre)
        return 1.0 - t * t
    if kind == "relu":
        return (pre > 0.0).astype(np.float64)
    raise ValueError(f"no elementwise derivative for activation {kind!r}")


def build_network(specs, seed: int) -> Network:
    """Seeded network: weights uniform on [-a, a], a = sqrt(6/(fan_in+fan_out)).

    Biases start at zero.  Each layer draws from its own derived stream so
    the initialization of layer l does not depend on the widths of other
    layers.
    """
    layers = []
    for index, spec in enumerate(specs):
        rng = Rng(derive(seed, "init", index))
        bound = math.sqrt(6.0 / (spec.input_dim + spec.output_dim))
        weights = rng.uniform_matrix(spec.output_dim, spec.input_dim, -bound, bound)
        bias = np.zeros(spec.output_dim) if spec.has_bias else None
        layers.append(Layer(spec, weights, bias))
    return Network(layers)


def _check_input(net: Network, x: Matrix) -> Matrix:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionMismatchError(f"input batch must be 2-D, got ndim={x.ndim}")
    if x.shape[1] != net.input_dim:
        raise DimensionMismatchError(
            f"input has {x.shape[1]} columns but the network expects {net.input_dim}"
        )
    return x


def _check_masks(net: Network, dropout_masks) -> list:
    n_hidden = net.depth - 1
    if dropout_masks is None:
        return [None] * n_hidden
    if len(dropout_masks) != n_hidden:
        raise DimensionMismatchError(
            f"expected {n_hidden} dropout masks (one per hidden layer), got {len(dropout_masks)}"
        )
    return list(dropout_masks)


def forward(net: Network, x: Matrix, dropout_masks=None) -> ForwardTrace:
    """Run the batch through every layer, recording pre/post activations.

    ``dropout_masks`` (training only) are already-scaled multiplicative
    masks applied to hidden post-activations; the last layer is never
    masked.
    """
    x = _check_input(net, x)
    masks = _check_masks(net, dropout_masks)
    pre, post = [], []
    current = x
    for index, layer in enumerate(net.layers):
        z = matmul(current, layer.weights.T)
        if layer.bias is not None:
            z = z + layer.bias[None, :]
        a = _apply_activation(layer.spec.activation, z)
        if index < net.depth - 1 and masks[index] is not None:
            a = a * masks[index]
        pre.append(z)
        post.append(a)
        current = a
    _tally_lower_products(net.depth - 1)
    return ForwardTrace(pre, post)


def feature_map(net: Network, x: Matrix) -> Matrix:
    """Embedding computed by all layers below the last one.

    For a single-layer network the embedding is the raw input.  Dropout is
    never applied here: the feature map is the frozen, deterministic part
    of the network.
    """
    x = _check_input(net, x)
    if net.depth == 1:
        return x.copy()
    current = x
    for layer in net.layers[:-1]:
        z = matmul(current, layer.weights.T)
        if layer.bias is not None:
            z = z + layer.bias[None, :]
        current = _apply_activation(layer.spec.activation, z)
    _tally_lower_products(net.depth - 1)
    return current


def _check_one_hot(targets: Matrix) -> None:
    ok = np.all((targets == 0.0) | (targets == 1.0)) and np.all(
        np.sum(targets, axis=1) == 1.0
    )
    if not ok:
        raise ValueError("cross_entropy targets must be one-hot rows")


def loss_eval(loss: str, output: Matrix, targets: Matrix) -> float:
    """Batch-mean loss.

    squared_error sums squared deviations over output dimensions per sample
    (no per-dimension averaging); cross_entropy is -log of the predicted
    probability of the true class, floored at 1e-12.
    """
    output = np.asarray(output, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if output.shape != targets.shape:
        raise DimensionMismatchError(
            f"output shape {output.shape} != target shape {targets.shape}"
        )
    if loss == "squared_error":
        diff = output - targets
        return float(np.sum(diff * diff)) / output.shape[0]
    if loss == "cross_entropy":
        _check_one_hot(targets)
        row_sums = np.sum(output, axis=1)
        if np.max(np.abs(row_sums - 1.0)) > 1e-6:
            raise ValueError("cross_entropy expects output rows summing to 1")
        p_true = np.sum(output * targets, axis=1)
        return float(np.mean(-np.log(np.maximum(p_true, PROB_FLOOR))))
    raise ValueError(f"unknown loss {loss!r}; expected one of {LOSSES}")


def check_loss_pairing(net: Network, loss: str) -> None:
    """squared_error pairs with identity output, cross_entropy with softmax."""
    last = net.layers[-1].spec.activation
    if loss == "squared_error" and last != "identity":
        raise ValueError("squared_error requires an identity last activation")
    if loss == "cross_entropy" and last != "softmax":
        raise ValueError("cross_entropy requires a softmax last activation")
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}")


def loss_and_gradients(
    net: Network, x: Matrix, y: Matrix, loss: str, dropout_masks=None
):
    """Batch-mean loss and its exact gradients in one backward pass.

    The softmax/cross-entropy pairing uses the standard simplification:
    the output-layer error is (probabilities - one_hot) / batch.
    """
    check_loss_pairing(net, loss)
    x = _check_input(net, x)
    y = np.asarray(y, dtype=np.float64)
    masks = _check_masks(net, dropout_masks)
    trace = forward(net, x, dropout_masks=dropout_masks)
    out = trace.output
    if out.shape != y.shape:
        raise DimensionMismatchError(
            f"network output shape {out.shape} != target shape {y.shape}"
        )
    batch = x.shape[0]
    value = loss_eval(loss, out, y)

    if loss == "squared_error":
        delta = (2.0 / batch) * (out - y)
    else:
        delta = (out - y) / batch

    depth = net.depth
    weight_grads = [None] * depth
    bias_grads = [None] * depth
    lower_products = 0
    for index in range(depth - 1, -1, -1):
        layer = net.layers[index]
        below = x if index == 0 else trace.post[index - 1]
        weight_grads[index] = matmul(delta.T, below)
        if index < depth - 1:
            lower_products += 1
        if layer.bias is not None:
            bias_grads[index] = np.sum(delta, axis=0)
        if index > 0:
            upstream = matmul(delta, layer.weights)
            lower_products += 1
            if masks[index - 1] is not None:
                upstream = upstream * masks[index - 1]
            deriv = _activation_derivative(
                net.layers[index - 1].spec.activation, trace.pre[index - 1]
            )
            delta = upstream if deriv is None else upstream * deriv
    _tally_lower_products(lower_products)
    return value, Gradients(weight_grads, bias_grads)


def backprop(net: Network, x: Matrix, y: Matrix, loss: str, dropout_masks=None) -> Gradients:
    """Exact gradients of the batch-mean loss for every weight and bias."""
    _, grads = loss_and_gradients(net, x, y, loss, dropout_masks=dropout_masks)
    return grads


def replace_last_layer(net: Network, weights: Matrix, bias=None) -> Network:
    """New network sharing bit-identical lower layers with a new last layer."""
    weights = np.asarray(weights, dtype=np.float64)
    last_spec = net.layers[-1].spec
    if weights.shape != (last_spec.output_dim, last_spec.input_dim):
        raise DimensionMismatchError(
            f"replacement weights must be {(last_spec.output_dim, last_spec.input_dim)}, "
            f"got {weights.shape}"
        )
    layers = [layer.copy() for layer in net.layers[:-1]]
    layers.append(Layer(last_spec, weights.copy(), None if bias is None else np.asarray(bias, dtype=np.float64).copy()))
    return Network(layers)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _matrix_to_lists(a: Matrix) -> list:
    return [[float(v) for v in row] for row in np.asarray(a, dtype=np.float64)]


def layer_to_dict(layer: Layer) -> dict:
    return {
        "input_dim": layer.spec.input_dim,
        "output_dim": layer.spec.output_dim,
        "activation": layer.spec.activation,
        "has_bias": layer.spec.has_bias,
        "weights": _matrix_to_lists(layer.weights),
        "bias": None if layer.bias is None else [float(v) for v in layer.bias],
    }


def layer_from_dict(doc: dict) -> Layer:
    spec = LayerSpec(
        input_dim=int(doc["input_dim"]),
        output_dim=int(doc["output_dim"]),
        activation=doc["activation"],
        has_bias=bool(doc["has_bias"]),
    )
    weights = np.array(doc["weights"], dtype=np.float64)
    bias = None if doc.get("bias") is None else np.array(doc["bias"], dtype=np.float64)
    return Layer(spec, weights, bias)


def network_to_dict(net: Network) -> dict:
    return {
        "format_version": NETWORK_FORMAT_VERSION,
        "layers": [layer_to_dict(layer) for layer in net.layers],
    }


def network_from_dict(doc: dict) -> Network:
    version = doc.get("format_version")
    if version != NETWORK_FORMAT_VERSION:
        raise ValueError(f"unsupported network format_version {version!r}")
    return Network([layer_from_dict(item) for item in doc["layers"]])


def save_network(net: Network, path: str) -> None:
    jsonio.dump(network_to_dict(net), path)


def load_network(path: str) -> Network:
    return network_from_dict(jsonio.load(path))
