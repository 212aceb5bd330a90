"""Dense feedforward classifier with exact backpropagation and plain SGD.

The model substrate for the whole toolkit: an immutable stack of dense
layers, pure forward/backward/update functions, a deterministic training
loop, and a scikit-learn estimator wrapper (:class:`DenseClassifier`).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

ACTIVATIONS = ("identity", "relu", "sigmoid", "tanh", "softmax-output")
LOSSES = ("cross-entropy", "squared-error")

MODEL_FORMAT_VERSION = 1


def _as_readonly(a, dtype=np.float64):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Layer:
    """One dense layer: ``z = weights @ a_in + biases`` followed by ``activation``."""

    weights: np.ndarray  # (out, in)
    biases: np.ndarray   # (out,)
    activation: str

    def __post_init__(self):
        object.__setattr__(self, "weights", _as_readonly(self.weights))
        object.__setattr__(self, "biases", _as_readonly(self.biases))
        if self.weights.ndim != 2 or self.biases.ndim != 1:
            raise ValueError("layer weights must be 2-D and biases 1-D")
        if self.weights.shape[0] != self.biases.shape[0]:
            raise ValueError(
                f"bias length {self.biases.shape[0]} does not match "
                f"weight rows {self.weights.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.biases).all()):
            raise ValueError("layer parameters must be finite")

    @property
    def out_dim(self):
        return self.weights.shape[0]

    @property
    def in_dim(self):
        return self.weights.shape[1]


@dataclass(frozen=True)
class Network:
    """Immutable dense feedforward classifier."""

    layers: tuple[Layer, ...]
    input_dim: int
    num_classes: int
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ValueError("network needs at least one layer")
        if self.layers[0].in_dim != self.input_dim:
            raise ValueError(
                f"first layer expects {self.layers[0].in_dim} inputs, "
                f"declared input_dim is {self.input_dim}"
            )
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ValueError("adjacent layer widths do not match")
        if self.layers[-1].out_dim != self.num_classes:
            raise ValueError(
                f"final layer width {self.layers[-1].out_dim} must equal "
                f"num_classes {self.num_classes}"
            )

    def parameter_arrays(self):
        """Flat list of (weights, biases) pairs, in layer order."""
        return [(layer.weights, layer.biases) for layer in self.layers]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    epochs: int
    batch_size: int
    loss: str = "cross-entropy"
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")


@dataclass(frozen=True)
class Gradients:
    """Loss gradients mirroring a network's parameter shapes, plus d(loss)/d(input)."""

    weight_grads: tuple[np.ndarray, ...]
    bias_grads: tuple[np.ndarray, ...]
    input_grad: np.ndarray


def init_network(input_dim, hidden_sizes, num_classes, hidden_activation="relu",
                 output_activation="softmax-output", seed=0):
    """Build a network with Glorot-uniform weights and zero biases.

    Weight entries are drawn uniformly from ±sqrt(6 / (fan_in + fan_out))
    using a generator seeded with ``seed``, so construction is reproducible.
    """
    widths = [int(input_dim)] + [int(h) for h in hidden_sizes] + [int(num_classes)]
    if min(widths) < 1:
        raise ValueError("all layer widths must be positive")
    rng = np.random.default_rng(seed)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(widths, widths[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        act = output_activation if i == len(widths) - 2 else hidden_activation
        layers.append(Layer(weights=weights, biases=np.zeros(fan_out), activation=act))
    return Network(layers=tuple(layers), input_dim=widths[0],
                   num_classes=widths[-1], seed=int(seed))


def _activate(name, z):
    if name == "identity":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    if name == "tanh":
        return np.tanh(z)
    if name == "softmax-output":
        shifted = z - z.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True)
    raise ValueError(f"unknown activation {name!r}")


def _activation_vjp(name, z, a, upstream):
    """Backpropagate ``upstream`` (dL/da) through an activation to dL/dz."""
    if name == "identity":
        return upstream
    if name == "relu":
        return upstream * (z > 0.0)
    if name == "sigmoid":
        return upstream * a * (1.0 - a)
    if name == "tanh":
        return upstream * (1.0 - a * a)
    if name == "softmax-output":
        inner = (upstream * a).sum(axis=-1, keepdims=True)
        return a * (upstream - inner)
    raise ValueError(f"unknown activation {name!r}")


def _forward_trace(net, X):
    """Run a batch forward pass keeping per-layer pre-activations and outputs."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise ValueError(
            f"expected samples of dimension {net.input_dim}, got shape {X.shape}"
        )
    pre, post = [], []
    a = X
    for layer in net.layers:
        z = a @ layer.weights.T + layer.biases
        a = _activate(layer.activation, z)
        pre.append(z)
        post.append(a)
    return pre, post


def forward_batch(net, X):
    """Forward a (n, input_dim) batch. Returns (logits, scores), both (n, num_classes)."""
    pre, post = _forward_trace(net, X)
    return pre[-1], post[-1]


def forward(net, x):
    """Forward a single sample. Returns (logits, scores) as 1-D arrays."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("forward expects a 1-D sample; use forward_batch for batches")
    logits, scores = forward_batch(net, x[None, :])
    return logits[0], scores[0]


def _loss_value(loss, scores, targets):
    if loss == "cross-entropy":
        picked = scores[np.arange(scores.shape[0]), targets]
        return float(-np.log(np.maximum(picked, 1e-300)).sum())
    # squared-error: L = 1/2 * ||scores - target||^2 per sample
    return float(0.5 * np.square(scores - targets).sum())


def _output_delta(loss, net, scores, pre_last, targets):
    """dL/d(last pre-activation) for the summed (not averaged) batch loss."""
    if loss == "cross-entropy":
        if net.layers[-1].activation != "softmax-output":
            raise ValueError("cross-entropy loss requires a softmax-output final layer")
        delta = scores.copy()
        delta[np.arange(scores.shape[0]), targets] -= 1.0
        return delta
    upstream = scores - targets
    return _activation_vjp(net.layers[-1].activation, pre_last, scores, upstream)


def backward_batch(net, X, targets, loss="cross-entropy"):
    """Summed-loss gradients over a batch.

    ``targets`` is an integer label vector for cross-entropy, or a
    (n, num_classes) target matrix for squared-error. Returns a
    :class:`Gradients` whose ``input_grad`` has shape (n, input_dim).
    """
    X = np.asarray(X, dtype=np.float64)
    if loss == "cross-entropy":
        targets = np.asarray(targets, dtype=np.int64)
    else:
        targets = np.asarray(targets, dtype=np.float64)
        if targets.shape != (X.shape[0], net.num_classes):
            raise ValueError("squared-error targets must be (n, num_classes)")
    pre, post = _forward_trace(net, X)
    delta = _output_delta(loss, net, post[-1], pre[-1], targets)

    weight_grads = [None] * len(net.layers)
    bias_grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        a_prev = X if i == 0 else post[i - 1]
        weight_grads[i] = delta.T @ a_prev
        bias_grads[i] = delta.sum(axis=0)
        upstream = delta @ net.layers[i].weights
        if i > 0:
            delta = _activation_vjp(net.layers[i - 1].activation,
                                    pre[i - 1], post[i - 1], upstream)
        else:
            input_grad = upstream
    if not all(np.isfinite(g).all() for g in weight_grads):
        raise ArithmeticError("non-finite value encountered during backpropagation")
    return Gradients(tuple(weight_grads), tuple(bias_grads), input_grad)


def backward(net, x, target, loss="cross-entropy"):
    """Gradients of the single-sample loss w.r.t. every parameter and the input."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != net.input_dim:
        raise ValueError(f"expected a sample of dimension {net.input_dim}")
    if loss == "cross-entropy":
        targets = np.asarray([target], dtype=np.int64)
    else:
        targets = np.atleast_2d(np.asarray(target, dtype=np.float64))
    grads = backward_batch(net, x[None, :], targets, loss=loss)
    return Gradients(grads.weight_grads, grads.bias_grads, grads.input_grad[0])


def logit_gradient(net, x, index=0):
    """Gradient of one pre-activation output logit w.r.t. the input."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != net.input_dim:
        raise ValueError(f"expected a sample of dimension {net.input_dim}")
    if not 0 <= index < net.num_classes:
        raise ValueError("logit index out of range")
    pre, post = _forward_trace(net, x[None, :])
    delta = np.zeros((1, net.num_classes))
    delta[0, index] = 1.0
    for i in range(len(net.layers) - 1, -1, -1):
        upstream = delta @ net.layers[i].weights
        if i == 0:
            return upstream[0]
        delta = _activation_vjp(net.layers[i - 1].activation,
                                pre[i - 1], post[i - 1], upstream)


def loss_value(net, X, targets, loss="cross-entropy"):
    """Total (summed) loss of a batch; used by tests and finite differences."""
    _, scores = forward_batch(net, np.atleast_2d(np.asarray(X, dtype=np.float64)))
    if loss == "cross-entropy":
        targets = np.asarray(targets, dtype=np.int64)
    else:
        targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    return _loss_value(loss, scores, targets)


def sgd_step(net, grads, learning_rate):
    """Return a new network with every parameter moved by ``-learning_rate * grad``."""
    if len(grads.weight_grads) != len(net.layers):
        raise ValueError("gradient count does not match layer count")
    new_layers = []
    for layer, gw, gb in zip(net.layers, grads.weight_grads, grads.bias_grads):
        if gw.shape != layer.weights.shape or gb.shape != layer.biases.shape:
            raise ValueError("gradient shapes do not match parameter shapes")
        if not (np.isfinite(gw).all() and np.isfinite(gb).all()):
            raise ArithmeticError("non-finite gradient")
        new_layers.append(Layer(weights=layer.weights - learning_rate * gw,
                                biases=layer.biases - learning_rate * gb,
                                activation=layer.activation))
    return Network(layers=tuple(new_layers), input_dim=net.input_dim,
                   num_classes=net.num_classes, seed=net.seed)


def train(net, data, cfg):
    """Mini-batch SGD on a labeled dataset.

    Deterministic given ``cfg.seed``: batches are drawn from an epoch-wise
    reshuffle of a generator seeded once. Returns ``(trained_network, trace)``
    where ``trace`` maps "loss" and "accuracy" to per-epoch lists.
    """
    if len(data.samples) == 0:
        raise ValueError("cannot train on an empty dataset")
    if data.labels.min() < 0 or data.labels.max() >= net.num_classes:
        raise ValueError("labels out of range for this network")
    X = np.asarray(data.samples, dtype=np.float64)
    y = np.asarray(data.labels, dtype=np.int64)
    n = X.shape[0]
    rng = np.random.default_rng(cfg.seed)
    current = net
    losses, accs = [], []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            targets = y[idx] if cfg.loss == "cross-entropy" else _one_hot(y[idx], net.num_classes)
            batch_loss = loss_value(current, X[idx], targets, loss=cfg.loss)
            if not np.isfinite(batch_loss):
                raise ArithmeticError(
                    f"training loss became non-finite at epoch {epoch}, "
                    f"batch starting at {start}"
                )
            grads = backward_batch(current, X[idx], targets, loss=cfg.loss)
            epoch_loss += batch_loss
            # mean-gradient step: backward_batch sums over the batch
            current = sgd_step(current, grads, cfg.learning_rate / len(idx))
        losses.append(epoch_loss / n)
        accs.append(accuracy(current, X, y))
    return current, {"loss": losses, "accuracy": accs}


def _one_hot(labels, num_classes):
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def predict_batch(net, X):
    """Predicted class per row; argmax ties resolve to the lowest class index."""
    _, scores = forward_batch(net, X)
    return np.argmax(scores, axis=1)


def predict(net, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != net.input_dim:
        raise ValueError(f"expected a sample of dimension {net.input_dim}")
    return int(predict_batch(net, x[None, :])[0])


def accuracy(net, X, y):
    return float(np.mean(predict_batch(net, X) == np.asarray(y)))


# ---------------------------------------------------------------------------
# Model file format: versioned JSON with 17-significant-digit decimals so a
# save/load round trip reproduces every double exactly.
# ---------------------------------------------------------------------------

def _fmt17(x):
    return format(float(x), ".17g")


def save_model(net, path):
    """Write the network to a versioned JSON model file."""
    parts = ["{\n"]
    parts.append(f'  "format_version": {MODEL_FORMAT_VERSION},\n')
    parts.append(f'  "input_dim": {net.input_dim},\n')
    parts.append(f'  "num_classes": {net.num_classes},\n')
    parts.append('  "layers": [\n')
    for i, layer in enumerate(net.layers):
        rows, cols = layer.weights.shape
        weights = ", ".join(_fmt17(v) for v in layer.weights.ravel(order="C"))
        biases = ", ".join(_fmt17(v) for v in layer.biases)
        parts.append("    {\n")
        parts.append(f'      "activation": "{layer.activation}",\n')
        parts.append(f'      "rows": {rows},\n')
        parts.append(f'      "cols": {cols},\n')
        parts.append(f'      "weights": [{weights}],\n')
        parts.append(f'      "biases": [{biases}]\n')
        parts.append("    }" + ("," if i < len(net.layers) - 1 else "") + "\n")
    parts.append("  ]\n}\n")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("".join(parts))


def load_model(path):
    """Load a network from a JSON model file written by :func:`save_model`."""
    with open(path, "r", encoding="ascii") as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format_version {version!r}")
    layers = []
    for spec in doc["layers"]:
        rows, cols = int(spec["rows"]), int(spec["cols"])
        weights = np.asarray(spec["weights"], dtype=np.float64)
        if weights.size != rows * cols:
            raise ValueError("weight count does not match declared rows*cols")
        layers.append(Layer(weights=weights.reshape(rows, cols),
                            biases=np.asarray(spec["biases"], dtype=np.float64),
                            activation=spec["activation"]))
    return Network(layers=tuple(layers), input_dim=int(doc["input_dim"]),
                   num_classes=int(doc["num_classes"]))


# ---------------------------------------------------------------------------
# scikit-learn estimator wrapper
# ---------------------------------------------------------------------------

class DenseClassifier(BaseEstimator, ClassifierMixin):
    """Dense feedforward classifier with plain SGD, in estimator clothing.

    Wraps the functional core so the model composes with pipelines,
    cross-validation, and anything else expecting fit/predict semantics.
    The fitted network itself is exposed as ``network_`` for the boundary
    search, attack, and retraining utilities in this package.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int
        Widths of the hidden layers.
    activation : str
        Hidden activation: "identity", "relu", "sigmoid" or "tanh".
    learning_rate, epochs, batch_size, loss : SGD settings.
    seed : int
        Seeds both weight initialization and batch shuffling.
    warm_start : bool
        When True, ``fit`` continues from the previously fitted parameters.
    """

    def __init__(self, hidden_layer_sizes=(128,), activation="relu",
                 learning_rate=0.1, epochs=50, batch_size=32,
                 loss="cross-entropy", seed=0, warm_start=False):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.activation = activation
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.loss = loss
        self.seed = seed
        self.warm_start = warm_start

    def fit(self, X, y):
        from .data import LabeledDataset  # local import to avoid a cycle

        X, y = check_X_y(X, y)
        self.classes_ = np.unique(y)
        y_idx = np.searchsorted(self.classes_, y)
        self.n_features_in_ = X.shape[1]
        if self.warm_start and hasattr(self, "network_"):
            net = self.network_
            if net.input_dim != X.shape[1] or net.num_classes != len(self.classes_):
                raise ValueError("warm start requires matching data dimensions")
        else:
            net = init_network(X.shape[1], self.hidden_layer_sizes,
                               len(self.classes_), hidden_activation=self.activation,
                               seed=self.seed)
        data = LabeledDataset(
            samples=np.asarray(X, dtype=np.float64),
            labels=y_idx,
            num_classes=len(self.classes_),
            value_range=(float(np.min(X)), float(np.max(X))),
        )
        cfg = TrainConfig(learning_rate=self.learning_rate, epochs=self.epochs,
                          batch_size=self.batch_size, loss=self.loss, seed=self.seed)
        self.network_, trace = train(net, data, cfg)
        self.loss_curve_ = trace["loss"]
        self.accuracy_curve_ = trace["accuracy"]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X)
        logits, _ = forward_batch(self.network_, X)
        return logits

    def predict_proba(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X)
        _, scores = forward_batch(self.network_, X)
        return scores

    def predict(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X)
        return self.classes_[predict_batch(self.network_, X)]
