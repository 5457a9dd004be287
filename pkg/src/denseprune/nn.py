"""Dense feed-forward network engine.

Everything here is plain numpy in float64. A network is a list of
:class:`DenseLayer` objects, each holding an ``(in_dim, out_dim)`` weight
matrix, a bias vector and an activation tag. Rows of every input matrix are
examples.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from denseprune.data import Dataset

logger = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "sigmoid", "tanh", "softmax", "identity")
LOSSES = ("cross_entropy", "mse")
OPTIMIZERS = ("sgd", "adam")


class ShapeError(ValueError):
    """Layer dimensions do not chain, or data does not fit the network."""


class NonFiniteError(FloatingPointError):
    """A forward pass or a loss produced NaN/inf."""


@dataclass(frozen=True)
class TaskKind:
    kind: str  # "classification" | "regression"
    n_outputs: int

    def __post_init__(self):
        if self.kind not in ("classification", "regression"):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.n_outputs < 1:
            raise ValueError("n_outputs must be >= 1")

    @property
    def is_classification(self) -> bool:
        return self.kind == "classification"

    def default_loss(self) -> str:
        return "cross_entropy" if self.is_classification else "mse"


@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2:
            raise ShapeError("weights must be a 2-D (in_dim, out_dim) matrix")
        if self.bias.shape[0] != self.weights.shape[1]:
            raise ShapeError(
                f"bias length {self.bias.shape[0]} != out_dim {self.weights.shape[1]}"
            )
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise NonFiniteError("layer parameters must be finite")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def n_params(self) -> int:
        return self.weights.size + self.bias.size


@dataclass
class DenseNetwork:
    layers: list
    task: TaskKind

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("a network needs at least one layer")
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.out_dim != b.in_dim:
                raise ShapeError(
                    f"layer {i} output dim {a.out_dim} != layer {i + 1} input dim {b.in_dim}"
                )
        for i, layer in enumerate(self.layers[:-1]):
            if layer.activation == "softmax":
                raise ShapeError(f"softmax is only allowed on the final layer (layer {i})")
        if self.layers[-1].out_dim != self.task.n_outputs:
            raise ShapeError(
                f"final layer width {self.layers[-1].out_dim} != task outputs {self.task.n_outputs}"
            )

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    @property
    def n_weights(self) -> int:
        return sum(layer.weights.size for layer in self.layers)

    @property
    def widths(self) -> list:
        """Unit counts from input to output, e.g. ``[4, 12, 12, 3]``."""
        return [self.input_dim] + [layer.out_dim for layer in self.layers]

    @property
    def hidden_widths(self) -> list:
        return [layer.out_dim for layer in self.layers[:-1]]

    @property
    def architecture(self) -> list:
        return [(l.in_dim, l.out_dim, l.activation) for l in self.layers]

    def copy(self) -> "DenseNetwork":
        return copy.deepcopy(self)


def glorot_uniform(rng: np.random.Generator, in_dim: int, out_dim: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-limit, limit, size=(in_dim, out_dim))


def init_network(spec: Sequence, seed: int = 0, task: Optional[TaskKind] = None) -> DenseNetwork:
    """Build a network from ``[(in_dim, out_dim, activation), ...]``.

    Weights are Glorot-uniform and biases zero. When ``task`` is omitted it is
    inferred from the final activation: softmax means classification.
    """
    spec = [tuple(s) for s in spec]
    if not spec:
        raise ShapeError("empty network spec")
    for i, (d_in, d_out, _) in enumerate(spec):
        if d_in < 1 or d_out < 1:
            raise ShapeError(f"layer {i} has non-positive dimension ({d_in}, {d_out})")
    for i, (a, b) in enumerate(zip(spec, spec[1:])):
        if a[1] != b[0]:
            raise ShapeError(f"layer {i} output dim {a[1]} != layer {i + 1} input dim {b[0]}")
    rng = np.random.default_rng(seed)
    layers = [
        DenseLayer(glorot_uniform(rng, d_in, d_out), np.zeros(d_out), act)
        for d_in, d_out, act in spec
    ]
    if task is None:
        kind = "classification" if spec[-1][2] == "softmax" else "regression"
        task = TaskKind(kind, spec[-1][1])
    return DenseNetwork(layers, task)


# --- activations -----------------------------------------------------------


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def activate(z: np.ndarray, name: str) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return _sigmoid(z)
    if name == "tanh":
        return np.tanh(z)
    if name == "softmax":
        return _softmax(z)
    if name == "identity":
        return z
    raise ValueError(f"unknown activation {name!r}")


def _activation_backward(grad_a, z, a, name):
    """Map dL/da to dL/dz for one layer."""
    if name == "relu":
        return grad_a * (z > 0)
    if name == "sigmoid":
        return grad_a * a * (1.0 - a)
    if name == "tanh":
        return grad_a * (1.0 - a * a)
    if name == "softmax":
        return a * (grad_a - np.sum(grad_a * a, axis=1, keepdims=True))
    if name == "identity":
        return grad_a
    raise ValueError(f"unknown activation {name!r}")


# --- forward ---------------------------------------------------------------


def _check_input(net: DenseNetwork, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise ShapeError(f"input has shape {X.shape}, network expects (n, {net.input_dim})")
    if not np.all(np.isfinite(X)):
        raise NonFiniteError("input contains non-finite values")
    return X


def _propagate(net: DenseNetwork, X: np.ndarray, keep_pre: bool = False):
    # single code path for forward and forward_capture, so both agree bit for bit
    a = X
    pre, post = [], []
    for i, layer in enumerate(net.layers):
        z = a @ layer.weights + layer.bias
        a = activate(z, layer.activation)
        if not np.all(np.isfinite(a)):
            raise NonFiniteError(f"non-finite activation in layer {i} ({layer.activation})")
        if keep_pre:
            pre.append(z)
        post.append(a)
    return pre, post


def forward(net: DenseNetwork, X) -> np.ndarray:
    X = _check_input(net, X)
    _, post = _propagate(net, X)
    return post[-1]


def forward_capture(net: DenseNetwork, X):
    """Return ``(outputs, trace)`` where ``trace[l]`` is the ``(n, width_l)``
    post-activation matrix of hidden layer ``l``."""
    X = _check_input(net, X)
    _, post = _propagate(net, X)
    return post[-1], post[:-1]


predict = forward


# --- losses and gradients --------------------------------------------------


def _logsumexp(z):
    m = z.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(z - m).sum(axis=1, keepdims=True))).ravel()


def loss_value(net: DenseNetwork, X, Y, loss: str) -> float:
    X = _check_input(net, X)
    Y = np.asarray(Y, dtype=np.float64)
    pre, post = _propagate(net, X, keep_pre=True)
    return _loss_from_outputs(net, pre[-1], post[-1], Y, loss)


def _loss_from_outputs(net, z_out, a_out, Y, loss):
    n = Y.shape[0]
    if loss == "cross_entropy":
        if net.layers[-1].activation == "softmax":
            # log-softmax from logits keeps this finite for valid one-hot labels
            logp = z_out - _logsumexp(z_out)[:, None]
        else:
            logp = np.log(np.clip(a_out, 1e-300, None))
        return float(-np.sum(Y * logp) / n)
    if loss == "mse":
        return float(np.mean((a_out - Y) ** 2))
    raise ValueError(f"unknown loss {loss!r}")


def loss_and_grad(net: DenseNetwork, X, Y, loss: str):
    """Loss value and per-layer ``(dW, db)`` gradients for the mean batch loss.

    Cross-entropy is the mean over examples of ``-sum(y * log p)``; MSE is the
    mean over all output entries.
    """
    X = _check_input(net, X)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.shape != (X.shape[0], net.output_dim):
        raise ShapeError(f"targets have shape {Y.shape}, expected {(X.shape[0], net.output_dim)}")
    pre, post = _propagate(net, X, keep_pre=True)
    value = _loss_from_outputs(net, pre[-1], post[-1], Y, loss)
    n = X.shape[0]
    last = net.layers[-1]

    if loss == "cross_entropy" and last.activation == "softmax":
        delta = (post[-1] - Y) / n
    else:
        if loss == "cross_entropy":
            grad_a = -Y / np.clip(post[-1], 1e-300, None) / n
        else:
            grad_a = 2.0 * (post[-1] - Y) / Y.size
        delta = _activation_backward(grad_a, pre[-1], post[-1], last.activation)

    grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        a_in = X if i == 0 else post[i - 1]
        grads[i] = (a_in.T @ delta, delta.sum(axis=0))
        if i > 0:
            grad_a = delta @ net.layers[i].weights.T
            delta = _activation_backward(grad_a, pre[i - 1], post[i - 1], net.layers[i - 1].activation)
    return value, grads


# --- optimizers ------------------------------------------------------------


class SGD:
    def __init__(self, lr: float = 0.01):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    optimizer: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    early_stopping_patience: Optional[int] = None
    restore_best: bool = True
    seed: int = 0
    loss: Optional[str] = None  # None: cross_entropy for classification, mse for regression

    def __post_init__(self):
        if not (isinstance(self.epochs, int) and self.epochs >= 1):
            raise ValueError("epochs must be a positive integer")
        if not (isinstance(self.batch_size, int) and self.batch_size >= 1):
            raise ValueError("batch_size must be a positive integer")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if not self.lr >= 0:
            raise ValueError("lr must be non-negative")
        if self.early_stopping_patience is not None:
            if self.early_stopping_patience < 1:
                raise ValueError("early_stopping_patience must be positive")
            if self.early_stopping_patience > self.epochs:
                raise ValueError("early_stopping_patience must not exceed epochs")
        if self.loss is not None and self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def make_optimizer(self):
        if self.optimizer == "sgd":
            return SGD(self.lr)
        return Adam(self.lr, self.beta1, self.beta2, self.adam_eps)


@dataclass
class TrainReport:
    net: DenseNetwork
    losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: Optional[int] = None


class TrainingDivergedError(NonFiniteError):
    pass


def fit(net: DenseNetwork, X, Y, cfg: TrainConfig, X_val=None, Y_val=None) -> TrainReport:
    """Mini-batch training on arrays. Updates ``net`` in place."""
    X = _check_input(net, X)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("empty training split")
    loss = cfg.loss or net.task.default_loss()
    rng = np.random.default_rng(cfg.seed)
    opt = cfg.make_optimizer()
    params = [p for layer in net.layers for p in (layer.weights, layer.bias)]
    monitor = cfg.early_stopping_patience is not None and X_val is not None and len(X_val) > 0
    report = TrainReport(net)
    best, best_state, wait = math.inf, None, 0
    n = X.shape[0]

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            value, grads = loss_and_grad(net, X[idx], Y[idx], loss)
            if not math.isfinite(value):
                raise TrainingDivergedError(
                    f"loss became {value} at epoch {epoch}, batch starting at {start}"
                )
            opt.step(params, [g for pair in grads for g in pair])
            total += value * len(idx)
        report.losses.append(total / n)
        report.stopped_epoch = epoch

        if monitor:
            val = loss_value(net, X_val, Y_val, loss)
            report.val_losses.append(val)
            if val < best:
                best, wait = val, 0
                report.best_epoch = epoch
                if cfg.restore_best:
                    best_state = [p.copy() for p in params]
            else:
                wait += 1
                if wait >= cfg.early_stopping_patience:
                    logger.debug("early stop at epoch %d (best %s)", epoch, report.best_epoch)
                    break

    if monitor and cfg.restore_best and best_state is not None:
        for p, saved in zip(params, best_state):
            p[...] = saved
    return report


def train(net: DenseNetwork, data: "Dataset", cfg: TrainConfig) -> TrainReport:
    """Train on ``data``'s train split; its validation split drives early stopping."""
    X, Y = data.subset("train")
    if X.shape[0] == 0:
        raise ValueError("empty training split")
    X_val = Y_val = None
    if "validation" in data.splits and len(data.splits["validation"]):
        X_val, Y_val = data.subset("validation")
    return fit(net, X, Y, cfg, X_val, Y_val)
