"""Useful-unit selection and network rebuild.

A hidden unit is *useful* when the standard deviation of its activation over
an evaluation set exceeds ``epsilon``. Units that fail the test are removed,
and their mean activation is folded into downstream biases so the rebuilt
network keeps computing (approximately) the same function.

Hidden layers are indexed ``0 .. H-1``: hidden layer ``l`` is the output of
``net.layers[l]``. Input and output layers are never pruned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from denseprune.nn import (
    DenseLayer,
    DenseNetwork,
    ShapeError,
    TaskKind,
    activate,
    forward,
    forward_capture,
    glorot_uniform,
)

COMPENSATION_MODES = ("weighted", "literal")


@dataclass
class UnitStats:
    means: list
    stds: list

    @property
    def widths(self) -> list:
        return [len(m) for m in self.means]


@dataclass
class PrunePlan:
    keep: list  # boolean mask per hidden layer
    bias_extra: list  # scalar per hidden layer
    accumulated_bias_carry: float
    collapsed_layers: list
    epsilon: float
    unit_means: list  # per hidden layer, used by weighted compensation
    compensation_mode: str = "weighted"

    @property
    def kept_widths(self) -> list:
        return [int(k.sum()) for k in self.keep]

    def kept_indices(self, layer: int) -> np.ndarray:
        return np.flatnonzero(self.keep[layer])


def _column_stats(a: np.ndarray):
    mean = a.mean(axis=0)
    std = a.std(axis=0)
    # exactly constant columns get an exact mean and a zero std
    flat = np.ptp(a, axis=0) == 0
    return np.where(flat, a[0], mean), np.where(flat, 0.0, std)


def capture_unit_stats(net: DenseNetwork, eval_data) -> UnitStats:
    """Population mean and standard deviation of every hidden unit."""
    eval_data = np.asarray(eval_data, dtype=np.float64)
    if eval_data.ndim != 2 or eval_data.shape[0] == 0:
        raise ValueError("evaluation data must be a non-empty (n, D) matrix")
    _, trace = forward_capture(net, eval_data)
    means, stds = [], []
    for a in trace:
        m, s = _column_stats(a)
        means.append(m)
        stds.append(s)
    return UnitStats(means, stds)


def subnet(net: DenseNetwork, layer: int, unit: int) -> DenseNetwork:
    """The truncated network whose single output is hidden unit ``(layer, unit)``."""
    n_hidden = len(net.layers) - 1
    if not 0 <= layer < n_hidden:
        raise IndexError(f"hidden layer {layer} out of range (network has {n_hidden})")
    target = net.layers[layer]
    if not 0 <= unit < target.out_dim:
        raise IndexError(f"unit {unit} out of range for hidden layer {layer} (width {target.out_dim})")
    layers = [DenseLayer(l.weights.copy(), l.bias.copy(), l.activation) for l in net.layers[:layer]]
    layers.append(DenseLayer(target.weights[:, [unit]].copy(), target.bias[[unit]].copy(), target.activation))
    return DenseNetwork(layers, TaskKind("regression", 1))


def subnet_output(net: DenseNetwork, layer: int, unit: int, eval_data) -> np.ndarray:
    return forward(subnet(net, layer, unit), eval_data)[:, 0]


def subnet_unit_stats(net: DenseNetwork, eval_data) -> UnitStats:
    """Same as :func:`capture_unit_stats`, one truncated network per unit.

    Quadratic cost; kept as an independent check of the capture path.
    """
    means, stds = [], []
    for l, width in enumerate(net.hidden_widths):
        cols = np.column_stack([subnet_output(net, l, u, eval_data) for u in range(width)])
        m, s = _column_stats(cols)
        means.append(m)
        stds.append(s)
    return UnitStats(means, stds)


def select_useful_units(stats: UnitStats, epsilon: float, compensation_mode: str = "weighted") -> PrunePlan:
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    if compensation_mode not in COMPENSATION_MODES:
        raise ValueError(f"compensation_mode must be one of {COMPENSATION_MODES}")
    keep, bias_extra, collapsed = [], [], []
    carry = 0.0
    for l, (mean, std) in enumerate(zip(stats.means, stats.stds)):
        mask = np.asarray(std) > epsilon
        layer_sum = float(np.sum(np.asarray(mean)[~mask]))
        keep.append(mask)
        if mask.any():
            bias_extra.append(layer_sum + carry)
            carry = 0.0
        else:
            bias_extra.append(0.0)
            carry += layer_sum
            collapsed.append(l)
    return PrunePlan(
        keep=keep,
        bias_extra=bias_extra,
        accumulated_bias_carry=carry,
        collapsed_layers=collapsed,
        epsilon=float(epsilon),
        unit_means=[np.asarray(m, dtype=np.float64).copy() for m in stats.means],
        compensation_mode=compensation_mode,
    )


def rebuild_network(net: DenseNetwork, plan: PrunePlan, seed: int = 0) -> DenseNetwork:
    """Assemble the pruned network described by ``plan``.

    Each surviving layer keeps the incoming weights from surviving units. When
    a whole hidden layer is removed, the last surviving representation is
    wired to the next surviving layer through fresh Glorot-uniform weights.
    """
    n_hidden = len(net.layers) - 1
    if len(plan.keep) == n_hidden + 1:
        raise ShapeError("the output layer cannot carry a prune mask")
    if len(plan.keep) != n_hidden:
        raise ShapeError(f"plan has {len(plan.keep)} masks, network has {n_hidden} hidden layers")
    for l, (mask, width) in enumerate(zip(plan.keep, net.hidden_widths)):
        if len(mask) != width:
            raise ShapeError(f"mask for hidden layer {l} has length {len(mask)}, layer width is {width}")
    if plan.compensation_mode not in COMPENSATION_MODES:
        raise ValueError(f"unknown compensation mode {plan.compensation_mode!r}")
    weighted = plan.compensation_mode == "weighted"
    rng = np.random.default_rng(seed)

    # keep[i] masks the input of net.layers[i]; the network input is all kept
    in_masks = [np.ones(net.input_dim, dtype=bool)] + [np.asarray(k, dtype=bool) for k in plan.keep]
    out_masks = in_masks[1:] + [np.ones(net.output_dim, dtype=bool)]

    layers = []
    src = np.flatnonzero(in_masks[0])  # surviving units feeding the next built layer
    src_width_changed = False  # True when ``src`` is not the original input of layer i
    pending_extra = 0.0
    for i, layer in enumerate(net.layers):
        cols = np.flatnonzero(out_masks[i])
        if cols.size == 0:
            # layer i produces a collapsed hidden layer: drop it entirely
            src_width_changed = True
            if not weighted and i > 0:
                pending_extra += plan.bias_extra[i - 1]
            continue
        in_mask = in_masks[i]
        bias = layer.bias
        if weighted and i > 0 and not in_mask.all():
            dropped = ~in_mask
            bias = bias + plan.unit_means[i - 1][dropped] @ layer.weights[dropped, :]
        if not weighted and i > 0:
            # scalar goes to every unit of the layer consuming hidden layer i-1;
            # a carry left over by trailing collapsed layers lands on the output
            extra = plan.bias_extra[i - 1] + pending_extra
            if i == n_hidden:
                extra += plan.accumulated_bias_carry
            pending_extra = 0.0
            if extra != 0.0:
                bias = bias + extra
        if src_width_changed:
            weights = glorot_uniform(rng, src.size, cols.size)
        elif in_mask.all() and cols.size == layer.out_dim:
            weights = layer.weights.copy()
        else:
            weights = layer.weights[np.ix_(np.flatnonzero(in_mask), cols)]
        bias = bias[cols] if cols.size != layer.out_dim else np.array(bias, copy=True)
        layers.append(DenseLayer(weights, bias, layer.activation))
        src = cols
        src_width_changed = False
    return DenseNetwork(layers, net.task)


def kept_param_count(net: DenseNetwork, plan: PrunePlan) -> int:
    """Closed-form size of the rebuilt network from kept widths alone."""
    widths = [net.input_dim] + [w for w in plan.kept_widths if w > 0] + [net.output_dim]
    return sum(a * b + b for a, b in zip(widths, widths[1:]))


def prune(net: DenseNetwork, eval_data, epsilon: float, compensation_mode: str = "weighted", seed: int = 0):
    """Stats, selection and rebuild in one call. Returns ``(pruned_net, plan)``."""
    plan = select_useful_units(capture_unit_stats(net, eval_data), epsilon, compensation_mode)
    return rebuild_network(net, plan, seed), plan


@dataclass
class ClampedNetwork:
    """The original network with selected hidden units pinned to constants.

    Evaluating it is the reference the weighted rebuild must match when no
    layer collapses.
    """

    net: DenseNetwork
    masks: list
    values: list

    def __call__(self, X) -> np.ndarray:
        a = np.asarray(X, dtype=np.float64)
        for i, layer in enumerate(self.net.layers):
            a = activate(a @ layer.weights + layer.bias, layer.activation)
            if i < len(self.masks):
                a = np.where(self.masks[i], a, self.values[i])
        return a


def clamp_oracle(net: DenseNetwork, plan: PrunePlan) -> ClampedNetwork:
    return ClampedNetwork(net, [np.asarray(k, bool) for k in plan.keep], plan.unit_means)
