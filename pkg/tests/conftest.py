import numpy as np
import pytest

from denseprune.nn import TaskKind, activate, init_network, loss_value

HIDDEN_ACTS = ("relu", "sigmoid", "tanh", "identity")


def random_spec(rng, n_layers, max_width, input_dim=None, n_out=None, out_act=None, acts=HIDDEN_ACTS):
    dims = [input_dim or int(rng.integers(1, max_width + 1))]
    dims += [int(rng.integers(1, max_width + 1)) for _ in range(n_layers - 1)]
    dims.append(n_out or int(rng.integers(1, max_width + 1)))
    hidden = [str(rng.choice(acts)) for _ in range(n_layers - 1)]
    last = out_act or str(rng.choice(("softmax", "identity", "sigmoid")))
    if last == "softmax" and dims[-1] < 2:
        dims[-1] = 2
    names = hidden + [last]
    return [(dims[i], dims[i + 1], names[i]) for i in range(n_layers)]


def random_net(rng, n_layers, max_width, **kw):
    spec = random_spec(rng, n_layers, max_width, **kw)
    kind = "classification" if spec[-1][2] == "softmax" else "regression"
    net = init_network(spec, int(rng.integers(2**32)), task=TaskKind(kind, spec[-1][1]))
    for layer in net.layers:
        # non-zero biases so every code path is exercised
        layer.bias[:] = rng.normal(0.0, 0.5, size=layer.bias.shape)
    return net


def numeric_grad(net, X, Y, loss, h=1e-5):
    """Central finite differences of the loss over every parameter."""
    out = []
    for layer in net.layers:
        pair = []
        for p in (layer.weights, layer.bias):
            g = np.zeros_like(p)
            it = np.nditer(p, flags=["multi_index"])
            for _ in it:
                i = it.multi_index
                old = p[i]
                p[i] = old + h
                up = loss_value(net, X, Y, loss)
                p[i] = old - h
                down = loss_value(net, X, Y, loss)
                p[i] = old
                g[i] = (up - down) / (2 * h)
            pair.append(g)
        out.append(tuple(pair))
    return out


def max_rel_error(analytic, numeric, floor=1e-7):
    worst = 0.0
    for (aw, ab), (nw, nb) in zip(analytic, numeric):
        for a, n in ((aw, nw), (ab, nb)):
            err = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
            # entries where both are ~0 carry no information
            err = np.where(np.maximum(np.abs(a), np.abs(n)) < 1e-9, 0.0, err)
            worst = max(worst, float(err.max(initial=0.0)))
    return worst


def targets_for(net, rng, n):
    if net.task.is_classification:
        ids = rng.integers(0, net.output_dim, size=n)
        return np.eye(net.output_dim)[ids], "cross_entropy"
    return rng.normal(size=(n, net.output_dim)), "mse"


def kink_free(net, X, margin=1e-4):
    """True when no relu pre-activation sits within ``margin`` of zero."""
    a = X
    for layer in net.layers:
        z = a @ layer.weights + layer.bias
        if layer.activation == "relu" and np.any(np.abs(z) < margin):
            return False
        a = activate(z, layer.activation)
    return True


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --- acceptance report --------------------------------------------------------

ACCEPTANCE_LINES = {}


def record_criterion(number, title, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title} | {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
