"""Width of the rectangular "general" model from a parameter budget.

The budget is the number of training examples. Two counting rules are
supported:

``paper``
    ``NP = D*NU + NL*NU*NC + NL*NU + NC``, solved for ``NU``. This rule ignores
    hidden-to-hidden weights, so deep nets overshoot the budget.
``exact``
    the true parameter count of ``D -> NU x NL -> NC``:
    ``D*NU + NU + (NL-1)*(NU^2 + NU) + NU*NC + NC``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

MODES = ("paper", "exact")


@dataclass(frozen=True)
class SizingInput:
    n_params: int  # NP
    input_dim: int  # D
    hidden_layers: int  # NL
    n_outputs: int  # NC
    mode: str = "paper"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"sizing mode must be one of {MODES}")
        if self.input_dim < 1 or self.hidden_layers < 1 or self.n_outputs < 1:
            raise ValueError("input_dim, hidden_layers and n_outputs must be >= 1")
        if self.n_params <= self.n_outputs:
            raise ValueError("budget below output layer size")


def paper_count(width: int, input_dim: int, hidden_layers: int, n_outputs: int) -> int:
    return input_dim * width + hidden_layers * width * n_outputs + hidden_layers * width + n_outputs


def exact_count(width: int, input_dim: int, hidden_layers: int, n_outputs: int) -> int:
    return (
        input_dim * width
        + width
        + (hidden_layers - 1) * (width * width + width)
        + width * n_outputs
        + n_outputs
    )


def compute_layer_width(s: SizingInput) -> int:
    D, NL, NC, NP = s.input_dim, s.hidden_layers, s.n_outputs, s.n_params
    if s.mode == "paper":
        return max(1, (NP - NC) // (D + NL * (NC + 1)))

    # exact: largest NU with a*NU^2 + b*NU + NC <= NP
    a = NL - 1
    b = D + 1 + (NL - 1) + NC
    c = NC - NP
    if a == 0:
        nu = -c // b
    else:
        nu = int((-b + math.sqrt(b * b - 4 * a * c)) / (2 * a))
    nu = max(nu, 0)
    while exact_count(nu + 1, D, NL, NC) <= NP:
        nu += 1
    while nu > 0 and exact_count(nu, D, NL, NC) > NP:
        nu -= 1
    return max(1, nu)


def build_general_spec(
    n_examples: int,
    input_dim: int,
    hidden_layers: int,
    n_outputs: int,
    task: str = "classification",
    mode: str = "paper",
    hidden_activation: str = "relu",
    output_activation: str | None = None,
) -> list:
    """Layer spec ``[(in, out, activation), ...]`` for the rectangular model."""
    if hidden_layers < 1:
        raise ValueError("hidden_layers must be >= 1")
    if n_examples < 1:
        raise ValueError("n_examples must be positive")
    width = compute_layer_width(SizingInput(n_examples, input_dim, hidden_layers, n_outputs, mode))
    if output_activation is None:
        output_activation = "softmax" if task == "classification" else "identity"
    dims = [input_dim] + [width] * hidden_layers + [n_outputs]
    acts = [hidden_activation] * hidden_layers + [output_activation]
    return [(dims[i], dims[i + 1], acts[i]) for i in range(len(acts))]
