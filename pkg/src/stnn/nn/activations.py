"""Element-wise activations and their gradient factors.

The x = 0 branch of ReLU multiplies by 1/2 (sub-gradient midpoint); leaky
variants use 0.5 + 0.005*k there.  Exact floating equality is intended.
"""

from __future__ import annotations

import numpy as np

from .conv import _as_nd

__all__ = ["activation_forward", "activation_backward", "ACTIVATION_KINDS"]

ACTIVATION_KINDS = ("relu", "leaky_relu", "sigmoid", "tanh")


def activation_forward(kind: str, x, slope_index: int = 0):
    """Returns (y, cache); cache is the input for (leaky) ReLU, the output otherwise."""
    x = _as_nd(x)
    if kind == "relu":
        return np.where(x > 0, x, 0.0), x
    if kind == "leaky_relu":
        return np.where(x > 0, x, 0.01 * slope_index * x), x
    if kind == "sigmoid":
        y = 1.0 / (1.0 + np.exp(-x))
        return y, y
    if kind == "tanh":
        y = np.tanh(x)
        return y, y
    raise ValueError(f"unknown activation {kind!r}")


def activation_backward(kind: str, g_out, cache, slope_index: int = 0):
    g_out = _as_nd(g_out)
    if kind == "relu":
        x = cache
        factor = np.where(x > 0, 1.0, np.where(x < 0, 0.0, 0.5))
    elif kind == "leaky_relu":
        x = cache
        k = slope_index
        factor = np.where(x > 0, 1.0, np.where(x < 0, 0.01 * k, 0.5 + 0.005 * k))
    elif kind == "sigmoid":
        y = cache
        factor = y * (1.0 - y)
    elif kind == "tanh":
        y = cache
        factor = 1.0 - cache ** 2
    else:
        raise ValueError(f"unknown activation {kind!r}")
    return g_out * factor
