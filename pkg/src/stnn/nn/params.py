"""Trainable-parameter counting formulas."""

from __future__ import annotations

import math
from typing import Sequence

from ..tensor import TensorError
from .conv import ConvSpec, conv_param_count

__all__ = ["param_count"]


def param_count(kind: str, **bound) -> int:
    """Parameters of one unit from its bound shapes.

    conv: (1 + n_s * N_in) * N_out; fc: (n_in + 1) * n_out; batch norm: 2 * N_a;
    sliced fc: n_out * n_in * p * q.  Everything else holds no parameters.
    """
    if kind == "conv":
        spec: ConvSpec = bound["spec"]
        in_features = bound["in_features"]
        if in_features is None:
            raise TensorError("conv parameter count needs bound input features")
        return conv_param_count(in_features, spec)
    if kind == "fc":
        n_in, n_out = bound["n_in"], bound["n_out"]
        if n_in is None or n_out is None:
            raise TensorError("fc parameter count needs bound sizes")
        return (n_in + 1) * n_out
    if kind == "sliced_fc":
        return bound["n_out"] * bound["n_in"] * bound["p"] * bound["q"]
    if kind == "batchnorm":
        n_a = bound["n_a"]
        if n_a is None:
            raise TensorError("batch norm parameter count needs bound features")
        return 2 * n_a
    return 0
