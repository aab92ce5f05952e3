"""Decimation/interpolation with multi-linear or Gaussian kernels.

Output positions map back to input coordinates endpoint-to-endpoint; weights
are gathered in an infinity-norm neighbourhood of fixed radius and normalized
to sum to one, so the operation is linear in the input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..tensor import TensorError
from .conv import _as_nd

__all__ = ["InterpSpec", "interp_out_shape", "interp_weights",
           "interp_forward", "interp_backward"]


@dataclass(frozen=True)
class InterpSpec:
    percent: float                      # output resolution = floor(percent/100 * N)
    kernel: str = "multilinear"         # "multilinear" | "gaussian"
    radius: float | None = None         # multilinear forces 1

    def __post_init__(self):
        if self.kernel not in ("multilinear", "gaussian"):
            raise TensorError(f"unknown interpolation kernel {self.kernel!r}")
        if self.percent <= 0:
            raise TensorError("scale percent must be positive")
        if self.kernel == "multilinear" and self.radius not in (None, 1):
            raise TensorError("multilinear interpolation uses radius 1")

    def bound_radius(self, scale: float) -> float:
        if self.kernel == "multilinear":
            return 1.0
        if self.radius is not None:
            return float(self.radius)
        return float(max(1, math.ceil(scale)))   # decimation default: ceil(sigma)


def interp_out_shape(signal: Sequence[int], spec: InterpSpec) -> tuple[int, ...]:
    out = tuple(max(1, int(math.floor(spec.percent / 100.0 * n))) for n in signal)
    return out


def _axis_matrix(n_in: int, n_out: int, spec: InterpSpec) -> np.ndarray:
    """Row-stochastic [n_out, n_in] weight matrix for one axis."""
    sigma = n_in / n_out
    r = spec.bound_radius(sigma)
    m = np.zeros((n_out, n_in))
    for p in range(n_out):
        c = p * (n_in - 1) / (n_out - 1) if n_out > 1 else (n_in - 1) / 2.0
        q_lo = math.ceil(c - r)
        if q_lo <= c - r:
            q_lo += 1                     # strict inequality |q - c| < r
        q_hi = math.floor(c + r)
        if q_hi >= c + r:
            q_hi -= 1
        q_lo, q_hi = max(0, q_lo), min(n_in - 1, q_hi)
        if q_hi < q_lo:
            raise TensorError("empty interpolation neighbourhood")
        qs = np.arange(q_lo, q_hi + 1)
        if spec.kernel == "multilinear":
            w = 1.0 - np.abs(qs - c)
        else:
            w = np.exp(-((qs - c) ** 2))
        m[p, q_lo:q_hi + 1] = w / w.sum()
    return m


def interp_weights(signal: Sequence[int], spec: InterpSpec) -> list[np.ndarray]:
    """Per-axis weight matrices; the joint weight is their outer product."""
    return [_axis_matrix(n, o, spec)
            for n, o in zip(signal, interp_out_shape(signal, spec))]


def _apply(x: np.ndarray, mats: list[np.ndarray], lead: int) -> np.ndarray:
    y = x
    for i, m in enumerate(mats):
        y = np.moveaxis(np.tensordot(m, y, axes=([1], [lead + i])), 0, lead + i)
    return y


def interp_forward(x, spec: InterpSpec, signal_rank: int, batched: bool = False,
                   weights: list[np.ndarray] | None = None) -> np.ndarray:
    x = _as_nd(x)
    lead = 2 if batched else 1
    signal = x.shape[lead:]
    if len(signal) != signal_rank:
        raise TensorError(f"signal rank {len(signal)} != expected {signal_rank}")
    mats = weights if weights is not None else interp_weights(signal, spec)
    return _apply(x, mats, lead)


def interp_backward(g_out, weights: list[np.ndarray], batched: bool = False) -> np.ndarray:
    """Scatter k_pq * g_out back onto the input grid (transposed weights)."""
    g_out = _as_nd(g_out)
    lead = 2 if batched else 1
    return _apply(g_out, [m.T for m in weights], lead)
