"""Max and average pooling over full blocks, plus slice/global variants."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Sequence

import numpy as np

from ..tensor import TensorError, lex_strides
from .conv import _as_nd, padding_for

__all__ = ["PoolSpec", "pool_out_shape", "maxpool_forward", "maxpool_backward",
           "avgpool_forward", "avgpool_backward"]


@dataclass(frozen=True)
class PoolSpec:
    """Pooling hyper-parameters.

    window/stride of None derive from the input at bind time: pooled axes get
    the full axis size (slice/global kinds).  ``pooled_axes`` of None pools
    every signal axis.  ``squeeze`` drops size-1 pooled axes from the output.
    """

    mode: str = "max"                       # "max" | "avg"
    window: tuple[int, ...] | None = None
    stride: tuple[int, ...] | None = None
    padded: bool = False
    pooled_axes: tuple[int, ...] | None = None
    squeeze: bool = False

    def __post_init__(self):
        if self.mode not in ("max", "avg"):
            raise TensorError(f"unknown pooling mode {self.mode!r}")
        for field in ("window", "stride"):
            v = getattr(self, field)
            if v is not None and any(e < 1 for e in v):
                raise TensorError(f"{field} entries must be >= 1")

    def bind(self, signal: Sequence[int]):
        """Concrete per-axis (window, stride, (left, right) pad) for a signal shape."""
        d = len(signal)
        if self.window is not None:
            k = self.window if len(self.window) == d else None
            if k is None and len(self.window) == 1:
                k = self.window * d
            if k is None:
                raise TensorError(f"window {self.window} does not fit {d} signal axes")
        else:
            pooled = set(range(d)) if self.pooled_axes is None else set(self.pooled_axes)
            if any(not 0 <= a < d for a in pooled):
                raise TensorError(f"pooled axes {sorted(pooled)} outside rank {d}")
            k = tuple(signal[i] if i in pooled else 1 for i in range(d))
        s = self.stride if self.stride is not None else k
        if len(s) == 1 and d > 1:
            s = s * d
        if len(s) != d:
            raise TensorError(f"stride {s} does not fit {d} signal axes")
        if self.padded:
            pads = tuple(padding_for(n, kn, 1, st)[1:] for n, kn, st in zip(signal, k, s))
        else:
            pads = ((0, 0),) * d
        for n, kn, (l, r) in zip(signal, k, pads):
            if kn > n + l + r:
                raise TensorError(f"pool window {kn} exceeds axis of size {n + l + r}")
        return tuple(k), tuple(s), pads


def pool_out_shape(signal: Sequence[int], spec: PoolSpec) -> tuple[int, ...]:
    """N_out = ceil((N - k + 1) / stride) per axis (floor(N/k) when stride = k)."""
    k, s, pads = spec.bind(signal)
    out = tuple(
        -(-(n + l + r - kn + 1) // st)
        for n, kn, st, (l, r) in zip(signal, k, s, pads)
    )
    if spec.squeeze:
        squeezed = tuple(n for n, kn in zip(out, k) if not (n == 1 and kn > 1))
        return squeezed
    return out


def _tap_ranges(q, signal, out_sig, k, s, pads):
    """Valid output positions and matching input slices for one window offset."""
    g_sl, x_sl = [], []
    for qi, n, p_n, st, (l, _r) in zip(q, signal, out_sig, s, pads):
        # input position st*p + qi - l must land in [0, n)
        p_lo = max(0, -((qi - l) // st))            # ceil((l - qi) / st)
        p_hi = min(p_n - 1, (n - 1 + l - qi) // st)
        if p_hi < p_lo:
            return None
        start = st * p_lo + qi - l
        g_sl.append(slice(p_lo, p_hi + 1))
        x_sl.append(slice(start, start + st * (p_hi - p_lo) + 1, st))
    return tuple(g_sl), tuple(x_sl)


def _flat_index_grid(x_sl, signal) -> np.ndarray:
    """Flat (lexicographic) signal index for every position of a strided slice grid."""
    strides = lex_strides(signal)
    counts = tuple(len(range(sl.start, sl.stop, sl.step)) for sl in x_sl)
    grid = np.zeros(counts, dtype=np.int64)
    for ax, (sl, st) in enumerate(zip(x_sl, strides)):
        qs = np.arange(sl.start, sl.stop, sl.step, dtype=np.int64) * st
        grid = grid + qs.reshape((1,) * ax + (-1,) + (1,) * (len(counts) - ax - 1))
    return grid


_BN = (slice(None), slice(None))


def maxpool_forward(x, spec: PoolSpec, signal_rank: int, batched: bool = False):
    """Returns (pooled, arg) with arg holding flat signal indexes of the maxima.

    Ties go to the lexicographically smallest window position.
    """
    x = _as_nd(x)
    xb = x if batched else x[None]
    signal = xb.shape[2:]
    if len(signal) != signal_rank:
        raise TensorError(f"signal rank {len(signal)} != expected {signal_rank}")
    k, s, pads = spec.bind(signal)
    out_sig = tuple(
        -(-(n + l + r - kn + 1) // st)
        for n, kn, st, (l, r) in zip(signal, k, s, pads)
    )
    lead = xb.shape[:2]
    vals = np.full(lead + out_sig, -np.inf)
    args = np.zeros(lead + out_sig, dtype=np.int64)
    for q in product(*map(range, k)):
        rng = _tap_ranges(q, signal, out_sig, k, s, pads)
        if rng is None:
            continue
        g_sl, x_sl = rng
        cand = xb[_BN + x_sl]
        here = vals[_BN + g_sl]
        flat = _flat_index_grid(x_sl, signal)
        better = cand > here
        vals[_BN + g_sl] = np.where(better, cand, here)
        args[_BN + g_sl] = np.where(better, flat, args[_BN + g_sl])
    y, a = (vals, args) if batched else (vals[0], args[0])
    if spec.squeeze:
        keep = tuple(i for i, (n, kn) in enumerate(zip(out_sig, k))
                     if not (n == 1 and kn > 1))
        lead_rank = y.ndim - len(out_sig)
        new_shape = y.shape[:lead_rank] + tuple(out_sig[i] for i in keep)
        y, a = y.reshape(new_shape), a.reshape(new_shape)
    return y, a


def maxpool_backward(g_out, arg, x_signal: Sequence[int], batched: bool = False):
    """Scatter each output gradient onto its recorded argmax position."""
    g_out, arg = _as_nd(g_out), np.asarray(arg)
    if g_out.shape != arg.shape:
        raise TensorError(f"gradient shape {g_out.shape} != arg shape {arg.shape}")
    gb = g_out if batched else g_out[None]
    ab = arg if batched else arg[None]
    n_b, n_a = gb.shape[0], gb.shape[1]
    flat_n = math.prod(x_signal)
    g_in = np.zeros((n_b, n_a, flat_n))
    per = math.prod(gb.shape[2:], start=1)
    rows = np.repeat(np.arange(n_b * n_a), per)
    np.add.at(g_in.reshape(n_b * n_a, flat_n), (rows, ab.reshape(-1)), gb.reshape(-1))
    g_in = g_in.reshape((n_b, n_a) + tuple(x_signal))
    return g_in if batched else g_in[0]


def avgpool_forward(x, spec: PoolSpec, signal_rank: int, batched: bool = False):
    """Block averages; clipped window positions contribute zero (full divisor)."""
    x = _as_nd(x)
    xb = x if batched else x[None]
    signal = xb.shape[2:]
    if len(signal) != signal_rank:
        raise TensorError(f"signal rank {len(signal)} != expected {signal_rank}")
    k, s, pads = spec.bind(signal)
    out_sig = tuple(
        -(-(n + l + r - kn + 1) // st)
        for n, kn, st, (l, r) in zip(signal, k, s, pads)
    )
    acc = np.zeros(xb.shape[:2] + out_sig)
    for q in product(*map(range, k)):
        rng = _tap_ranges(q, signal, out_sig, k, s, pads)
        if rng is None:
            continue
        g_sl, x_sl = rng
        acc[_BN + g_sl] += xb[_BN + x_sl]
    acc /= math.prod(k)
    y = acc if batched else acc[0]
    if spec.squeeze:
        keep = tuple(i for i, (n, kn) in enumerate(zip(out_sig, k))
                     if not (n == 1 and kn > 1))
        lead_rank = y.ndim - len(out_sig)
        y = y.reshape(y.shape[:lead_rank] + tuple(out_sig[i] for i in keep))
    return y


def avgpool_backward(g_out, spec: PoolSpec, x_signal: Sequence[int],
                     batched: bool = False):
    """Spread each output gradient uniformly over its block (margin gets zero)."""
    g_out = _as_nd(g_out)
    signal = tuple(x_signal)
    k, s, pads = spec.bind(signal)
    out_sig = tuple(
        -(-(n + l + r - kn + 1) // st)
        for n, kn, st, (l, r) in zip(signal, k, s, pads)
    )
    gb = g_out if batched else g_out[None]
    lead = gb.shape[0]
    # undo any squeeze: restore the full-rank output signal
    gb = gb.reshape((lead, gb.shape[1] if gb.ndim > 1 else 1) + out_sig) \
        if gb.ndim != 2 + len(out_sig) else gb
    g_in = np.zeros(gb.shape[:2] + signal)
    for q in product(*map(range, k)):
        rng = _tap_ranges(q, signal, out_sig, k, s, pads)
        if rng is None:
            continue
        g_sl, x_sl = rng
        g_in[_BN + x_sl] += gb[_BN + g_sl]
    g_in /= math.prod(k)
    return g_in if batched else g_in[0]
