"""Generalized (transposed) convolution: resolution arithmetic, padding, kernels.

Conventions: inputs are [N_a, *signal] or [N_b, N_a, *signal]; kernels are
[N_out, N_in, *window].  Sub-sampling by rate k reads X[f, k*p + delta*q];
over-sampling (transposed, rate 1/k) writes where k divides p + delta*q.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Sequence

import numpy as np

from ..tensor import TensorError, TensorView

__all__ = [
    "ConvSpec",
    "padding_for",
    "resolve_padding",
    "conv_out_shape",
    "aslet_residue",
    "conv_forward",
    "conv_backward_input",
    "conv_backward_params",
    "conv_param_count",
]


def _as_nd(x) -> np.ndarray:
    if isinstance(x, TensorView):
        return x.to_array()
    return np.asarray(x, dtype=np.float64)


def _per_axis(value, d: int, name: str) -> tuple[int, ...]:
    if isinstance(value, int):
        return (value,) * d
    t = tuple(int(v) for v in value)
    if len(t) != d:
        raise TensorError(f"{name} needs {d} per-axis entries, got {t}")
    return t


@dataclass(frozen=True)
class ConvSpec:
    """Hyper-parameters of one (transposed) convolution unit."""

    out_features: int
    kernel: tuple[int, ...]
    rate: tuple[int, ...] = ()        # k per axis; sampling is k or 1/k
    transposed: bool = False
    dilation: tuple[int, ...] = ()
    padding: str | tuple = "none"     # "none" | "same" | "reflect" | ((l, r), ...)
    causal: bool = False
    residue: tuple[int, ...] | None = None   # r* per axis, transposed only
    has_bias: bool = True

    def __post_init__(self):
        d = len(self.kernel)
        if d == 0:
            raise TensorError("convolution needs at least one signal axis")
        object.__setattr__(self, "kernel", _per_axis(self.kernel, d, "kernel"))
        object.__setattr__(self, "rate", _per_axis(self.rate or 1, d, "rate"))
        object.__setattr__(self, "dilation", _per_axis(self.dilation or 1, d, "dilation"))
        if any(n < 1 for n in self.kernel) or any(k < 1 for k in self.rate) \
                or any(dl < 1 for dl in self.dilation):
            raise TensorError("kernel, rate and dilation entries must be >= 1")
        if self.residue is not None:
            res = _per_axis(self.residue, d, "residue")
            if not self.transposed:
                raise TensorError("residue applies to transposed convolution only")
            if any(not 0 <= r < k for r, k in zip(res, self.rate)):
                raise TensorError(f"residue {res} outside [0, k) for rate {self.rate}")
            object.__setattr__(self, "residue", res)

    @property
    def axes(self) -> int:
        return len(self.kernel)

    def effective_residue(self) -> tuple[int, ...]:
        """Per-axis r*; defaults to k-1 when padded (output k*N), else 0."""
        if self.residue is not None:
            return self.residue
        if self.padding != "none":
            return tuple(k - 1 for k in self.rate)
        return (0,) * self.axes


def padding_for(n: int, kernel_n: int, delta: int, k: int,
                transposed: bool = False) -> tuple[int, int, int]:
    """Smallest admissible padding matching output resolution to the sampling rate.

    Returns (total, left, right).  No/over-sampling: p = delta*(kernel_n - 1).
    Sub-sampling: the smallest even p in [p0', p0' + k) with
    p0' = delta*(kernel_n - 1) - (n - 1) mod k, or 0 when p0' <= 0.
    """
    if kernel_n < 1 or delta < 1 or k < 1:
        raise TensorError("kernel, dilation and rate must be >= 1")
    p0 = delta * (kernel_n - 1)
    if transposed or k == 1:
        p = p0
    else:
        p0p = p0 - (n - 1) % k
        if p0p <= 0:
            p = 0
        else:
            p = p0p if p0p % 2 == 0 else p0p + 1
    return p, p // 2, p - p // 2


def resolve_padding(signal: Sequence[int], spec: ConvSpec) -> tuple[tuple[int, int], ...]:
    """Per-axis (left, right) padding (input pad for k-sampling, output crop for 1/k)."""
    d = spec.axes
    if len(signal) != d:
        raise TensorError(f"signal rank {len(signal)} != spec axes {d}")
    if spec.padding == "none":
        return ((0, 0),) * d
    if isinstance(spec.padding, tuple):
        pads = tuple((int(l), int(r)) for l, r in spec.padding)
        if len(pads) != d:
            raise TensorError("explicit padding needs one (left, right) pair per axis")
        return pads
    if spec.padding not in ("same", "reflect"):
        raise TensorError(f"unknown padding mode {spec.padding!r}")
    out = []
    for n, kn, dl, k in zip(signal, spec.kernel, spec.dilation, spec.rate):
        _, left, right = padding_for(n, kn, dl, k, spec.transposed)
        out.append((left, right))
    return tuple(out)


def conv_out_shape(signal: Sequence[int], spec: ConvSpec) -> tuple[int, ...]:
    """Signal-domain resolution of the convolution output.

    Down: N_out = 1 + floor(Nbar / k), Nbar = N_padded - (n-1)*delta - 1.
    Up:   N_out = (N-1)*k + 1 + (n-1)*delta + r*  minus any output crop.
    """
    pads = resolve_padding(signal, spec)
    out = []
    if not spec.transposed:
        for n, (l, r), kn, dl, k in zip(signal, pads, spec.kernel, spec.dilation, spec.rate):
            nbar = n + l + r - (kn - 1) * dl - 1
            if nbar < 0:
                raise TensorError(
                    f"dilated kernel {(kn - 1) * dl + 1} exceeds padded input {n + l + r}"
                )
            out.append(1 + nbar // k)
        return tuple(out)
    res = spec.effective_residue()
    for n, (l, r), kn, dl, k, rs in zip(signal, pads, spec.kernel, spec.dilation,
                                        spec.rate, res):
        raw = (n - 1) * k + 1 + (kn - 1) * dl + rs
        cropped = raw - l - r
        if cropped < 1:
            raise TensorError(f"output crop ({l}, {r}) empties axis of raw size {raw}")
        out.append(cropped)
    return tuple(out)


def aslet_residue(n_x: int, kernel_n: int, delta: int, k: int) -> int:
    """The unique r* making a down/up pair resolution invariant: Nbar mod k."""
    nbar = n_x - (kernel_n - 1) * delta - 1
    if nbar < 0:
        raise TensorError(
            f"down-convolution infeasible: dilated kernel exceeds input {n_x}"
        )
    return nbar % k


def conv_param_count(in_features: int, spec: ConvSpec) -> int:
    n_s = math.prod(spec.kernel)
    per_filter = n_s * in_features + (1 if spec.has_bias else 0)
    return per_filter * spec.out_features


# -- kernel internals --------------------------------------------------------

def _causal_mask(kernel: tuple[int, ...]) -> np.ndarray:
    """Zero every tap strictly after the lexicographic center."""
    n = math.prod(kernel)
    mask = np.ones(n)
    mask[(n - 1) // 2 + 1:] = 0.0
    return mask.reshape(kernel)


def _effective_weights(w: np.ndarray, spec: ConvSpec) -> np.ndarray:
    if w.shape[2:] != spec.kernel:
        raise TensorError(f"kernel shape {w.shape[2:]} != spec kernel {spec.kernel}")
    if w.shape[0] != spec.out_features:
        raise TensorError(f"{w.shape[0]} filters != spec out_features {spec.out_features}")
    if spec.causal:
        return w * _causal_mask(spec.kernel)
    return w


def _pad_signal(xb: np.ndarray, pads, mode: str) -> np.ndarray:
    if all(l == 0 and r == 0 for l, r in pads):
        return xb
    widths = [(0, 0), (0, 0)] + list(pads)
    if mode == "reflect":
        for (l, r), n in zip(pads, xb.shape[2:]):
            if max(l, r) > n - 1:
                raise TensorError(f"reflect padding ({l}, {r}) exceeds axis size {n} - 1")
        return np.pad(xb, widths, mode="reflect")
    return np.pad(xb, widths, mode="constant")


def _unpad_grad(gp: np.ndarray, pads, mode: str) -> np.ndarray:
    """Drop pad-region gradients (zero pad) or fold them back (reflect pad)."""
    g = gp
    for ax, (l, r) in enumerate(pads, start=2):
        if l == 0 and r == 0:
            continue
        n = g.shape[ax] - l - r
        idx = [slice(None)] * g.ndim
        idx[ax] = slice(l, l + n)
        core = g[tuple(idx)].copy()
        if mode == "reflect":
            if l:
                idx[ax] = slice(l - 1, None, -1)
                left = g[tuple(idx)]
                tgt = [slice(None)] * g.ndim
                tgt[ax] = slice(1, l + 1)
                core[tuple(tgt)] += left
            if r:
                idx[ax] = slice(l + n + r - 1, l + n - 1, -1)
                right = g[tuple(idx)]
                tgt = [slice(None)] * g.ndim
                tgt[ax] = slice(n - 1 - r, n - 1)
                core[tuple(tgt)] += right
        g = core
    return g


def _down_slices(q, out_sig, spec):
    return tuple(
        slice(dl * qi, dl * qi + k * (p - 1) + 1, k)
        for qi, p, dl, k in zip(q, out_sig, spec.dilation, spec.rate)
    )


def _up_slices(q, signal, raw, spec):
    """Per-axis aligned (input slice, output slice) for one kernel tap, or None."""
    x_sl, y_sl = [], []
    for qi, n, p_raw, dl, k in zip(q, signal, raw, spec.dilation, spec.rate):
        m_lo = -((-dl * qi) // k)            # ceil(delta*q / k)
        m_hi = min(n - 1, (p_raw - 1 + dl * qi) // k)
        if m_hi < m_lo:
            return None
        x_sl.append(slice(m_lo, m_hi + 1))
        start = k * m_lo - dl * qi
        y_sl.append(slice(start, start + k * (m_hi - m_lo) + 1, k))
    return tuple(x_sl), tuple(y_sl)


def _raw_up_shape(signal, spec):
    res = spec.effective_residue()
    return tuple(
        (n - 1) * k + 1 + (kn - 1) * dl + rs
        for n, kn, dl, k, rs in zip(signal, spec.kernel, spec.dilation, spec.rate, res)
    )


def _split_batch(x: np.ndarray, spec: ConvSpec):
    d = spec.axes
    if x.ndim == d + 1:
        return x[None], False
    if x.ndim == d + 2:
        return x, True
    raise TensorError(f"rank {x.ndim} input for a {d}-axis convolution")


_BN = (slice(None), slice(None))  # batch + feature axes


def conv_forward(x, w, b, spec: ConvSpec) -> np.ndarray:
    x, w = _as_nd(x), _as_nd(w)
    xb, batched = _split_batch(x, spec)
    w_eff = _effective_weights(w, spec)
    if xb.shape[1] != w.shape[1]:
        raise TensorError(f"input features {xb.shape[1]} != kernel features {w.shape[1]}")
    signal = xb.shape[2:]
    pads = resolve_padding(signal, spec)
    n_b = xb.shape[0]
    g_feat = spec.out_features
    if not spec.transposed:
        xp = _pad_signal(xb, pads, "reflect" if spec.padding == "reflect" else "zero")
        out_sig = conv_out_shape(signal, spec)
        y = np.zeros((n_b, g_feat) + out_sig)
        for q in product(*map(range, spec.kernel)):
            sl = _down_slices(q, out_sig, spec)
            y += np.einsum("gf,bf...->bg...", w_eff[(slice(None), slice(None)) + q],
                           xp[_BN + sl])
    else:
        raw = _raw_up_shape(signal, spec)
        y = np.zeros((n_b, g_feat) + raw)
        for q in product(*map(range, spec.kernel)):
            sls = _up_slices(q, signal, raw, spec)
            if sls is None:
                continue
            x_sl, y_sl = sls
            y[_BN + y_sl] += np.einsum(
                "gf,bf...->bg...", w_eff[(slice(None), slice(None)) + q], xb[_BN + x_sl])
        crop = tuple(slice(l, dim - r) for (l, r), dim in zip(pads, raw))
        y = y[_BN + crop]
    if b is not None and spec.has_bias:
        bv = _as_nd(b)
        y = y + bv.reshape((1, g_feat) + (1,) * spec.axes)
    return y if batched else y[0]


def conv_backward_input(g_out, w, spec: ConvSpec, x_signal: Sequence[int]) -> np.ndarray:
    """Gradient wrt the convolution input, by the transposed index pattern."""
    g_out, w = _as_nd(g_out), _as_nd(w)
    gb, batched = _split_batch(g_out, spec)
    w_eff = _effective_weights(w, spec)
    signal = tuple(x_signal)
    pads = resolve_padding(signal, spec)
    out_sig = conv_out_shape(signal, spec)
    if gb.shape[1] != spec.out_features or gb.shape[2:] != out_sig:
        raise TensorError(
            f"output gradient shape {gb.shape[1:]} != {(spec.out_features,) + out_sig}"
        )
    n_b, f_feat = gb.shape[0], w.shape[1]
    if not spec.transposed:
        padded = tuple(n + l + r for n, (l, r) in zip(signal, pads))
        gx = np.zeros((n_b, f_feat) + padded)
        for q in product(*map(range, spec.kernel)):
            sl = _down_slices(q, out_sig, spec)
            gx[_BN + sl] += np.einsum(
                "gf,bg...->bf...", w_eff[(slice(None), slice(None)) + q], gb)
        gx = _unpad_grad(gx, pads, "reflect" if spec.padding == "reflect" else "zero")
    else:
        raw = _raw_up_shape(signal, spec)
        g_raw = np.zeros((n_b, spec.out_features) + raw)
        crop = tuple(slice(l, dim - r) for (l, r), dim in zip(pads, raw))
        g_raw[_BN + crop] = gb
        gx = np.zeros((n_b, f_feat) + signal)
        for q in product(*map(range, spec.kernel)):
            sls = _up_slices(q, signal, raw, spec)
            if sls is None:
                continue
            x_sl, y_sl = sls
            gx[_BN + x_sl] += np.einsum(
                "gf,bg...->bf...", w_eff[(slice(None), slice(None)) + q],
                g_raw[_BN + y_sl])
    return gx if batched else gx[0]


def conv_backward_params(g_out, x, spec: ConvSpec) -> tuple[np.ndarray, np.ndarray]:
    """Gradients wrt kernel weights and bias."""
    g_out, x = _as_nd(g_out), _as_nd(x)
    gb, _ = _split_batch(g_out, spec)
    xb, _ = _split_batch(x, spec)
    if gb.shape[0] != xb.shape[0]:
        raise TensorError("batch sizes of input and output gradient differ")
    signal = xb.shape[2:]
    pads = resolve_padding(signal, spec)
    out_sig = conv_out_shape(signal, spec)
    if gb.shape[2:] != out_sig:
        raise TensorError(f"output gradient signal {gb.shape[2:]} != {out_sig}")
    f_feat = xb.shape[1]
    gw = np.zeros((spec.out_features, f_feat) + spec.kernel)
    def _tap_grad(g_part: np.ndarray, x_part: np.ndarray) -> np.ndarray:
        g2 = g_part.reshape(g_part.shape[0], g_part.shape[1], -1)
        x2 = x_part.reshape(x_part.shape[0], x_part.shape[1], -1)
        return np.einsum("bgp,bfp->gf", g2, x2)

    if not spec.transposed:
        xp = _pad_signal(xb, pads, "reflect" if spec.padding == "reflect" else "zero")
        for q in product(*map(range, spec.kernel)):
            sl = _down_slices(q, out_sig, spec)
            gw[(slice(None), slice(None)) + q] = _tap_grad(gb, xp[_BN + sl])
    else:
        raw = _raw_up_shape(signal, spec)
        g_raw = np.zeros((gb.shape[0], spec.out_features) + raw)
        crop = tuple(slice(l, dim - r) for (l, r), dim in zip(pads, raw))
        g_raw[_BN + crop] = gb
        for q in product(*map(range, spec.kernel)):
            sls = _up_slices(q, signal, raw, spec)
            if sls is None:
                continue
            x_sl, y_sl = sls
            gw[(slice(None), slice(None)) + q] = _tap_grad(
                g_raw[_BN + y_sl], xb[_BN + x_sl])
    if spec.causal:
        gw *= _causal_mask(spec.kernel)
    gb_sum = gb.sum(axis=(0,) + tuple(range(2, gb.ndim)))
    return gw, gb_sum
