"""Full connection and sliced full connection kernels."""

from __future__ import annotations

import numpy as np

from ..tensor import TensorError
from .conv import _as_nd

__all__ = ["fc_forward", "fc_backward", "sliced_fc_forward", "sliced_fc_backward"]


def _flatten(x: np.ndarray, batched: bool) -> np.ndarray:
    return x.reshape(x.shape[0], -1) if batched else x.reshape(-1)


def fc_forward(x, w, b, batched: bool = False) -> np.ndarray:
    """y = W . flatten(x) + B, with W of shape [n_out, n_in]."""
    x, w = _as_nd(x), _as_nd(w)
    xf = _flatten(x, batched)
    n_in = xf.shape[-1]
    if w.ndim != 2 or w.shape[1] != n_in:
        raise TensorError(f"weight shape {w.shape} incompatible with input size {n_in}")
    y = xf @ w.T
    if b is not None:
        bv = _as_nd(b)
        if bv.shape != (w.shape[0],):
            raise TensorError(f"bias shape {bv.shape} != ({w.shape[0]},)")
        y = y + bv
    return y


def fc_backward(g_out, w, x, batched: bool = False):
    """Returns (grad wrt x, grad wrt W, grad wrt B).

    g_in = W^T g_out; g_W = g_out (outer) x^T; g_B = g_out (summed over batch).
    """
    g_out, w, x = _as_nd(g_out), _as_nd(w), _as_nd(x)
    xf = _flatten(x, batched)
    if batched:
        g_in = (g_out @ w).reshape(x.shape)
        g_w = g_out.T @ xf
        g_b = g_out.sum(axis=0)
    else:
        g_in = (w.T @ g_out).reshape(x.shape)
        g_w = np.outer(g_out, xf)
        g_b = g_out.copy()
    return g_in, g_w, g_b


def _sliced_view(x: np.ndarray, slice_axis: int, batched: bool) -> np.ndarray:
    """Rearrange [.., a, *signal] to [.., a, p, q] with the slice axis as p."""
    lead = 2 if batched else 1
    ax = lead + slice_axis
    if not lead <= ax < x.ndim:
        raise TensorError(f"slice axis {slice_axis} outside signal rank {x.ndim - lead}")
    moved = np.moveaxis(x, ax, lead)
    return moved.reshape(moved.shape[: lead + 1] + (-1,))


def sliced_fc_forward(x, a, slice_axis: int, batched: bool = False) -> np.ndarray:
    """Full connection within slices: y[o, p] = sum_{i, q} A[o, i, p, q] x[i, p, q]."""
    x, a = _as_nd(x), _as_nd(a)
    xs = _sliced_view(x, slice_axis, batched)
    if a.ndim != 4 or a.shape[1:] != xs.shape[-3:]:
        raise TensorError(f"parameter shape {a.shape} != (out, {xs.shape[-3:]})")
    if batched:
        return np.einsum("oipq,bipq->bop", a, xs)
    return np.einsum("oipq,ipq->op", a, xs)


def sliced_fc_backward(g_out, a, x, slice_axis: int, batched: bool = False):
    """Gradient pair of the sliced accumulation: returns (g_x, g_A)."""
    g_out, a, x = _as_nd(g_out), _as_nd(a), _as_nd(x)
    xs = _sliced_view(x, slice_axis, batched)
    lead = 2 if batched else 1
    if batched:
        g_xs = np.einsum("oipq,bop->bipq", a, g_out)
        g_a = np.einsum("bop,bipq->oipq", g_out, xs)
    else:
        g_xs = np.einsum("oipq,op->ipq", a, g_out)
        g_a = np.einsum("op,ipq->oipq", g_out, xs)
    moved_shape = list(x.shape)
    moved_shape.insert(lead, moved_shape.pop(lead + slice_axis))
    g_x = np.moveaxis(g_xs.reshape(moved_shape), lead, lead + slice_axis)
    return g_x, g_a
