"""Batch and instance normalization with their closed-form gradient flows."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..tensor import TensorError
from .conv import _as_nd

__all__ = ["NormState", "batchnorm_forward", "batchnorm_backward",
           "batchnorm_accumulate", "instancenorm_forward", "instancenorm_backward"]


@dataclass
class NormState:
    """Affine parameters and running statistics of one batch-norm unit."""

    beta: np.ndarray
    gamma: np.ndarray
    eps: float = 1e-7
    running_m: np.ndarray | None = None
    running_s: np.ndarray | None = None
    seen: int = 0

    @classmethod
    def for_features(cls, n_a: int, eps: float = 1e-7) -> "NormState":
        return cls(beta=np.zeros(n_a), gamma=np.ones(n_a), eps=eps)

    def running_d(self) -> np.ndarray:
        if self.seen == 0:
            raise TensorError("no accumulated statistics; run a training epoch first")
        return np.sqrt(self.running_s - self.running_m ** 2 + self.eps)


def _reduce_axes(x: np.ndarray) -> tuple[int, ...]:
    # batch axis plus every signal axis; features stay
    return (0,) + tuple(range(2, x.ndim))


def batchnorm_forward(x, state: NormState, training: bool = True):
    """Normalize per feature over batch+signal, then apply beta + gamma * xt.

    Returns (y, cache) with cache = (xt, d) as needed by the backward pass.
    Eval mode uses the accumulated running statistics.
    """
    x = _as_nd(x)
    if x.ndim < 2:
        raise TensorError("batch norm expects [batch, features, *signal]")
    axes = _reduce_axes(x)
    shape = (1, x.shape[1]) + (1,) * (x.ndim - 2)
    if training:
        m = x.mean(axis=axes)
        s = (x ** 2).mean(axis=axes)
        d = np.sqrt(s - m ** 2 + state.eps)
    else:
        m = state.running_m if state.seen else None
        if m is None:
            raise TensorError("eval-mode batch norm without accumulated statistics")
        d = state.running_d()
    xt = (x - m.reshape(shape)) / d.reshape(shape)
    y = state.beta.reshape(shape) + state.gamma.reshape(shape) * xt
    return y, (xt, d)


def batchnorm_backward(g_out, cache, state: NormState):
    """Returns (g_in, g_beta, g_gamma) per the closed-form gradient flow."""
    g_out = _as_nd(g_out)
    xt, d = cache
    axes = _reduce_axes(g_out)
    shape = (1, g_out.shape[1]) + (1,) * (g_out.ndim - 2)
    n_bs = g_out.shape[0] * int(np.prod(g_out.shape[2:])) if g_out.ndim > 2 \
        else g_out.shape[0]
    g_beta = g_out.sum(axis=axes)
    g_gamma = (xt * g_out).sum(axis=axes)
    coef = (state.gamma / d).reshape(shape)
    g_in = coef * g_out - (coef / n_bs) * (
        xt * g_gamma.reshape(shape) + g_beta.reshape(shape))
    return g_in, g_beta, g_gamma


def batchnorm_accumulate(state: NormState, x) -> NormState:
    """Fold one batch's mean and mean-square into the running statistics.

    Count-weighted: after the last epoch the running values equal the
    whole-dataset mean and mean-square.
    """
    x = _as_nd(x)
    axes = _reduce_axes(x)
    n_bs = x.shape[0] * int(np.prod(x.shape[2:])) if x.ndim > 2 else x.shape[0]
    m_k = x.mean(axis=axes)
    s_k = (x ** 2).mean(axis=axes)
    if state.seen == 0:
        state.running_m = m_k
        state.running_s = s_k
    else:
        tot = state.seen + n_bs
        state.running_m = (state.seen * state.running_m + n_bs * m_k) / tot
        state.running_s = (state.seen * state.running_s + n_bs * s_k) / tot
    state.seen += n_bs
    return state


def instancenorm_forward(x, eps: float = 1e-7):
    """Normalize over the signal domain independently per (batch, feature).

    No learned parameters; active in train and eval alike.
    Returns (y, cache) with cache = (xt, d).
    """
    x = _as_nd(x)
    if x.ndim < 3:
        raise TensorError("instance norm expects [batch, features, *signal]")
    axes = tuple(range(2, x.ndim))
    m = x.mean(axis=axes, keepdims=True)
    s = (x ** 2).mean(axis=axes, keepdims=True)
    d = np.sqrt(s - m ** 2 + eps)
    xt = (x - m) / d
    return xt, (xt, d)


def instancenorm_backward(g_out, cache):
    """g_in = (g - mean(g) - xt * mean(xt * g)) / d, means over the signal domain."""
    g_out = _as_nd(g_out)
    xt, d = cache
    axes = tuple(range(2, g_out.ndim))
    g_mean = g_out.mean(axis=axes, keepdims=True)
    corr = (xt * g_out).mean(axis=axes, keepdims=True)
    return (g_out - g_mean - xt * corr) / d
