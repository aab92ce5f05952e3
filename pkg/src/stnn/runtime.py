"""Per-unit-kind execution: forward kernels with caches, and their duals.

All buffer values carry a leading batch axis.  Caches hold exactly what the
gradient kernels need; discrete decisions (pool argmaxes, activation sign
patterns, argmax picks) are appended to the tape's kink signature so a
gradient check can recognize non-smooth coordinates.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

from .nn import (
    activation_backward,
    activation_forward,
    avgpool_backward,
    avgpool_forward,
    batchnorm_accumulate,
    batchnorm_backward,
    batchnorm_forward,
    conv_backward_input,
    conv_backward_params,
    conv_forward,
    fc_backward,
    fc_forward,
    instancenorm_backward,
    instancenorm_forward,
    interp_backward,
    interp_forward,
    interp_weights,
    maxpool_backward,
    maxpool_forward,
    sliced_fc_backward,
    sliced_fc_forward,
)
from .nn.norm import NormState

__all__ = ["run_unit", "backward_unit", "DUAL_KINDS"]

DUAL_KINDS = {
    "conv": "conv_grad", "fc": "fc_grad", "sliced_fc": "sliced_fc_grad",
    "pool": "pool_grad", "interp": "interp_scatter",
    "batchnorm": "batchnorm_grad", "instancenorm": "instancenorm_grad",
    "activation": "activation_grad", "identity": "identity",
    "math": "math_grad", "merge": "split", "split": "merge",
    "adder": "fanout",
}


def _sign_mark(tape, payload: bytes) -> None:
    tape["_kinks"].append(hashlib.blake2b(payload, digest_size=8).digest())


def _norm_state(g, unit) -> NormState:
    state = unit.bound.get("state")
    if state is None:
        state = NormState(beta=None, gamma=None)
        unit.bound["state"] = state
    state.beta = g.store.tensors[unit.bound["beta"]]
    state.gamma = g.store.tensors[unit.bound["gamma"]]
    return state


def run_unit(g, unit, xs, mode, tape):
    """Returns ([outputs...], cache)."""
    kind = unit.kind
    x = xs[0] if xs else None
    if kind == "conv":
        spec = unit.bound["spec"]
        w = g.store.tensors[unit.bound["w"]]
        b = g.store.tensors[unit.bound["b"]]
        return [conv_forward(x, w, b, spec)], {"x": x}
    if kind == "fc":
        w = g.store.tensors[unit.bound["w"]]
        b = g.store.tensors[unit.bound["b"]]
        return [fc_forward(x, w, b, batched=True)], {"x": x}
    if kind == "sliced_fc":
        a = g.store.tensors[unit.bound["a"]]
        pos = unit.bound["slice_pos"]
        return [sliced_fc_forward(x, a, pos, batched=True)], {"x": x}
    if kind == "pool":
        spec = unit.bound["spec"]
        rank = unit.bound["signal_rank"]
        if spec.mode == "max":
            y, arg = maxpool_forward(x, spec, rank, batched=True)
            _sign_mark(tape, arg.tobytes())
            return [y], {"arg": arg, "signal": x.shape[2:]}
        y = avgpool_forward(x, spec, rank, batched=True)
        return [y], {"signal": x.shape[2:]}
    if kind == "interp":
        spec = unit.bound["spec"]
        mats = interp_weights(x.shape[2:], spec)
        y = interp_forward(x, spec, unit.bound["signal_rank"], batched=True,
                           weights=mats)
        return [y], {"mats": mats}
    if kind == "batchnorm":
        state = _norm_state(g, unit)
        training = mode == "train"
        y, cache = batchnorm_forward(x, state, training=training)
        if training:
            batchnorm_accumulate(state, x)
        return [y], {"cache": cache}
    if kind == "instancenorm":
        y, cache = instancenorm_forward(x)
        return [y], {"cache": cache}
    if kind == "activation":
        fn = unit.recipe.params["fn"]
        slope = unit.recipe.params.get("slope", 0)
        y, cache = activation_forward(fn, x, slope_index=slope)
        if fn in ("relu", "leaky_relu"):
            _sign_mark(tape, (x > 0).tobytes())
        return [y], {"cache": cache}
    if kind == "identity":
        return [x], {}
    if kind == "merge":
        return _merge_forward(g, unit, xs)
    if kind == "split":
        pos = unit.bound["axis_pos"] + 2
        widths = unit.bound["widths"]
        outs, at = [], 0
        for w in widths:
            sl = [slice(None)] * x.ndim
            sl[pos] = slice(at, at + w)
            outs.append(x[tuple(sl)])
            at += w
        return outs, {"pos": pos, "widths": widths}
    if kind == "adder":
        return _adder_forward(g, unit, xs)
    if kind == "math":
        return _math_forward(g, unit, xs, tape)
    raise ValueError(f"no forward rule for unit kind {kind!r}")


def _merge_forward(g, unit, xs):
    axis = unit.params["axis"]
    if axis in ("*", "pack"):
        flat = [x.reshape(x.shape[0], -1) for x in xs]
        return [np.concatenate(flat, axis=1)], \
            {"parts": [x.shape for x in xs]}
    pos = unit.bound["axis_pos"] + 2
    return [np.concatenate(xs, axis=pos)], \
        {"pos": pos, "parts": [x.shape[pos] for x in xs]}


def _adder_forward(g, unit, xs):
    projections = unit.bound.get("projections", {})
    total = xs[0].copy()
    cache = {"proj_in": {}}
    for i, x in enumerate(xs[1:], start=1):
        if i in projections:
            proj = projections[i]
            w = g.store.tensors[proj["w"]]
            b = g.store.tensors[proj["b"]]
            if proj["kind"] == "conv":
                y = conv_forward(x, w, b, proj["spec"])
            else:
                y = fc_forward(x, w, b, batched=True).reshape(
                    (x.shape[0],) + proj["dst"])
            cache["proj_in"][i] = x
            total = total + y
        else:
            total = total + x
    return [total], cache


def _bcast_pair(a, b):
    """Reshape a size-1 operand so it broadcasts against the full one."""
    if a.shape == b.shape:
        return a, b
    if math.prod(a.shape[1:]) == 1:
        return a.reshape(a.shape[0], *([1] * (b.ndim - 1))), b
    return a, b.reshape(b.shape[0], *([1] * (a.ndim - 1)))


def _math_forward(g, unit, xs, tape):
    fn = unit.recipe.params["fn"]
    if unit.params.get("packed"):
        parts = unit.bound["parts"]
        flat = xs[0]
        xs, at = [], 0
        for shape in parts:
            n = math.prod(shape)
            xs.append(flat[:, at:at + n].reshape((flat.shape[0],) + shape))
            at += n
    if fn == "exp":
        y = np.exp(xs[0])
        return [y], {"y": y}
    if fn == "ln":
        return [np.log(xs[0])], {"x": xs[0]}
    if fn == "negln":
        return [-np.log(xs[0])], {"x": xs[0]}
    if fn in ("add", "sub", "mul", "div"):
        a, b = xs
        aa, bb = _bcast_pair(a, b)
        ops = {"add": np.add, "sub": np.subtract, "mul": np.multiply,
               "div": np.divide}
        return [ops[fn](aa, bb)], {"a": a, "b": b}
    if fn == "sqnorm":
        x = xs[0].reshape(xs[0].shape[0], -1)
        return [np.sum(x * x, axis=1, keepdims=True)], {"x": xs[0]}
    if fn == "sqdist":
        a, b = xs
        d = (a - b).reshape(a.shape[0], -1)
        return [np.sum(d * d, axis=1, keepdims=True)], {"a": a, "b": b}
    if fn == "sumall":
        x = xs[0].reshape(xs[0].shape[0], -1)
        return [x.sum(axis=1, keepdims=True)], {"shape": xs[0].shape}
    if fn == "maxall":
        x = xs[0].reshape(xs[0].shape[0], -1)
        am = np.argmax(x, axis=1)
        _sign_mark(tape, am.tobytes())
        return [x[np.arange(x.shape[0]), am][:, None]], \
            {"am": am, "shape": xs[0].shape}
    if fn == "submax":
        x = xs[0].reshape(xs[0].shape[0], -1)
        am = np.argmax(x, axis=1)
        _sign_mark(tape, am.tobytes())
        y = x - x[np.arange(x.shape[0]), am][:, None]
        return [y.reshape(xs[0].shape)], {"am": am, "shape": xs[0].shape}
    if fn == "pick":
        x, idx = xs
        flat = x.reshape(x.shape[0], -1)
        ii = np.clip(idx.reshape(idx.shape[0], -1)[:, 0].astype(int),
                     0, flat.shape[1] - 1)
        _sign_mark(tape, ii.tobytes())
        return [flat[np.arange(flat.shape[0]), ii][:, None]], \
            {"ii": ii, "shape": x.shape}
    if fn == "l2norm":
        x = xs[0].reshape(xs[0].shape[0], -1)
        n = np.linalg.norm(x, axis=1, keepdims=True)
        y = x / n
        return [y.reshape(xs[0].shape)], {"y": y, "n": n, "shape": xs[0].shape}
    if fn == "reshape":
        target = unit.recipe.params["payload"]
        return [xs[0].reshape((xs[0].shape[0],) + tuple(target))], \
            {"shape": xs[0].shape}
    raise ValueError(f"no forward rule for algebraic form {fn!r}")


# -- duals --------------------------------------------------------------------

def backward_unit(g, unit, g_outs, cache, corrupt=None):
    """Returns gradients for each input buffer; parameter gradients accumulate
    into the store."""
    kind = unit.kind
    g_out = g_outs[0] if g_outs else None
    gains = _backward_dispatch(g, unit, g_outs, cache)
    if corrupt is not None and unit.kind == corrupt.get("kind"):
        gains = [gi * corrupt.get("scale", 2.0) if gi is not None else None
                 for gi in gains]
    return gains


def _acc(g, name, value):
    g.store.grads[name] = g.store.grads.get(name, 0) + value


def _backward_dispatch(g, unit, g_outs, cache):
    kind = unit.kind
    g_out = g_outs[0] if g_outs else None
    if kind == "conv":
        spec = unit.bound["spec"]
        w = g.store.tensors[unit.bound["w"]]
        x = cache["x"]
        gx = conv_backward_input(g_out, w, spec, x.shape[2:])
        gw, gb = conv_backward_params(g_out, x, spec)
        _acc(g, unit.bound["w"], gw)
        _acc(g, unit.bound["b"], gb)
        return [gx]
    if kind == "fc":
        w = g.store.tensors[unit.bound["w"]]
        x = cache["x"]
        gx, gw, gb = fc_backward(g_out, w, x, batched=True)
        _acc(g, unit.bound["w"], gw)
        _acc(g, unit.bound["b"], gb)
        return [gx]
    if kind == "sliced_fc":
        a = g.store.tensors[unit.bound["a"]]
        x = cache["x"]
        gx, ga = sliced_fc_backward(g_out, a, x, unit.bound["slice_pos"],
                                    batched=True)
        _acc(g, unit.bound["a"], ga)
        return [gx]
    if kind == "pool":
        spec = unit.bound["spec"]
        if spec.mode == "max":
            return [maxpool_backward(g_out, cache["arg"], cache["signal"],
                                     batched=True)]
        return [avgpool_backward(g_out, spec, cache["signal"], batched=True)]
    if kind == "interp":
        return [interp_backward(g_out, cache["mats"], batched=True)]
    if kind == "batchnorm":
        state = _norm_state(g, unit)
        gx, g_beta, g_gamma = batchnorm_backward(g_out, cache["cache"], state)
        _acc(g, unit.bound["beta"], g_beta)
        _acc(g, unit.bound["gamma"], g_gamma)
        return [gx]
    if kind == "instancenorm":
        return [instancenorm_backward(g_out, cache["cache"])]
    if kind == "activation":
        fn = unit.recipe.params["fn"]
        slope = unit.recipe.params.get("slope", 0)
        return [activation_backward(fn, g_out, cache["cache"],
                                    slope_index=slope)]
    if kind == "identity":
        return [g_out]
    if kind == "merge":
        return _merge_backward(unit, g_out, cache)
    if kind == "split":
        return [_split_backward(unit, g_outs, cache)]
    if kind == "adder":
        return _adder_backward(g, unit, g_out, cache)
    if kind == "math":
        return _math_backward(g, unit, g_out, cache)
    raise ValueError(f"no backward rule for unit kind {kind!r}")


def _merge_backward(unit, g_out, cache):
    if "pos" in cache:
        pos = cache["pos"]
        outs, at = [], 0
        for width in cache["parts"]:
            sl = [slice(None)] * g_out.ndim
            sl[pos] = slice(at, at + width)
            outs.append(g_out[tuple(sl)])
            at += width
        return outs
    outs, at = [], 0
    flat = g_out.reshape(g_out.shape[0], -1)
    for shape in cache["parts"]:
        n = math.prod(shape[1:])
        outs.append(flat[:, at:at + n].reshape(shape))
        at += n
    return outs


def _split_backward(unit, g_outs, cache):
    return np.concatenate(g_outs, axis=cache["pos"])


def _adder_backward(g, unit, g_out, cache):
    gains = [g_out]
    projections = unit.bound.get("projections", {})
    for i in range(1, len(unit.in_bufs)):
        if i in projections:
            proj = projections[i]
            w = g.store.tensors[proj["w"]]
            x = cache["proj_in"][i]
            if proj["kind"] == "conv":
                gx = conv_backward_input(g_out, w, proj["spec"], x.shape[2:])
                gw, gb = conv_backward_params(g_out, x, proj["spec"])
            else:
                gf = g_out.reshape(g_out.shape[0], -1)
                gx, gw, gb = fc_backward(gf, w, x, batched=True)
            _acc(g, proj["w"], gw)
            _acc(g, proj["b"], gb)
            gains.append(gx)
        else:
            gains.append(g_out)
    return gains


def _unpack_gains(unit, gains, parts):
    if not unit.params.get("packed"):
        return gains
    b = gains[0].shape[0]
    flat = [gi.reshape(b, -1) for gi in gains]
    return [np.concatenate(flat, axis=1)]


def _math_backward(g, unit, g_out, cache):
    fn = unit.recipe.params["fn"]
    parts = unit.bound.get("parts")
    if fn == "exp":
        gains = [g_out * cache["y"]]
    elif fn == "ln":
        gains = [g_out / cache["x"]]
    elif fn == "negln":
        gains = [-g_out / cache["x"]]
    elif fn in ("add", "sub", "mul", "div"):
        a, b = cache["a"], cache["b"]
        scalar_b = b.shape != a.shape
        bb = b if not scalar_b else b.reshape(b.shape[0], *([1] * (a.ndim - 1)))
        if fn == "add":
            ga, gb = g_out, g_out
        elif fn == "sub":
            ga, gb = g_out, -g_out
        elif fn == "mul":
            ga, gb = g_out * bb, g_out * a
        else:
            ga, gb = g_out / bb, -g_out * a / (bb * bb)
        if scalar_b:
            gb = gb.reshape(b.shape[0], -1).sum(axis=1).reshape(b.shape)
        gains = [ga, gb]
    elif fn == "sqnorm":
        gains = [2.0 * cache["x"] * g_out.reshape(
            g_out.shape[0], *([1] * (cache["x"].ndim - 1)))]
    elif fn == "sqdist":
        a, b = cache["a"], cache["b"]
        gg = g_out.reshape(g_out.shape[0], *([1] * (a.ndim - 1)))
        gains = [2.0 * (a - b) * gg, -2.0 * (a - b) * gg]
    elif fn == "sumall":
        shape = cache["shape"]
        gains = [np.broadcast_to(
            g_out.reshape(g_out.shape[0], *([1] * (len(shape) - 1))),
            shape).copy()]
    elif fn == "maxall":
        shape = cache["shape"]
        flat = np.zeros((shape[0], math.prod(shape[1:])))
        flat[np.arange(shape[0]), cache["am"]] = g_out[:, 0]
        gains = [flat.reshape(shape)]
    elif fn == "submax":
        shape = cache["shape"]
        gf = g_out.reshape(shape[0], -1).copy()
        gf[np.arange(shape[0]), cache["am"]] = 0.0
        gains = [gf.reshape(shape)]
    elif fn == "pick":
        shape = cache["shape"]
        flat = np.zeros((shape[0], math.prod(shape[1:])))
        flat[np.arange(shape[0]), cache["ii"]] = g_out[:, 0]
        gains = [flat.reshape(shape), np.zeros((shape[0], 1))]
    elif fn == "l2norm":
        y, n = cache["y"], cache["n"]
        shape = cache["shape"]
        gf = g_out.reshape(shape[0], -1)
        dot = np.sum(y * gf, axis=1, keepdims=True)
        gains = [((gf - y * dot) / n).reshape(shape)]
    elif fn == "reshape":
        gains = [g_out.reshape(cache["shape"])]
    else:
        raise ValueError(f"no backward rule for algebraic form {fn!r}")
    return _unpack_gains(unit, gains, parts)
