"""Bipartite network of processing units and data buffers.

Construction from lowered components, label resolution, normalization to
single-input/single-output computing units, topological scheduling, shape
inference with hyper-parameter binding, and forward execution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from .dsl.ast import AstBound, Diagnostic, DslError
from .dsl.decor import DecorItem
from .dsl.lower import Item, LoweredComponent, LoweredNet, Recipe
from .nn import ConvSpec, InterpSpec, PoolSpec, conv_out_shape, interp_out_shape, \
    param_count, pool_out_shape
from .tensor import TensorError

__all__ = ["NetGraph", "UnitNode", "BufferNode", "ParameterStore", "GraphError",
           "build", "normalize", "topo_order", "infer_shapes", "forward",
           "complexity_report"]

SPATIAL_AXES = ("z", "y", "x", "t")


class GraphError(Exception):
    pass


@dataclass
class _Ref:
    """Unresolved request for a labeled buffer."""

    label: str
    many: bool = False          # adder contributions may have several producers
    span: Any = None


@dataclass
class UnitNode:
    uid: int
    kind: str
    recipe: Optional[Recipe] = None
    share: Optional[str] = None
    params: dict = field(default_factory=dict)   # structural parameters
    in_bufs: list = field(default_factory=list)
    out_bufs: list = field(default_factory=list)
    bound: dict = field(default_factory=dict)    # bind products (specs, names)
    span: Any = None

    @property
    def name(self) -> str:
        return f"{self.kind}@{self.uid}"


@dataclass
class BufferNode:
    bid: int
    labels: list = field(default_factory=list)
    ref_labels: list = field(default_factory=list)
    producer: Optional[int] = None
    consumers: list = field(default_factory=list)
    shape: Optional[tuple] = None                # (features, *signal), unbatched
    signature: Optional[tuple] = None


class ParameterStore:
    """Named parameter tensors with share-label dedup and gradient slots."""

    def __init__(self):
        self.tensors: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.owners: dict[str, list[int]] = {}

    def register(self, name: str, shape: tuple, uid: int, init) -> None:
        if name in self.tensors:
            if self.tensors[name].shape != tuple(shape):
                raise GraphError(
                    f"share label {name!r} binds shape {self.tensors[name].shape} "
                    f"and {tuple(shape)}")
        else:
            self.tensors[name] = init(shape)
        self.owners.setdefault(name, []).append(uid)

    def zero_grads(self) -> None:
        self.grads = {name: np.zeros_like(t) for name, t in self.tensors.items()}

    def total_count(self) -> int:
        return sum(t.size for t in self.tensors.values())


class NetGraph:
    def __init__(self):
        self.units: dict[int, UnitNode] = {}
        self.buffers: dict[int, BufferNode] = {}
        self.inputs: dict[str, int] = {}
        self.input_meta: dict[str, tuple] = {}   # label -> (axes, channels, env)
        self.label_producers: dict[str, list[int]] = {}
        self.aliases: dict[str, _Ref] = {}
        self.diagnostics: list[Diagnostic] = []
        self.store = ParameterStore()
        self.bounds: list[AstBound] = []
        self.bound_scalars: dict[str, int] = {}
        self._uid = 0
        self._bid = 0
        self._order: Optional[list[int]] = None

    # -- construction helpers --------------------------------------------

    def fail(self, message: str, span=None, production: str = "") -> None:
        self.diagnostics.append(Diagnostic(
            "error", message, getattr(span, "line", 0), getattr(span, "col", 0),
            production))

    def ok(self) -> bool:
        return not any(d.severity == "error" for d in self.diagnostics)

    def new_unit(self, kind: str, recipe=None, span=None, **params) -> UnitNode:
        self._uid += 1
        unit = UnitNode(uid=self._uid, kind=kind, recipe=recipe, span=span,
                        share=getattr(recipe, "share", None), params=params)
        self.units[unit.uid] = unit
        return unit

    def new_buffer(self, producer: Optional[int]) -> BufferNode:
        self._bid += 1
        buf = BufferNode(bid=self._bid, producer=producer)
        self.buffers[buf.bid] = buf
        return buf

    def attach_label(self, label: str, target, span=None, ref=False) -> None:
        if isinstance(target, _Ref):
            if label in self.aliases:
                self.fail(f"label {label!r} aliased twice", span, "Label")
            self.aliases[label] = target
            return
        self.label_producers.setdefault(label, []).append(target)
        buf = self.buffers[target]
        (buf.ref_labels if ref else buf.labels).append(label)

    def resolve_label(self, label: str, many: bool, span=None):
        seen = set()
        while label in self.aliases:
            if label in seen:
                self.fail(f"label alias cycle at {label!r}", span, "Label")
                return []
            seen.add(label)
            label = self.aliases[label].label
        bids = self.label_producers.get(label, [])
        if not bids:
            self.fail(f"unresolved label {label!r}", span, "FromLabel")
            return []
        if not many and len(bids) > 1:
            self.fail(f"label {label!r} has {len(bids)} producers", span,
                      "FromLabel")
            return bids[:1]
        return bids

    def labeled_outputs(self) -> dict[str, int]:
        out = {}
        for buf in self.buffers.values():
            for label in list(buf.labels) + list(buf.ref_labels):
                out[label] = buf.bid
        return out

    def computing_units(self) -> list[UnitNode]:
        return [u for u in self.units.values() if u.kind != "input"]


def build(lowered: LoweredNet) -> NetGraph:
    """Instantiate units and buffers; resolve labels; check acyclicity."""
    g = NetGraph()
    g.diagnostics.extend(lowered.diagnostics)
    g.bounds = list(lowered.bounds)

    for comp in lowered.components:
        cur: Any = None
        if comp.begin is None:
            g.fail("component without a beginning", comp.span, "BeginComponent")
            continue
        tag = comp.begin[0]
        if tag == "input":
            _, label, axes, channels, env = comp.begin
            if label in g.inputs:
                cur = g.units[g.inputs[label]].out_bufs[0]
            else:
                unit = g.new_unit("input", span=comp.span, label=label)
                buf = g.new_buffer(unit.uid)
                unit.out_bufs.append(buf.bid)
                g.attach_label(label, buf.bid, comp.span)
                g.inputs[label] = unit.uid
                g.input_meta[label] = (axes, channels, env)
                cur = buf.bid
        elif tag == "from":
            labels = comp.begin[1]
            refs = tuple(_Ref(l, span=comp.span) for l in labels)
            cur = refs if len(refs) > 1 else refs[0]
        elif tag == "merge":
            _, labels, axis = comp.begin
            unit = g.new_unit("merge", span=comp.span, axis=axis)
            unit.in_bufs.extend(_Ref(l, span=comp.span) for l in labels)
            buf = g.new_buffer(unit.uid)
            unit.out_bufs.append(buf.bid)
            cur = buf.bid

        for item in comp.items:
            if item.op == "unit":
                unit = g.new_unit(item.recipe.kind, recipe=item.recipe,
                                  span=item.span)
                if cur is None:
                    g.fail(f"unit {unit.kind} has no input", item.span,
                           "ComponentElement")
                elif isinstance(cur, tuple):
                    unit.in_bufs.extend(cur)
                else:
                    unit.in_bufs.append(cur)
                buf = g.new_buffer(unit.uid)
                unit.out_bufs.append(buf.bid)
                cur = buf.bid
            elif item.op == "tap":
                if cur is None:
                    g.fail(f"nothing to label {item.labels[0]!r}", item.span,
                           "Label")
                else:
                    g.attach_label(item.labels[0],
                                   cur if not isinstance(cur, tuple) else cur[0],
                                   item.span, ref=item.ref)
            elif item.op == "adder":
                unit = g.new_unit("adder", span=item.span,
                                  project=item.project)
                if cur is None:
                    g.fail("adder has no chain input", item.span, "CastAdder")
                    continue
                unit.in_bufs.append(cur)
                for label in item.labels:
                    unit.in_bufs.append(_Ref(label, many=True, span=item.span))
                buf = g.new_buffer(unit.uid)
                unit.out_bufs.append(buf.bid)
                cur = buf.bid
            elif item.op == "resume":
                cur = _Ref(item.labels[0], span=item.span)

        if comp.end is None:
            continue
        tag = comp.end[0]
        if tag in ("to", "to_add"):
            label = comp.end[1]
            if cur is None:
                g.fail(f"nothing to label {label!r}", comp.span, "EndComponent")
            else:
                g.attach_label(label, cur if not isinstance(cur, tuple) else cur[0],
                               comp.span)
        elif tag == "split":
            _, axis, labels = comp.end
            unit = g.new_unit("split", span=comp.span, axis=axis, names=labels)
            if cur is None:
                g.fail("split has no input", comp.span, "UnitSplit")
                continue
            unit.in_bufs.append(cur)
            for label in labels:
                buf = g.new_buffer(unit.uid)
                unit.out_bufs.append(buf.bid)
                g.attach_label(label.split(":")[0], buf.bid, comp.span)

    # resolve label references into buffer ids
    for unit in g.units.values():
        resolved = []
        for slot in unit.in_bufs:
            if isinstance(slot, _Ref):
                bids = g.resolve_label(slot.label, slot.many, slot.span)
                resolved.extend(bids)
            else:
                resolved.append(slot)
        unit.in_bufs = resolved
        for bid in resolved:
            if bid in g.buffers:
                g.buffers[bid].consumers.append(unit.uid)
    # adders need at least two contributions in total
    for unit in g.units.values():
        if unit.kind == "adder" and len(unit.in_bufs) < 2:
            g.fail("adder resolves to fewer than two contributors", unit.span,
                   "CastAdder")

    try:
        topo_order(g)
    except GraphError as e:
        g.fail(str(e), None, "topological order")
    return g


def normalize(g: NetGraph) -> NetGraph:
    """Give every computing unit a single input by packing multi-inputs."""
    for unit in list(g.units.values()):
        if unit.kind in ("input", "merge", "split", "adder"):
            continue
        if len(unit.in_bufs) <= 1:
            continue
        pack = g.new_unit("merge", span=unit.span, axis="pack")
        pack.in_bufs = list(unit.in_bufs)
        buf = g.new_buffer(pack.uid)
        pack.out_bufs.append(buf.bid)
        for bid in unit.in_bufs:
            g.buffers[bid].consumers.remove(unit.uid)
            g.buffers[bid].consumers.append(pack.uid)
        buf.consumers.append(unit.uid)
        unit.in_bufs = [buf.bid]
        unit.params["packed"] = True
    g._order = None
    return g


def topo_order(g: NetGraph) -> list[int]:
    """Unit schedule: inputs first, every unit after all its producers."""
    if g._order is not None:
        return g._order
    indeg = {}
    for unit in g.units.values():
        deps = {g.buffers[b].producer for b in unit.in_bufs
                if isinstance(b, int) and b in g.buffers
                and g.buffers[b].producer is not None}
        indeg[unit.uid] = deps
    order = []
    ready = sorted(uid for uid, deps in indeg.items() if not deps)
    remaining = {uid: set(deps) for uid, deps in indeg.items() if deps}
    produced = set(ready)
    while ready:
        uid = ready.pop(0)
        order.append(uid)
        newly = []
        for vid, deps in list(remaining.items()):
            deps.discard(uid)
            if not deps:
                newly.append(vid)
                del remaining[vid]
        ready.extend(sorted(newly))
    if remaining:
        stuck = []
        for uid in remaining:
            for bid in g.units[uid].out_bufs:
                stuck.extend(g.buffers[bid].labels)
        raise GraphError(
            "data requests form a cycle through labels: "
            + (", ".join(sorted(set(stuck))) or f"{len(remaining)} units"))
    g._order = order
    return order


# -- binding ------------------------------------------------------------------

def _axis_positions(signature: tuple, axis: Optional[str], span, g) -> list[int]:
    signal = signature[1:]
    if axis is None:
        return list(range(len(signal)))
    if axis in signal:
        return [signal.index(axis)]
    g.fail(f"axis {axis!r} not in signal domain {signal}", span, "Unit")
    return []


def _resolve_items(items: list[DecorItem], scope: dict, args: list,
                   signature: tuple, g, span) -> dict[str, list]:
    d = len(signature) - 1
    roles: dict[str, list] = {}

    def bucket(role):
        if role not in roles:
            roles[role] = [None] * d
        return roles[role]

    for item in items:
        if item.value[0] == "int":
            val = item.value[1]
        else:
            name = item.value[1]
            if name in scope:
                val = scope[name]
            elif name.split("^")[0] in scope:
                val = scope[name.split("^")[0]]
            else:
                g.fail(f"unbound parameter {name!r}", span, "Unit")
                continue
        if item.index is not None:
            if not isinstance(val, list):
                g.fail(f"cannot index the scalar value of {item.value[1]!r}",
                       span, "Unit")
                continue
            if not 0 <= item.index < len(val):
                g.fail(f"index {item.index} out of range for {val}", span, "Unit")
                continue
            val = val[item.index]
        slot = bucket(item.role)
        positions = _axis_positions(signature, item.axis, span, g)
        if isinstance(val, list):
            if item.axis is None and len(val) == d:
                for i, v in enumerate(val):
                    slot[i] = int(v)
            else:
                g.fail(f"list value {val} needs an index", span, "Unit")
        else:
            for i in positions:
                slot[i] = int(val)
    return roles


def _role_tuple(roles: dict, role: str, default: int, d: int) -> tuple[int, ...]:
    vals = roles.get(role)
    if vals is None:
        return (default,) * d
    return tuple(default if v is None else v for v in vals)


def _scalar(expr, scope, args, g, span, what: str):
    if expr is None:
        return None
    try:
        return expr.eval_scalar(scope, args)
    except DslError as e:
        g.fail(f"{what}: {e}", span, "Expression")
        return None


_MATH_SCALAR_OUT = {"sqnorm", "sqdist", "sumall", "maxall", "pick"}


def _bind_unit(g: NetGraph, unit: UnitNode, rng: np.random.Generator) -> None:
    in_shapes = [g.buffers[b].shape for b in unit.in_bufs]
    in_sigs = [g.buffers[b].signature for b in unit.in_bufs]
    if any(s is None for s in in_shapes):
        g.fail(f"{unit.name}: input shape unknown", unit.span, "infer_shapes")
        return
    out_shape, out_sig = None, None
    recipe = unit.recipe
    scope: dict = {}
    args: list = []
    if recipe is not None:
        shape_vars = {}
        if in_shapes and in_sigs[0]:
            for ax, n in zip(in_sigs[0][1:], in_shapes[0][1:]):
                shape_vars[f"n_{ax}"] = n
            shape_vars["n_a"] = in_shapes[0][0]
        shape_vars.update(g.bound_scalars)
        try:
            scope = recipe.env.resolved(shape_vars)
        except DslError as e:
            g.fail(f"{unit.name}: {e}", unit.span, "Expression")
            return
        args = recipe.env.args

    def uniform(fan_in):
        bound = 1.0 / math.sqrt(max(1, fan_in))
        return lambda shape: rng.uniform(-bound, bound, size=shape)

    pname = unit.share or f"u{unit.uid}"
    kind = unit.kind
    shape, sig = (in_shapes[0], in_sigs[0]) if in_shapes else (None, None)

    try:
        if kind == "input":
            return
        if kind == "conv":
            d = len(shape) - 1
            roles = _resolve_items(recipe.params["items"], scope, args,
                                   sig, g, unit.span)
            kernel = _role_tuple(roles, "k", 3, d)
            rate = _role_tuple(roles, "sigma", 1, d)
            dil = _role_tuple(roles, "delta", 1, d)
            feats = _scalar(recipe.params["features"], scope, args, g,
                            unit.span, unit.name)
            if feats is None:
                feats = shape[0]
            spec = ConvSpec(out_features=feats, kernel=kernel, rate=rate,
                            dilation=dil, transposed=recipe.params["transposed"],
                            padding=recipe.params["padding"],
                            causal=recipe.params["causal"])
            out_signal = conv_out_shape(shape[1:], spec)
            out_shape, out_sig = (feats,) + out_signal, sig
            unit.bound = {"spec": spec, "w": f"{pname}.w", "b": f"{pname}.b",
                          "in_features": shape[0]}
            fan = shape[0] * math.prod(kernel)
            g.store.register(unit.bound["w"], (feats, shape[0]) + kernel,
                             unit.uid, uniform(fan))
            g.store.register(unit.bound["b"], (feats,), unit.uid, uniform(fan))
        elif kind == "fc":
            n_in = math.prod(shape)
            n_out = _scalar(recipe.params["features"], scope, args, g,
                            unit.span, unit.name)
            if n_out is None:
                g.fail(f"{unit.name}: full connection needs a feature count",
                       unit.span, "Unit")
                return
            out_shape, out_sig = (n_out,), ("a",)
            unit.bound = {"w": f"{pname}.w", "b": f"{pname}.b", "n_in": n_in,
                          "n_out": n_out}
            g.store.register(unit.bound["w"], (n_out, n_in), unit.uid,
                             uniform(n_in))
            g.store.register(unit.bound["b"], (n_out,), unit.uid, uniform(n_in))
        elif kind == "sliced_fc":
            axis = recipe.params["slice_axis"]
            positions = _axis_positions(sig, axis, unit.span, g)
            if not positions:
                return
            pos = positions[0]
            p_len = shape[1 + pos]
            q_len = (math.prod(shape) // p_len) // shape[0]
            n_out = _scalar(recipe.params["features"], scope, args, g,
                            unit.span, unit.name)
            if n_out is None:
                g.fail(f"{unit.name}: sliced full connection needs features",
                       unit.span, "Unit")
                return
            out_shape, out_sig = (n_out, p_len), ("a", axis)
            unit.bound = {"a": f"{pname}.a", "slice_pos": pos,
                          "n_in": shape[0], "n_out": n_out, "p": p_len,
                          "q": q_len}
            g.store.register(unit.bound["a"], (n_out, shape[0], p_len, q_len),
                             unit.uid, uniform(shape[0] * q_len))
        elif kind == "pool":
            d = len(shape) - 1
            scope_kind = recipe.params.get("scope")
            if scope_kind:
                pooled = (tuple(range(d)) if scope_kind == "g" else tuple(
                    i for i, ax in enumerate(sig[1:]) if ax in scope_kind))
                spec = PoolSpec(mode=recipe.params["mode"], pooled_axes=pooled,
                                squeeze=True, padded=recipe.params["padded"])
            else:
                roles = _resolve_items(recipe.params["items"], scope, args,
                                       sig, g, unit.span)
                window = _role_tuple(roles, "k", 2, d)
                stride = roles.get("sigma")
                stride = window if stride is None else tuple(
                    window[i] if v is None else v for i, v in enumerate(stride))
                spec = PoolSpec(mode=recipe.params["mode"], window=window,
                                stride=stride, padded=recipe.params["padded"])
            out_signal = pool_out_shape(shape[1:], spec)
            kept = [ax for ax, n_out_ax in zip(
                sig[1:], _unsqueezed_pool_signal(shape[1:], spec))
                if not (spec.squeeze and n_out_ax == 1 and _pool_window_at(
                    shape[1:], spec, sig[1:].index(ax)) > 1)]
            out_sig = ("a",) + tuple(kept) if spec.squeeze else sig
            out_shape = (shape[0],) + out_signal
            unit.bound = {"spec": spec, "signal_rank": d}
        elif kind == "interp":
            percent = _scalar(recipe.params["percent"], scope, args, g,
                              unit.span, unit.name)
            spec = InterpSpec(percent=float(percent),
                              kernel=recipe.params["kernel"],
                              radius=recipe.params["radius"])
            out_shape = (shape[0],) + interp_out_shape(shape[1:], spec)
            out_sig = sig
            unit.bound = {"spec": spec, "signal_rank": len(shape) - 1}
        elif kind == "batchnorm":
            out_shape, out_sig = shape, sig
            unit.bound = {"beta": f"{pname}.beta", "gamma": f"{pname}.gamma",
                          "n_a": shape[0], "state": None}
            g.store.register(unit.bound["beta"], (shape[0],), unit.uid,
                             lambda s: np.zeros(s))
            g.store.register(unit.bound["gamma"], (shape[0],), unit.uid,
                             lambda s: np.ones(s))
        elif kind in ("instancenorm", "activation", "identity"):
            out_shape, out_sig = shape, sig
        elif kind == "math":
            out_shape, out_sig = _bind_math(g, unit, in_shapes, in_sigs)
            if out_shape is None:
                return
        elif kind == "merge":
            out_shape, out_sig = _bind_merge(g, unit, in_shapes, in_sigs)
            if out_shape is None:
                return
        elif kind == "split":
            _bind_split(g, unit, shape, sig)
            return
        elif kind == "adder":
            out_shape, out_sig = _bind_adder(g, unit, in_shapes, in_sigs, rng)
            if out_shape is None:
                return
        else:
            g.fail(f"{unit.name}: no binding rule", unit.span, "infer_shapes")
            return
    except (TensorError, GraphError) as e:
        g.fail(f"{unit.name}: {e}", unit.span, "infer_shapes")
        return
    buf = g.buffers[unit.out_bufs[0]]
    buf.shape, buf.signature = tuple(out_shape), tuple(out_sig)


def _unsqueezed_pool_signal(signal, spec: PoolSpec):
    k, s, pads = spec.bind(signal)
    return tuple(-(-(n + l + r - kn + 1) // st)
                 for n, kn, st, (l, r) in zip(signal, k, s, pads))


def _pool_window_at(signal, spec: PoolSpec, i: int) -> int:
    k, _, _ = spec.bind(signal)
    return k[i]


def _bind_math(g, unit, in_shapes, in_sigs):
    fn = unit.recipe.params["fn"]
    arity = unit.recipe.params["arity"]
    if unit.params.get("packed"):
        parts = unit.bound.get("parts")
        if parts is None:
            g.fail(f"{unit.name}: packed input without part shapes", unit.span,
                   "infer_shapes")
            return None, None
        in_shapes = parts
    if len(in_shapes) != arity:
        g.fail(f"{unit.name}: form {fn!r} needs {arity} inputs, got "
               f"{len(in_shapes)}", unit.span, "Math")
        return None, None
    lead = in_shapes[0]
    if fn in _MATH_SCALAR_OUT:
        return (1,), ("a",)
    if fn == "reshape":
        target = unit.recipe.params["payload"]
        if math.prod(lead) != math.prod(target):
            g.fail(f"{unit.name}: cannot view {lead} as {target}", unit.span,
                   "Math")
            return None, None
        return tuple(target), ("a",) + ("x",) * (len(target) - 1)
    if fn in ("add", "sub", "mul", "div"):
        a, b = in_shapes
        if a != b and math.prod(a) != 1 and math.prod(b) != 1:
            g.fail(f"{unit.name}: shapes {a} and {b} incompatible", unit.span,
                   "Math")
            return None, None
        return (a if math.prod(a) >= math.prod(b) else b), \
            (in_sigs[0] if math.prod(a) >= math.prod(b) else in_sigs[1])
    return lead, in_sigs[0]


def _bind_merge(g, unit, in_shapes, in_sigs):
    axis = unit.params["axis"]
    if axis in ("*", "pack"):
        unit.bound["parts"] = [tuple(s) for s in in_shapes]
        total = sum(math.prod(s) for s in in_shapes)
        if axis == "pack":
            # feeding unit unpacks; remember parts and pass them through
            consumer = g.units[g.buffers[unit.out_bufs[0]].consumers[0]] \
                if g.buffers[unit.out_bufs[0]].consumers else None
            if consumer is not None:
                consumer.bound["parts"] = unit.bound["parts"]
        return (total,), ("a",)
    base_sig = in_sigs[0]
    if axis not in base_sig:
        g.fail(f"{unit.name}: merge axis {axis!r} not in signature {base_sig}",
               unit.span, "MergeUnit")
        return None, None
    pos = base_sig.index(axis)
    total = 0
    rest = None
    for s, sg in zip(in_shapes, in_sigs):
        if sg != base_sig:
            g.fail(f"{unit.name}: signatures differ: {sg} vs {base_sig}",
                   unit.span, "MergeUnit")
            return None, None
        other = tuple(v for i, v in enumerate(s) if i != pos)
        if rest is None:
            rest = other
        elif other != rest:
            g.fail(f"{unit.name}: non-stacked axes differ: {other} vs {rest}",
                   unit.span, "MergeUnit")
            return None, None
        total += s[pos]
    out = list(in_shapes[0])
    out[pos] = total
    unit.bound["axis_pos"] = pos
    unit.bound["parts"] = [s[pos] for s in in_shapes]
    return tuple(out), base_sig


def _bind_split(g, unit, shape, sig):
    axis = unit.params["axis"]
    names = unit.params["names"]
    if axis not in sig:
        g.fail(f"{unit.name}: split axis {axis!r} not in signature {sig}",
               unit.span, "UnitSplit")
        return
    pos = sig.index(axis)
    widths = []
    annotated = [n.split(":") for n in names]
    if all(len(a) == 2 for a in annotated):
        widths = [int(a[1]) for a in annotated]
        if sum(widths) != shape[pos]:
            g.fail(f"{unit.name}: split widths {widths} do not cover axis of "
                   f"size {shape[pos]}", unit.span, "UnitSplit")
            return
    elif len(names) == shape[pos]:
        widths = [1] * len(names)
    else:
        g.fail(f"{unit.name}: cannot deduce split widths for {len(names)} "
               f"labels over an axis of size {shape[pos]}", unit.span,
               "UnitSplit")
        return
    unit.bound = {"axis_pos": pos, "widths": widths}
    for bid, width in zip(unit.out_bufs, widths):
        out = list(shape)
        out[pos] = width
        g.buffers[bid].shape = tuple(out)
        g.buffers[bid].signature = sig


def _bind_adder(g, unit, in_shapes, in_sigs, rng):
    target = in_shapes[0]
    projections = {}
    for i, s in enumerate(in_shapes[1:], start=1):
        if tuple(s) == tuple(target):
            continue
        if not unit.params.get("project"):
            g.fail(f"{unit.name}: branch shapes {tuple(s)} and {tuple(target)} "
                   "differ and no '!' projection is requested", unit.span,
                   "CastAdder")
            return None, None
        proj = _make_projection(g, unit, i, s, target, rng)
        if proj is None:
            return None, None
        projections[i] = proj
    unit.bound["projections"] = projections
    return tuple(target), in_sigs[0]


def _make_projection(g, unit, slot, src, dst, rng):
    """Learned linear map conforming a shortcut branch to the adder shape."""
    name = f"u{unit.uid}.p{slot}"
    if len(src) == len(dst) and len(src) > 1:
        rates = []
        ok = True
        for n_in, n_out in zip(src[1:], dst[1:]):
            if n_out == 1:
                rates.append(n_in)
                continue
            k = (n_in - 1) // (n_out - 1) if n_out > 1 else n_in
            k = max(1, k)
            if 1 + (n_in - 1) // k != n_out:
                ok = False
                break
            rates.append(k)
        if ok:
            spec = ConvSpec(out_features=dst[0], kernel=(1,) * (len(src) - 1),
                            rate=tuple(rates))
            if conv_out_shape(src[1:], spec) == tuple(dst[1:]):
                fan = src[0]
                g.store.register(f"{name}.w",
                                 (dst[0], src[0]) + (1,) * (len(src) - 1),
                                 unit.uid, lambda s: rng.uniform(
                                     -1 / math.sqrt(fan), 1 / math.sqrt(fan), s))
                g.store.register(f"{name}.b", (dst[0],), unit.uid,
                                 lambda s: np.zeros(s))
                return {"kind": "conv", "spec": spec, "w": f"{name}.w",
                        "b": f"{name}.b", "src": tuple(src)}
    n_in, n_out = math.prod(src), math.prod(dst)
    fan = n_in
    g.store.register(f"{name}.w", (n_out, n_in), unit.uid,
                     lambda s: rng.uniform(-1 / math.sqrt(fan),
                                           1 / math.sqrt(fan), s))
    g.store.register(f"{name}.b", (n_out,), unit.uid, lambda s: np.zeros(s))
    return {"kind": "fc", "w": f"{name}.w", "b": f"{name}.b",
            "src": tuple(src), "dst": tuple(dst)}


def infer_shapes(g: NetGraph, bound: AstBound | None = None,
                 seed: int = 0) -> NetGraph:
    """Assign every buffer's shape and signature; bind unit hyper-parameters."""
    rng = np.random.default_rng(seed)
    g.bound_scalars = dict(bound.scalars) if bound else {}
    for label, uid in g.inputs.items():
        axes, channels, env = g.input_meta[label]
        sizes = dict(bound.inputs.get(label, {})) if bound else {}
        if bound is not None and label not in bound.inputs:
            g.fail(f"input {label!r} is not bound", g.units[uid].span,
                   "infer_shapes")
            continue
        signal_axes = tuple(ax for ax in axes if ax in SPATIAL_AXES) or \
            tuple(ax for ax in sizes if ax != "a")
        chan = sizes.get("a")
        if chan is None and channels is not None:
            try:
                chan = channels.eval_scalar(g.bound_scalars, [])
            except DslError as e:
                g.fail(f"input {label!r}: {e}", g.units[uid].span, "Expression")
                continue
        chan = 1 if chan is None else chan
        shape = [chan]
        sig = ["a"]
        for ax in signal_axes:
            if ax not in sizes:
                g.fail(f"input {label!r}: axis {ax!r} has no bound size",
                       g.units[uid].span, "infer_shapes")
                break
            shape.append(sizes[ax])
            sig.append(ax)
        else:
            buf = g.buffers[g.units[uid].out_bufs[0]]
            buf.shape, buf.signature = tuple(shape), tuple(sig)
    for uid in topo_order(g):
        unit = g.units[uid]
        if unit.kind != "input":
            _bind_unit(g, unit, rng)
    return g


def complexity_report(g: NetGraph) -> list[dict]:
    """Per-unit output shapes, parameter counts, and multiply-accumulate counts."""
    rows = []
    for uid in topo_order(g):
        unit = g.units[uid]
        if unit.kind == "input":
            continue
        out = g.buffers[unit.out_bufs[0]].shape if unit.out_bufs else None
        in_shape = g.buffers[unit.in_bufs[0]].shape if unit.in_bufs else None
        params = 0
        macs = 0
        if unit.kind == "conv" and unit.bound:
            spec = unit.bound["spec"]
            params = param_count("conv", spec=spec,
                                 in_features=unit.bound["in_features"])
            if out:
                macs = math.prod(out) * unit.bound["in_features"] * \
                    math.prod(spec.kernel)
        elif unit.kind == "fc" and unit.bound:
            params = param_count("fc", n_in=unit.bound["n_in"],
                                 n_out=unit.bound["n_out"])
            macs = unit.bound["n_in"] * unit.bound["n_out"]
        elif unit.kind == "sliced_fc" and unit.bound:
            params = param_count("sliced_fc", n_in=unit.bound["n_in"],
                                 n_out=unit.bound["n_out"], p=unit.bound["p"],
                                 q=unit.bound["q"])
            macs = params
        elif unit.kind == "batchnorm" and unit.bound:
            params = param_count("batchnorm", n_a=unit.bound["n_a"])
        elif unit.kind == "adder" and unit.bound.get("projections"):
            for proj in unit.bound["projections"].values():
                params += g.store.tensors[proj["w"]].size
                params += g.store.tensors[proj["b"]].size
        rows.append({"unit": unit.name, "kind": unit.kind,
                     "in_shape": in_shape, "out_shape": out,
                     "params": params, "macs": macs})
    return rows


def forward(g: NetGraph, inputs: dict[str, np.ndarray], mode: str = "train",
            check_finite: bool = False):
    """Run the network; returns (labeled outputs, execution tape).

    Input arrays carry a leading batch axis.  The tape holds per-unit caches
    for the backward pass plus the discrete decisions (pool argmaxes, kink
    proximities) needed to recognize non-smooth coordinates.
    """
    from .runtime import run_unit   # local import to avoid a cycle

    values: dict[int, np.ndarray] = {}
    tape: dict[int, Any] = {"_kinks": []}
    for label, uid in g.inputs.items():
        if label not in inputs:
            raise GraphError(f"input {label!r} not supplied")
        arr = np.asarray(inputs[label], dtype=np.float64)
        buf = g.buffers[g.units[uid].out_bufs[0]]
        if buf.shape is not None and tuple(arr.shape[1:]) != buf.shape:
            raise GraphError(
                f"input {label!r}: got {tuple(arr.shape[1:])}, bound "
                f"{buf.shape}")
        values[buf.bid] = arr
    for uid in topo_order(g):
        unit = g.units[uid]
        if unit.kind == "input":
            continue
        xs = [values[b] for b in unit.in_bufs]
        ys, cache = run_unit(g, unit, xs, mode, tape)
        for bid, y in zip(unit.out_bufs, ys):
            values[bid] = y
            if check_finite and not np.all(np.isfinite(y)):
                raise GraphError(f"{unit.name}: non-finite values")
        tape[uid] = cache
    outputs = {}
    for buf in g.buffers.values():
        for label in list(buf.labels) + list(buf.ref_labels):
            if buf.bid in values:
                outputs[label] = values[buf.bid]
    tape["_values"] = values
    return outputs, tape
