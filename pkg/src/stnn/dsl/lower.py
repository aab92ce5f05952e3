"""Lowering: syntax tree -> flat component list of unit recipes.

User-defined units are expanded here (each use splices a fresh copy of the
body, internal labels uniquified; parameter sharing only ever comes from
explicit share labels).  Residual blocks and cast adders become label
plumbing around adder items.  Hyper-parameter expressions stay symbolic in
the recipes; they are resolved at bind time when input shapes are known.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Optional

from .ast import (
    AstBound,
    AstComponent,
    AstInput,
    AstLink,
    AstMath,
    AstMerge,
    AstNet,
    AstResidual,
    AstSplit,
    AstUnit,
    AstUnitUse,
    Diagnostic,
    DslError,
)
from .exprs import Expr, ExprEnv

__all__ = ["lower", "Recipe", "Item", "LoweredComponent", "LoweredNet",
           "match_math_form", "MATH_FORMS"]


@dataclass
class Recipe:
    kind: str                    # conv | fc | sliced_fc | pool | interp | ...
    params: dict = field(default_factory=dict)
    env: ExprEnv = field(default_factory=ExprEnv)
    share: Optional[str] = None
    span: Any = None


@dataclass
class Item:
    op: str                      # unit | tap | adder | resume
    recipe: Optional[Recipe] = None
    labels: tuple = ()
    ref: bool = False
    project: bool = False
    span: Any = None


@dataclass
class LoweredComponent:
    begin: Any                   # ("input", label, axes, channels_expr, env)
    items: list                  # | ("from", labels) | ("merge", labels, axis)
    end: Any                     # ("to", label) | ("to_add", label)
    span: Any = None             # | ("split", axis, labels) | None


@dataclass
class LoweredNet:
    components: list = field(default_factory=list)
    bounds: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)


# -- algebraic form whitelist -------------------------------------------------

MATH_FORMS = {
    "e^x": ("exp", 1),
    "lnx": ("ln", 1),
    "-lnx": ("negln", 1),
    "logx": ("ln", 1),
    "x+y": ("add", 2),
    "x-y": ("sub", 2),
    "x*y": ("mul", 2),
    "x/y": ("div", 2),
    "Nx|^2": ("sqnorm", 1),
    "Nx-y|^2": ("sqdist", 2),
    "1Tx": ("sumall", 1),
    "max(x)": ("maxall", 1),
    "x-max(x)": ("submax", 1),
    "x_y": ("pick", 2),
    "x[y]": ("pick", 2),
    "x/Nx|": ("l2norm", 1),
}

_MATH_REWRITES = [
    (re.compile(r"\\tp\s*\{\s*(?:\\bm\s*\{\s*1\s*\}|1)\s*\}(?:\s*_\s*\{?\d+\}?)?"), "1T"),
    (re.compile(r"\\bm\s*\{\s*1\s*\}"), "1"),
    (re.compile(r"\\max"), "max"),
    (re.compile(r"\\ln"), "ln"),
    (re.compile(r"\\log"), "log"),
    (re.compile(r"\\cdot"), "*"),
    (re.compile(r"\\\|"), "N"),          # opening norm bar; closing stays '|'
    (re.compile(r"\\[a-zA-Z]+"), ""),
    (re.compile(r"[{}$\s]"), ""),
]


def match_math_form(raw: str) -> tuple[str, int] | None:
    canon = raw
    for pat, repl in _MATH_REWRITES:
        canon = pat.sub(repl, canon)
    canon = canon.replace("NN", "N|")    # both bars of \|x\| rewrite to N
    canon = re.sub(r"view\(\s*(\d+)\s*,\s*(\d+)\s*\)", r"view(\1,\2)", canon)
    m = re.fullmatch(r"view\((\d+),(\d+)\)", canon)
    if m:
        return ("reshape", 1), (int(m.group(1)), int(m.group(2)))
    hit = MATH_FORMS.get(canon)
    if hit is None:
        return None
    return hit, None


# -- lowering -----------------------------------------------------------------

_INCLUDED_KINDS = {"b": "batchnorm", "r": "activation", "s": "activation",
                   "h": "activation", "i": "instancenorm"}
_INCLUDED_ACT = {"r": "relu", "s": "sigmoid", "h": "tanh"}


class _Lowerer:
    def __init__(self, net: AstNet):
        self.net = net
        self.out = LoweredNet(bounds=list(net.bounds),
                              diagnostics=list(net.diagnostics))
        self.use_counter = 0
        self.fresh_counter = 0

    def fail(self, message: str, span, production: str = "") -> None:
        line = getattr(span, "line", 0)
        col = getattr(span, "col", 0)
        self.out.diagnostics.append(
            Diagnostic("error", message, line, col, production))

    def fresh(self, stem: str) -> str:
        self.fresh_counter += 1
        return f"${stem}{self.fresh_counter}"

    # -- recipes ---------------------------------------------------------

    def unit_recipes(self, unit: AstUnit, env: ExprEnv) -> list[Recipe]:
        """The unit itself plus its included-op suffix as separate recipes."""
        recipes = []
        kind = unit.kind
        if kind == "conv":
            options = list(unit.options or [])
            if "s_d" in options:
                self.fail("separable kernel option 's_d' is not supported",
                          unit.span, "Unit")
            recipes.append(Recipe(
                kind="conv",
                params={
                    "items": unit.slicing or [],
                    "features": unit.featuring,
                    "padding": ("reflect" if "p_r" in options
                                else "same" if "p" in options else "none"),
                    "transposed": "t" in options,
                    "causal": "c" in options,
                },
                env=env, share=unit.share, span=unit.span))
        elif kind == "dense":
            recipes.append(Recipe(
                kind="sliced_fc" if unit.slicing else "fc",
                params={"features": unit.featuring, "slice_axis": unit.slicing},
                env=env, share=unit.share, span=unit.span))
        elif kind == "pool":
            options = list(unit.options or [])
            mode = "avg" if "a" in options else "max" if "m" in options else None
            scope = (unit.extra or {}).get("scope")
            if "g" in options and scope is None:
                scope = "g"
            if mode is None:
                mode = "avg" if scope else None
            if mode is None:
                self.fail("pooling needs the 'm' or 'a' option", unit.span, "Unit")
                mode = "max"
            recipes.append(Recipe(
                kind="pool",
                params={"items": unit.slicing or [], "mode": mode,
                        "scope": scope, "padded": "p" in options},
                env=env, share=unit.share, span=unit.span))
        elif kind == "interp":
            recipes.append(Recipe(
                kind="interp",
                params={"percent": unit.featuring,
                        "kernel": unit.extra.get("kernel", "multilinear"),
                        "radius": unit.extra.get("radius")},
                env=env, span=unit.span))
        elif kind == "batch":
            recipes.append(Recipe(kind="batchnorm", env=env, span=unit.span))
        elif kind == "instant":
            recipes.append(Recipe(kind="instancenorm", env=env, span=unit.span))
        elif kind in ("relu", "sigmoid", "tanh"):
            recipes.append(Recipe(kind="activation",
                                  params={"fn": kind, "slope": 0},
                                  env=env, span=unit.span))
        elif kind == "leaky":
            recipes.append(Recipe(kind="activation",
                                  params={"fn": "leaky_relu",
                                          "slope": unit.extra.get("slope", 0)},
                                  env=env, span=unit.span))
        elif kind == "gen":
            recipes.append(Recipe(kind="identity", env=env, span=unit.span))
        else:
            self.fail(f"cannot lower unit kind {kind!r}", unit.span, "Unit")
            return []
        recipes.extend(self.included_recipes(unit.included, env, unit.span))
        return recipes

    def included_recipes(self, included, env, span) -> list[Recipe]:
        out = []
        for letter, arg in included or ():
            if letter == "b":
                out.append(Recipe(kind="batchnorm", env=env, span=span))
            elif letter == "i":
                out.append(Recipe(kind="instancenorm", env=env, span=span))
            elif letter == "r" and arg:
                out.append(Recipe(kind="activation",
                                  params={"fn": "leaky_relu", "slope": arg},
                                  env=env, span=span))
            else:
                out.append(Recipe(kind="activation",
                                  params={"fn": _INCLUDED_ACT[letter], "slope": 0},
                                  env=env, span=span))
        return out

    def math_recipe(self, el: AstMath, env: ExprEnv) -> Recipe | None:
        hit = match_math_form(el.raw)
        if hit is None:
            self.fail(f"unsupported algebraic form {el.raw!r}", el.span, "Math")
            return None
        (kind, arity), payload = hit
        return Recipe(kind="math",
                      params={"fn": kind, "arity": arity, "payload": payload},
                      env=env, span=el.span)

    # -- expansion -------------------------------------------------------

    def prefix_label(self, label: str, ns: str) -> str:
        if not ns or label.startswith("net.") or label.startswith("$"):
            return label
        return f"{ns}.{label}"

    def expand_use(self, use: AstUnitUse, env: ExprEnv, items: list) -> None:
        udef = self.net.units.get(use.name)
        if udef is None:
            self.fail(f"user unit {use.name!r} is not defined", use.span,
                      "UserUnit")
            return
        if use.args:
            try:
                args = [a.eval(env.names, env.args) for a in use.args]
            except DslError as e:
                self.fail(str(e), use.span, "UserUnitInstance")
                return
        elif use.instance_id is not None:
            try:
                inst_id = str(use.instance_id.eval_scalar(env.names, env.args))
            except DslError as e:
                self.fail(str(e), use.span, "UserUnitInstance")
                return
            inst = self.net.instances.get((use.name, inst_id))
            if inst is None:
                self.fail(f"instance {use.name}_{inst_id} is not defined",
                          use.span, "UserUnitInstance")
                return
            try:
                args = [a.eval({}, []) for a in inst.args]
            except DslError as e:
                self.fail(str(e), inst.span, "UserUnitInstance")
                return
        else:
            args = []
        self.use_counter += 1
        ns = f"${use.name}#{self.use_counter}"
        child = ExprEnv(names={}, args=args, assignments=list(udef.expressions))
        in_label, out_label = f"{ns}.alpha", f"{ns}.omega"
        items.append(Item("tap", labels=(in_label,), span=use.span))
        for comp in udef.components:
            self.lower_component(comp, child, ns)
        items.append(Item("resume", labels=(out_label,), span=use.span))
        for rec in self.included_recipes(use.included, env, use.span):
            items.append(Item("unit", recipe=rec, span=use.span))

    def lower_elements(self, elements, env: ExprEnv, ns: str, items: list) -> None:
        for el in elements:
            if isinstance(el, AstUnit):
                for rec in self.unit_recipes(el, env):
                    items.append(Item("unit", recipe=rec, span=el.span))
            elif isinstance(el, AstMath):
                rec = self.math_recipe(el, env)
                if rec is not None:
                    items.append(Item("unit", recipe=rec, span=el.span))
            elif isinstance(el, AstUnitUse):
                self.expand_use(el, env, items)
            elif isinstance(el, AstLink):
                if el.kind == "to_mid":
                    items.append(Item("tap", labels=(
                        self.prefix_label(el.labels[0], ns),), span=el.span))
                elif el.kind == "to_ref":
                    items.append(Item("tap", labels=(
                        self.prefix_label(el.labels[0], ns),), ref=True,
                        span=el.span))
                elif el.kind == "to_add_mid":
                    items.append(Item("adder", labels=(
                        self.prefix_label(el.labels[0], ns),), span=el.span))
                else:
                    self.fail(f"unexpected link {el.kind}", el.span, "Link")
            elif isinstance(el, AstResidual):
                self.lower_residual(el, env, ns, items)
            else:
                self.fail(f"cannot lower element {type(el).__name__}", None,
                          "ComponentElement")

    def lower_residual(self, el: AstResidual, env: ExprEnv, ns: str,
                       items: list) -> None:
        repeat = el.repeat
        if isinstance(repeat, Expr):
            try:
                repeat = repeat.eval_scalar(env.names, env.args)
            except DslError as e:
                self.fail(str(e), el.span, "ShortCutBlock")
                return
        for _ in range(max(1, int(repeat))):
            tap = self.prefix_label(el.label, ns) if el.label else self.fresh("x")
            items.append(Item("tap", labels=(tap,), span=el.span))
            if len(el.branches) == 1:
                self.lower_elements(el.branches[0], env, ns, items)
                items.append(Item("adder", labels=(tap,),
                                  project=el.projection, span=el.span))
            else:
                side_labels = []
                for branch in el.branches[1:]:
                    side = self.fresh("branch")
                    side_items: list = []
                    self.lower_elements(branch, env, ns, side_items)
                    self.out.components.append(LoweredComponent(
                        begin=("from", (tap,)), items=side_items,
                        end=("to", side), span=el.span))
                    side_labels.append(side)
                self.lower_elements(el.branches[0], env, ns, items)
                items.append(Item("adder", labels=tuple(side_labels),
                                  project=el.projection, span=el.span))

    def lower_component(self, comp: AstComponent, env: ExprEnv, ns: str) -> None:
        begin = None
        if isinstance(comp.begin, AstInput):
            begin = ("input", comp.begin.label, comp.begin.signal_axes,
                     comp.begin.channels, env)
        elif isinstance(comp.begin, AstLink):
            begin = ("from", tuple(self.prefix_label(l, ns)
                                   for l in comp.begin.labels))
        elif isinstance(comp.begin, AstMerge):
            begin = ("merge", tuple(self.prefix_label(l, ns)
                                    for l in comp.begin.labels), comp.begin.axis)
        elif comp.begin is None:
            if ns:
                begin = ("from", (f"{ns}.alpha",))
            else:
                self.fail("component without an input or source label",
                          comp.span, "BeginComponent")
                return
        items: list = []
        self.lower_elements(comp.elements, env, ns, items)
        end = None
        if isinstance(comp.end, AstLink):
            label = self.prefix_label(comp.end.labels[0], ns)
            end = ("to_add" if comp.end.kind == "to_add" else "to", label)
        elif isinstance(comp.end, AstSplit):
            end = ("split", comp.end.axis,
                   tuple(self.prefix_label(l, ns) for l in comp.end.labels))
        elif comp.end is None:
            if ns:
                end = ("to", f"{ns}.omega")
            else:
                self.fail("component without an output label", comp.span,
                          "EndComponent")
                return
        self.out.components.append(LoweredComponent(begin, items, end, comp.span))

    def run(self) -> LoweredNet:
        root = ExprEnv()
        for comp in self.net.components:
            self.lower_component(comp, root, "")
        return self.out


def lower(net: AstNet) -> LoweredNet:
    """Expand user units and produce graph-buildable components."""
    return _Lowerer(net).run()
