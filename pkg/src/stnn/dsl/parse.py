"""Recursive-descent parser: command stream -> network syntax tree."""

from __future__ import annotations

import re

from .ast import (
    AstBound,
    AstComponent,
    AstInput,
    AstInstance,
    AstLink,
    AstMath,
    AstMerge,
    AstNet,
    AstResidual,
    AstSplit,
    AstUnit,
    AstUnitUse,
    AstUserUnit,
    Diagnostic,
    DslError,
)
from .decor import parse_decoration, parse_included, parse_options
from .exprs import normalize_tex, parse_assignments, parse_expr
from .lex import Arg, Command, scan, split_branches

__all__ = ["parse_source", "norm_label"]

_UNIT_KINDS = {
    "xconv": "conv", "xdense": "dense", "xpool": "pool", "xgen": "gen",
    "xrelu": "relu", "xrelup": "leaky", "xbatch": "batch",
    "xinstant": "instant", "xsigmo": "sigmoid", "xtanh": "tanh",
}
_BEGINNERS = {"xin", "xfromlabel", "xxfromlabel", "xmerge"}
_ENDERS = {"xtolabel", "xtolabelunique", "xtolabeladd", "xsplit"}
_TOP_LEVEL = {"xunitdef", "xhybridunitdef", "xbound", "xlossdef", "xgaindef"}

_LABEL_JUNK = re.compile(r"\\[a-zA-Z]+\s*|[{}$\s]")


def norm_label(text: str) -> str:
    """Labels: TeX names become plain identifiers, layout is stripped."""
    out = normalize_tex(text)
    out = _LABEL_JUNK.sub("", out)
    return out


def _maybe_expr(text: str):
    return parse_expr(text) if text.strip() else None


def _split_top_level(text: str, seps: str) -> list[str]:
    parts, depth, start = [], 0, 0
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\":
            i += 2
            continue
        if ch in "[{(":
            depth += 1
        elif ch in "]})":
            depth -= 1
        elif ch in seps and depth == 0:
            parts.append(text[start:i])
            start = i + 1
        i += 1
    parts.append(text[start:])
    return parts


class _Parser:
    def __init__(self):
        self.net = AstNet()

    def fail(self, message: str, span, production: str = "") -> None:
        line = getattr(span, "line", 0)
        col = getattr(span, "col", 0)
        self.net.diagnostics.append(
            Diagnostic("error", message, line, col, production))

    # -- units -----------------------------------------------------------

    def parse_unit(self, cmd: Command) -> AstUnit | None:
        kind = _UNIT_KINDS[cmd.name]
        try:
            if kind == "leaky":
                slope = parse_expr(cmd.args[0].text).eval_scalar({}, [])
                return AstUnit(kind="leaky", extra={"slope": slope}, span=cmd.span)
            if kind in ("relu", "batch", "instant", "sigmoid", "tanh"):
                return AstUnit(kind=kind, span=cmd.span)
            if kind == "gen":
                return AstUnit(kind="gen", span=cmd.span)
            if kind == "conv":
                return AstUnit(
                    kind="conv",
                    slicing=parse_decoration(cmd.args[0].text),
                    featuring=_maybe_expr(cmd.args[1].text),
                    options=parse_options(cmd.args[2].text),
                    share=norm_label(cmd.args[3].text) or None,
                    included=tuple(parse_included(cmd.args[4].text)),
                    span=cmd.span,
                )
            if kind == "dense":
                axis = norm_label(cmd.args[0].text)
                if axis and axis not in ("x", "y", "z", "d", "t"):
                    raise DslError(f"unknown slice axis {axis!r}", cmd.span)
                return AstUnit(
                    kind="dense",
                    slicing=axis or None,
                    featuring=_maybe_expr(cmd.args[1].text),
                    options=parse_options(cmd.args[2].text),
                    share=norm_label(cmd.args[3].text) or None,
                    included=tuple(parse_included(cmd.args[4].text)),
                    span=cmd.span,
                )
            if kind == "pool":
                scope_text = norm_label(cmd.args[0].text)
                scope = scope_text if scope_text in ("g", "x", "y", "xy") else None
                return AstUnit(
                    kind="pool",
                    slicing=None if scope else parse_decoration(cmd.args[0].text),
                    featuring=None,
                    options=parse_options(cmd.args[2].text),
                    share=norm_label(cmd.args[3].text) or None,
                    included=tuple(parse_included(cmd.args[4].text)),
                    extra={"scope": scope},
                    span=cmd.span,
                )
        except DslError as e:
            self.fail(str(e), getattr(e, "span", None) or cmd.span, "Unit")
            return None
        raise AssertionError(kind)

    def parse_interp(self, cmd: Command) -> AstUnit | None:
        try:
            percent = parse_expr(cmd.args[0].text)
            kernel, radius = "multilinear", None
            spec = cmd.args[1].text
            for item in parse_decoration(spec) if spec.strip() else []:
                if item.value[0] == "int" and item.role == "r":
                    radius = item.value[1]
                elif item.value == ("var", "b"):
                    kernel = "multilinear"
                elif item.value == ("var", "g"):
                    kernel = "gaussian"
                else:
                    raise DslError(f"unknown interpolation marker {item.value}",
                                   cmd.span)
            return AstUnit(kind="interp", featuring=percent,
                           extra={"kernel": kernel, "radius": radius},
                           span=cmd.span)
        except DslError as e:
            self.fail(str(e), getattr(e, "span", None) or cmd.span, "Interp")
            return None

    def parse_math(self, cmd: Command) -> AstMath:
        return AstMath(form="", raw=cmd.args[0].text, span=cmd.span)

    def parse_use(self, cmd: Command) -> AstUnitUse | None:
        try:
            name = norm_label(cmd.args[0].text)
            inst = _maybe_expr(cmd.args[1].text)
            included = tuple(parse_included(cmd.args[2].text))
            return AstUnitUse(name=name, instance_id=inst, included=included,
                              span=cmd.span)
        except DslError as e:
            self.fail(str(e), getattr(e, "span", None) or cmd.span, "UserUnit")
            return None

    # -- blocks ----------------------------------------------------------

    def parse_elements(self, cmds: list[Command], where: str) -> list:
        """Units, uses, residual blocks, and mid-chain links."""
        out = []
        for cmd in cmds:
            el = self.parse_element(cmd, where)
            if el is not None:
                out.append(el)
        return out

    def parse_element(self, cmd: Command, where: str):
        if cmd.name in _UNIT_KINDS:
            return self.parse_unit(cmd)
        if cmd.name == "xinterp":
            return self.parse_interp(cmd)
        if cmd.name == "xmath":
            return self.parse_math(cmd)
        if cmd.name in ("xunit", "xunitcall"):
            return self.parse_use(cmd)
        if cmd.name == "xunitinstance":
            # inline instantiation with explicit arguments (nested user units)
            try:
                args = [parse_expr(t) for t in
                        _split_top_level(cmd.args[2].text, ",") if t.strip()]
                return AstUnitUse(name=norm_label(cmd.args[0].text),
                                  instance_id=_maybe_expr(cmd.args[1].text),
                                  args=args, span=cmd.span)
            except DslError as e:
                self.fail(str(e), cmd.span, "UserUnitInstance")
                return None
        if cmd.name in ("xresid", "xxresid", "xshortcut"):
            return self.parse_residual(cmd)
        if cmd.name == "xtolabelto":
            return AstLink("to_mid", (norm_label(cmd.args[0].text),), cmd.span)
        if cmd.name == "xtoreflabelto":
            return AstLink("to_ref", (norm_label(cmd.args[0].text),), cmd.span)
        if cmd.name == "xtolabeltoadd":
            return AstLink("to_add_mid", (norm_label(cmd.args[0].text),), cmd.span)
        self.fail(f"unexpected \\{cmd.name} in {where}", cmd.span, "ComponentElement")
        return None

    def parse_residual(self, cmd: Command) -> AstResidual | None:
        body = cmd.args[0]
        label = None
        repeat = 1
        projection = cmd.name == "xxresid"
        if cmd.name in ("xresid", "xshortcut") and len(cmd.args) > 1:
            second = cmd.args[1].text.strip()
            if second:
                try:
                    repeat = parse_expr(second)
                except DslError:
                    repeat = 1
                    label = norm_label(second)
                else:
                    # a plain label like "beta" also parses as an expression;
                    # only digit-led or argument text is a repeat count
                    if not re.match(r"[\d\\]", second.lstrip("{ ")):
                        repeat, label = 1, norm_label(second)
        branches = []
        for chunk in split_branches(body):
            cmds = scan(chunk.text, chunk.span.line, chunk.span.col)
            branches.append(self.parse_elements(cmds, "residual block"))
        if label and label.startswith("!"):
            projection, label = True, label[1:]
        return AstResidual(branches=branches, label=label, repeat=repeat,
                           projection=projection, span=cmd.span)

    # -- components ------------------------------------------------------

    def parse_input(self, cmd: Command) -> AstInput:
        return AstInput(
            label=norm_label(cmd.args[2].text),
            signal_axes=norm_label(cmd.args[0].text),
            channels=_maybe_expr(cmd.args[1].text),
            span=cmd.span,
        )

    def parse_components(self, cmds: list[Command], namespace: str = "") -> list:
        comps = []
        i = 0
        while i < len(cmds):
            comp, i = self.parse_component(cmds, i, namespace)
            if comp is not None:
                comps.append(comp)
        return comps

    def parse_component(self, cmds: list[Command], i: int, namespace: str):
        begin = None
        span = cmds[i].span
        cmd = cmds[i]
        if cmd.name == "xin":
            begin, i = self.parse_input(cmd), i + 1
        elif cmd.name in ("xfromlabel", "xxfromlabel"):
            labels = tuple(norm_label(t) for t in
                           _split_top_level(cmd.args[0].text, ",") if norm_label(t))
            begin, i = AstLink("from", labels, cmd.span), i + 1
        elif cmd.name == "xmerge":
            labels = tuple(norm_label(t) for t in
                           _split_top_level(cmd.args[0].text, ",") if norm_label(t))
            axis = norm_label(cmd.args[1].text) or "a"
            if axis == "ast":
                axis = "*"
            begin, i = AstMerge(labels, axis, cmd.span), i + 1
        elements = []
        end = None
        while i < len(cmds):
            cmd = cmds[i]
            if cmd.name in ("xin", "xmerge", "xfromlabel", "xxfromlabel") \
                    or cmd.name in _TOP_LEVEL:
                break
            if cmd.name == "xtolabel" or cmd.name == "xtolabelunique":
                end = AstLink("to", (norm_label(cmd.args[0].text),), cmd.span)
                i += 1
                break
            if cmd.name == "xtolabeladd":
                end = AstLink("to_add", (norm_label(cmd.args[0].text),), cmd.span)
                i += 1
                break
            if cmd.name == "xsplit":
                labels = tuple(norm_label(t) for t in
                               _split_top_level(cmd.args[1].text, ",") if norm_label(t))
                end = AstSplit(norm_label(cmd.args[0].text) or "a", labels, cmd.span)
                i += 1
                break
            el = self.parse_element(cmd, "component")
            if el is not None:
                elements.append(el)
            i += 1
        if begin is None and not elements and end is None:
            return None, i
        return AstComponent(begin, elements, end, namespace, span), i

    # -- top level -------------------------------------------------------

    def parse_bound(self, cmd: Command) -> None:
        bound = AstBound(net=norm_label(cmd.args[0].text),
                         net_id=norm_label(cmd.args[1].text), span=cmd.span)
        text = cmd.args[2].text
        for seg in _split_top_level(text, ";,"):
            if ":=" not in seg:
                if seg.strip():
                    self.fail(f"expected 'name := value' in bound, got {seg.strip()!r}",
                              cmd.span, "SyblicNetInstance")
                continue
            name_part, value = seg.split(":=", 1)
            name = norm_label(name_part)
            value = value.strip()
            if name == "optima":
                inner = value.strip()
                if inner.startswith("[") and inner.endswith("]"):
                    inner = inner[1:-1]
                parts = _split_top_level(inner, ",")
                if len(parts) < 2:
                    self.fail(f"optima needs [goal, method, reference], got {value!r}",
                              cmd.span, "OptimaDef")
                    continue
                bound.goal = norm_label(parts[0])
                bound.optimizer = norm_label(parts[1])
                bound.reference = ",".join(p.strip() for p in parts[2:]).strip()
                continue
            norm = normalize_tex(value)
            shape_items = re.findall(r"(\d+)\s*_\s*([a-zA-Z]+)", norm)
            if shape_items:
                axes: dict[str, int] = {}
                for size, letters in shape_items:
                    for ax in letters:
                        ax = "a" if ax in ("a", "c", "d") else ax
                        axes[ax] = int(size)
                bound.inputs[name] = axes
            elif norm.strip().isdigit():
                bound.scalars[name] = int(norm.strip())
            else:
                self.fail(f"cannot read bound value {value.strip()!r} for {name!r}",
                          cmd.span, "InputDef")
        self.net.bounds.append(bound)

    def parse_unitdef(self, cmd: Command) -> None:
        name = norm_label(cmd.args[0].text)
        body = cmd.args[1]
        cmds = scan(body.text, body.span.line, body.span.col)
        expressions = []
        rest = []
        for c in cmds:
            if c.name == "xexpression":
                try:
                    expressions.extend(parse_assignments(c.args[0].text))
                except DslError as e:
                    self.fail(str(e), c.span, "Expression")
            else:
                rest.append(c)
        comps = self.parse_components(rest, namespace=name)
        self.net.units[name] = AstUserUnit(name=name, expressions=expressions,
                                           components=comps, span=cmd.span)

    def parse_instance(self, cmd: Command) -> None:
        try:
            args = [parse_expr(t) for t in
                    _split_top_level(cmd.args[2].text, ",") if t.strip()]
            inst = AstInstance(unit=norm_label(cmd.args[0].text),
                               instance_id=norm_label(cmd.args[1].text),
                               args=args, span=cmd.span)
            self.net.instances[(inst.unit, inst.instance_id)] = inst
        except DslError as e:
            self.fail(str(e), cmd.span, "UserUnitInstance")

    def parse_lossdef(self, cmd: Command) -> None:
        name = norm_label(cmd.args[0].text)
        variant = norm_label(cmd.args[1].text)
        body = cmd.args[2]
        comps = self.parse_components(
            scan(body.text, body.span.line, body.span.col),
            namespace=f"loss:{name}")
        self.net.losses[(name, variant)] = comps

    def parse_dblock(self, cmd: Command) -> None:
        # decorative wrapper: {input id}{?}{body}{net label}, fields 1/4 supply
        # the input and output labels for the inlined body
        input_label = norm_label(cmd.args[0].text) or "input"
        out_label = norm_label(cmd.args[3].text) or "out"
        body = cmd.args[2]
        cmds = scan(body.text, body.span.line, body.span.col)
        comps = self.parse_components(cmds)
        if comps:
            first, last = comps[0], comps[-1]
            if first.begin is None:
                first.begin = AstInput(label=input_label, span=cmd.span)
            if last.end is None:
                last.end = AstLink("to", (out_label,), cmd.span)
        self.net.components.extend(comps)

    def run(self, text: str) -> AstNet:
        try:
            cmds = scan(text)
        except DslError as e:
            self.fail(str(e), getattr(e, "span", None), "tokenize")
            return self.net
        pending: list[Command] = []

        def flush():
            if pending:
                self.net.components.extend(self.parse_components(pending))
                pending.clear()

        for cmd in cmds:
            if cmd.name in ("xunitdef", "xhybridunitdef"):
                flush()
                self.parse_unitdef(cmd)
            elif cmd.name in ("xunitinstance", "xhybridunitinstance"):
                flush()
                self.parse_instance(cmd)
            elif cmd.name == "xbound":
                flush()
                self.parse_bound(cmd)
            elif cmd.name in ("xlossdef", "xgaindef"):
                flush()
                self.parse_lossdef(cmd)
            elif cmd.name == "xdblock":
                flush()
                self.parse_dblock(cmd)
            else:
                pending.append(cmd)
        flush()
        return self.net


def parse_source(text: str) -> AstNet:
    """Parse a network description; diagnostics land on the returned tree."""
    return _Parser().run(text)
