"""Hyper-parameter expressions: integers, lists, argument placeholders,
floor-division and modulo, scalar/list broadcasting, and zero-based indexing.

Evaluation is deferred: a parsed expression evaluates against an environment
of named values, call arguments, and (inside unit bodies) the input signal
resolutions n_x, n_y, n_z.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any

from .ast import DslError

__all__ = ["Expr", "ExprEnv", "parse_expr", "parse_assignments", "normalize_tex"]

_GREEK = {
    r"\sigma": "sigma", r"\delta": "delta", r"\alpha": "alpha", r"\beta": "beta",
    r"\gamma": "gamma", r"\omega": "omega", r"\varphi": "phi", r"\phi": "phi",
    r"\lambda": "lambda", r"\mu": "mu", r"\tau": "tau", r"\epsilon": "epsilon",
}


def normalize_tex(text: str) -> str:
    """Strip math-mode noise and rewrite TeX names into plain identifiers."""
    out = text
    for tex, plain in _GREEK.items():
        out = out.replace(tex + " ", plain + " ")
        out = re.sub(re.escape(tex) + r"(?![a-zA-Z])", plain, out)
    out = out.replace(r"\lfloor", "⌊").replace(r"\rfloor", "⌋")
    out = out.replace(r"\bmod", " mod ").replace(r"\mod", " mod ")
    out = out.replace(r"\cdot", "*").replace(r"\times", "*")
    out = out.replace(r"\,", " ").replace(r"\;", " ").replace(r"\!", " ")
    out = out.replace(r"\quad", " ").replace(r"\qquad", " ")
    out = out.replace("\\ ", " ").replace("~", " ")
    out = out.replace("\\$", "")        # escaped \$ is the argument marker
    out = out.replace("$", " ")               # bare $ is math-mode noise
    out = out.replace("{", " ").replace("}", " ")
    return out


@dataclass
class ExprEnv:
    """Names, call arguments, and bind-time signal resolutions."""

    names: dict = field(default_factory=dict)
    args: list = field(default_factory=list)
    assignments: list = field(default_factory=list)    # deferred (name, Expr)

    def child(self, args: list) -> "ExprEnv":
        return ExprEnv(names=dict(self.names), args=list(args),
                       assignments=list(self.assignments))

    def resolved(self, shape_vars: dict | None = None) -> dict:
        """Evaluate the assignment list (in order) against this environment."""
        scope = dict(self.names)
        if shape_vars:
            scope.update(shape_vars)
        for name, expr in self.assignments:
            scope[name] = expr.eval(scope, self.args)
        return scope


class Expr:
    """A parsed expression tree; eval() yields an int or a list of ints."""

    def __init__(self, node):
        self.node = node

    def eval(self, scope: dict, args: list) -> Any:
        return _eval(self.node, scope, args)

    def eval_scalar(self, scope: dict, args: list) -> int:
        v = self.eval(scope, args)
        if isinstance(v, list):
            raise DslError(f"expected a scalar, got the list {v}")
        return int(v)


def _broadcast(op, a, b):
    if isinstance(a, list) and isinstance(b, list):
        if len(a) != len(b):
            raise DslError(f"list lengths differ: {len(a)} vs {len(b)}")
        return [op(x, y) for x, y in zip(a, b)]
    if isinstance(a, list):
        return [op(x, b) for x in a]
    if isinstance(b, list):
        return [op(a, y) for y in b]
    return op(a, b)


def _eval(node, scope, args):
    tag = node[0]
    if tag == "int":
        return node[1]
    if tag == "list":
        out = []
        for item in node[1]:
            v = _eval(item, scope, args)
            out.extend(v) if isinstance(v, list) else out.append(v)
        return out
    if tag == "arg":
        idx = node[1]
        if not 1 <= idx <= len(args):
            raise DslError(f"argument {idx}_$ not supplied (got {len(args)})")
        return args[idx - 1]
    if tag == "var":
        name = node[1]
        if name not in scope:
            raise DslError(f"unbound name {name!r}")
        return scope[name]
    if tag == "index":
        base = _eval(node[1], scope, args)
        if not isinstance(base, list):
            raise DslError(f"cannot index the scalar {base}")
        i = node[2]
        if not 0 <= i < len(base):
            raise DslError(f"index {i} out of range for list of {len(base)}")
        return base[i]
    if tag in ("+", "-", "*", "mod", "floordiv"):
        a = _eval(node[1], scope, args)
        b = _eval(node[2], scope, args)
        ops = {
            "+": lambda x, y: x + y,
            "-": lambda x, y: x - y,
            "*": lambda x, y: x * y,
            "mod": lambda x, y: x % y,
            "floordiv": lambda x, y: x // y,
        }
        return _broadcast(ops[tag], a, b)
    if tag == "neg":
        v = _eval(node[1], scope, args)
        return [-x for x in v] if isinstance(v, list) else -v
    raise DslError(f"bad expression node {tag}")


_TOKEN = re.compile(
    r"\s*(?:(?P<int>\d+)|(?P<name>[a-zA-Z]+)"
    r"|(?P<op>[\[\],+\-*/=;()^⌊⌋_]))"
)


class _P:
    def __init__(self, text: str):
        self.toks: list[tuple[str, Any]] = []
        pos = 0
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if not m or m.end() == pos:
                if text[pos:].strip() == "":
                    break
                raise DslError(f"cannot read expression near {text[pos:pos + 12]!r}")
            pos = m.end()
            if m.group("int") is not None:
                self.toks.append(("int", int(m.group("int"))))
            elif m.group("name") is not None:
                name = m.group("name")
                if name == "mod":
                    self.toks.append(("op", "mod"))
                else:
                    self.toks.append(("name", name))
            else:
                self.toks.append(("op", m.group("op")))
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else ("eof", None)

    def next(self):
        t = self.peek()
        self.i += 1
        return t

    def expect(self, op):
        t = self.next()
        if t != ("op", op):
            raise DslError(f"expected {op!r}, got {t[1]!r}")

    # precedence: +,- < *,mod,floordiv < atoms
    def expr(self):
        node = self.term()
        while self.peek() == ("op", "+") or self.peek() == ("op", "-"):
            op = self.next()[1]
            node = (op, node, self.term())
        return node

    def term(self):
        node = self.atom_trailed()
        while True:
            kind, val = self.peek()
            if (kind, val) == ("op", "*") or (kind, val) == ("op", "mod"):
                self.next()
                node = ("*" if val == "*" else "mod", node, self.atom_trailed())
            elif (kind, val) == ("op", "/"):
                self.next()
                node = ("floordiv", node, self.atom_trailed())
            else:
                return node

    def atom_trailed(self):
        node = self.atom()
        # suffixes: _N indexes a list, _$ after an int is an argument,
        # _letter and ^letter extend the variable name (n_x, sigma^y)
        while self.peek() in (("op", "_"), ("op", "^")):
            mark = self.next()[1]
            kind, val = self.next()
            if mark == "^":
                if kind != "name" or node[0] != "var":
                    raise DslError(f"bad axis suffix ^{val!r}")
                node = ("var", node[1] + "^" + val)
            elif kind == "op" and val == "":
                if node[0] != "int":
                    raise DslError("argument placeholder needs a literal position")
                node = ("arg", node[1])
            elif kind == "int":
                node = ("index", node, val)
            elif kind == "name":
                if node[0] != "var":
                    raise DslError(f"cannot suffix {node[0]} with _{val}")
                node = ("var", node[1] + "_" + val)
            else:
                raise DslError(f"bad subscript {val!r}")
        return node

    def atom(self):
        kind, val = self.next()
        if kind == "int":
            return ("int", val)
        if kind == "name":
            return ("var", val)
        if kind == "op" and val == "-":
            return ("neg", self.atom_trailed())
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "op" and val == "[":
            items = []
            if self.peek() != ("op", "]"):
                items.append(self.expr())
                while self.peek() == ("op", ","):
                    self.next()
                    items.append(self.expr())
            self.expect("]")
            return ("list", items)
        if kind == "op" and val == "⌊":
            node = self.expr()
            self.expect("⌋")
            return node                   # inner '/' already floor-divides
        raise DslError(f"unexpected token {val!r} in expression")


def parse_expr(text: str) -> Expr:
    p = _P(normalize_tex(text))
    node = p.expr()
    if p.peek() != ("eof", None):
        raise DslError(f"trailing tokens in expression {text!r}")
    return Expr(node)


def parse_assignments(text: str) -> list[tuple[str, Expr]]:
    """Parse 'name = expr; name = expr; ...' (names may carry ^axis suffixes)."""
    out = []
    for chunk in normalize_tex(text).split(";"):
        if not chunk.strip():
            continue
        if "=" not in chunk:
            raise DslError(f"expected an assignment, got {chunk.strip()!r}")
        name_part, expr_part = chunk.split("=", 1)
        p = _P(name_part)
        node = p.atom_trailed()
        if node[0] != "var" or p.peek() != ("eof", None):
            raise DslError(f"bad assignment target {name_part.strip()!r}")
        out.append((node[1], parse_expr(expr_part)))
    return out
