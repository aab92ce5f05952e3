"""Decoration micro-grammar for unit fields.

Field one concatenates items like ``3``, ``3_k^x``, ``2_{\\sigma}``, ``k_2``,
``\\sigma^x_0``: a literal or parameter name, an optional role subscript
(k / sigma / delta / r), an optional axis superscript (x y z d t), and an
optional list index.  Bare literals default to the kernel/window role.
Field three holds option letters, field five included-op letters.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .ast import DslError
from .exprs import normalize_tex

__all__ = ["DecorItem", "parse_decoration", "parse_options", "parse_included",
           "KNOWN_OPTIONS"]

_ROLES = {"k": "k", "sigma": "sigma", "delta": "delta", "r": "r"}
_AXES = ("x", "y", "z", "d", "t")

# role inferred from a parameter's base name when no subscript role is given
_VAR_ROLE = {"k": "k", "w": "k", "h": "k", "sigma": "sigma", "delta": "delta",
             "r": "r", "g": "k", "f": "k", "n": "k", "s": "sigma"}


@dataclass
class DecorItem:
    value: tuple                 # ("int", n) or ("var", name)
    role: str                    # "k" | "sigma" | "delta" | "r"
    axis: str | None = None      # axis letter or None (all axes)
    index: int | None = None     # list index for parameter values


_TOK = re.compile(r"\s*(?:(?P<int>\d+)|(?P<name>[a-zA-Z]+)|(?P<op>[_^]))")


def _tokens(text: str):
    toks = []
    pos = 0
    norm = normalize_tex(text)
    while pos < len(norm):
        m = _TOK.match(norm, pos)
        if not m or m.end() == pos:
            if norm[pos:].strip() == "":
                break
            raise DslError(f"cannot read decoration near {norm[pos:pos + 10]!r}")
        pos = m.end()
        if m.group("int") is not None:
            toks.append(("int", int(m.group("int"))))
        elif m.group("name") is not None:
            toks.append(("name", m.group("name")))
        else:
            toks.append(("op", m.group("op")))
    return toks


def parse_decoration(text: str) -> list[DecorItem]:
    """Parse a kernel/window field into decoration items."""
    toks = _tokens(text)
    items: list[DecorItem] = []
    i = 0
    while i < len(toks):
        kind, val = toks[i]
        i += 1
        if kind == "op":
            raise DslError(f"decoration cannot start with {val!r}")
        value = ("int", val) if kind == "int" else ("var", val)
        role = None
        axis = None
        index = None
        while i < len(toks) and toks[i][0] == "op":
            mark = toks[i][1]
            if i + 1 >= len(toks):
                raise DslError(f"dangling {mark!r} in decoration {text!r}")
            skind, sval = toks[i + 1]
            i += 2
            if mark == "^":
                if skind != "name" or sval not in _AXES:
                    raise DslError(f"unknown axis marker ^{sval!r}")
                axis = sval
            else:  # subscript
                if skind == "int":
                    if value[0] == "int":
                        raise DslError(
                            f"literal {value[1]} cannot take the index _{sval}")
                    index = sval
                elif sval in _ROLES:
                    role = _ROLES[sval]
                else:
                    raise DslError(f"unknown subscript _{sval!r} in decoration")
        if role is None:
            if value[0] == "var":
                base = value[1].split("^")[0]
                role = _VAR_ROLE.get(base[0] if base else "", "k")
                if base in _VAR_ROLE:
                    role = _VAR_ROLE[base]
            else:
                role = "k"
        items.append(DecorItem(value=value, role=role, axis=axis, index=index))
    return items


KNOWN_OPTIONS = {"p", "p_r", "t", "c", "s_d", "m", "a", "g"}


def parse_options(text: str) -> list[str]:
    """Option letters with optional subscripts: 'cp_r' -> ['c', 'p_r']."""
    norm = normalize_tex(text)
    out = []
    i = 0
    while i < len(norm):
        ch = norm[i]
        if ch.isspace():
            i += 1
            continue
        if not ch.isalpha():
            raise DslError(f"unexpected {ch!r} in option field {text!r}")
        opt = ch
        i += 1
        if i < len(norm) and norm[i] == "_":
            j = i + 1
            while j < len(norm) and norm[j].isspace():
                j += 1
            if j < len(norm) and norm[j].isalpha():
                opt = f"{ch}_{norm[j]}"
                i = j + 1
            else:
                raise DslError(f"dangling '_' in option field {text!r}")
        if opt not in KNOWN_OPTIONS:
            raise DslError(f"unknown option letter {opt!r}")
        out.append(opt)
    return out


def parse_included(text: str) -> list[tuple[str, int]]:
    """Included-op letters from field five: b, r, r_k, s, h, i.

    Returns (letter, argument) pairs; the argument is the leaky slope index.
    """
    norm = normalize_tex(text)
    out = []
    i = 0
    while i < len(norm):
        ch = norm[i]
        if ch.isspace():
            i += 1
            continue
        if ch not in "brshi":
            raise DslError(f"unknown included-op letter {ch!r}")
        i += 1
        arg = 0
        if ch == "r" and i < len(norm) and norm[i] == "_":
            j = i + 1
            while j < len(norm) and norm[j].isspace():
                j += 1
            digits = ""
            while j < len(norm) and norm[j].isdigit():
                digits += norm[j]
                j += 1
            if not digits:
                raise DslError(f"leaky slope index missing after r_ in {text!r}")
            arg = int(digits)
            i = j
        out.append((ch, arg))
    return out
