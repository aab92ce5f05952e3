"""Command scanner for the network description surface language.

The source is LaTeX-shaped: a stream of ``\\xsomething{...}{...}`` commands
embedded in arbitrary layout noise (tabular wrappers, math-mode markers,
spacing).  The scanner extracts the known commands with their raw brace-group
arguments and source positions, recursing through unknown structure; dual and
tabular command variants (``dx*``, ``tabx*``) alias their plain forms.
"""

from __future__ import annotations

from dataclasses import dataclass

from .ast import DslError

__all__ = ["Span", "Arg", "Command", "scan", "split_branches"]


# command name -> number of brace-group fields
ARITY = {
    "xconv": 5, "xdense": 5, "xpool": 5, "xgen": 5,
    "xinterp": 2,
    "xrelu": 0, "xrelup": 1, "xbatch": 0, "xinstant": 0, "xsigmo": 0, "xtanh": 0,
    "xunit": 3, "xunitcall": 3,
    "xin": 3,
    "xtolabel": 1, "xtolabelto": 1, "xtolabelunique": 1,
    "xtolabeladd": 1, "xtolabeltoadd": 1,
    "xfromlabel": 1, "xxfromlabel": 1,
    "xtoreflabelto": 1,
    "xresid": 2, "xxresid": 1, "xshortcut": 2,
    "xmerge": 2, "xsplit": 2,
    "xunitdef": 2, "xunitinstance": 3,
    "xhybridunitdef": 2, "xhybridunitinstance": 3,
    "xexpression": 1,
    "xbound": 3,
    "xmath": 1,
    "xlossdef": 3, "xgaindef": 3,
    "xdblock": 4,
}

# dual/hybrid aliases normalize onto the plain command
_ALIAS_PREFIXES = ("tab", "d")

# layout commands that consume brace groups which must not be scanned
_SKIP_GROUPS = {"begin": 1, "end": 1, "hspace": 1, "vspace": 1, "eqref": 1,
                "label": 1, "cite": 1, "setcounter": 2, "issue": 1,
                "bibliographystyle": 1, "bibliography": 1}


@dataclass(frozen=True)
class Span:
    line: int
    col: int

    def __str__(self):
        return f"{self.line}:{self.col}"


@dataclass
class Arg:
    text: str
    span: Span


@dataclass
class Command:
    name: str
    args: list[Arg]
    span: Span


class _Cursor:
    def __init__(self, text: str, line: int = 1, col: int = 1):
        self.text = text
        self.pos = 0
        self.line = line
        self.col = col

    def eof(self) -> bool:
        return self.pos >= len(self.text)

    def peek(self) -> str:
        return self.text[self.pos] if not self.eof() else ""

    def span(self) -> Span:
        return Span(self.line, self.col)

    def advance(self, n: int = 1) -> str:
        out = self.text[self.pos:self.pos + n]
        for ch in out:
            if ch == "\n":
                self.line += 1
                self.col = 1
            else:
                self.col += 1
        self.pos += n
        return out

    def take_name(self) -> str:
        start = self.pos
        while not self.eof() and (self.text[self.pos].isalpha()):
            self.advance()
        return self.text[start:self.pos]

    def skip_ws(self) -> None:
        while not self.eof() and self.peek() in " \t\r\n":
            self.advance()

    def take_group(self) -> Arg:
        """Read one balanced {...} group; returns the inner text."""
        self.skip_ws()
        if self.peek() != "{":
            raise DslError(f"expected '{{' at {self.span()}", self.span())
        open_span = self.span()
        self.advance()
        inner_span = self.span()
        depth = 1
        start = self.pos
        while not self.eof():
            ch = self.peek()
            if ch == "\\":
                self.advance(2)
                continue
            if ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    text = self.text[start:self.pos]
                    self.advance()
                    return Arg(text, inner_span)
            self.advance()
        raise DslError(f"unbalanced braces opened at {open_span}", open_span)


def _normalize_name(name: str) -> str:
    if name in ARITY:
        return name
    for prefix in _ALIAS_PREFIXES:
        if name.startswith(prefix) and name[len(prefix):] in ARITY:
            return name[len(prefix):]
    return name


def scan(text: str, line: int = 1, col: int = 1) -> list[Command]:
    """Extract the command sequence, recursing through stray brace groups."""
    cur = _Cursor(text, line, col)
    out: list[Command] = []
    stray_opens: list[Span] = []
    while not cur.eof():
        ch = cur.peek()
        if ch == "%":
            while not cur.eof() and cur.peek() != "\n":
                cur.advance()
        elif ch == "\\":
            span = cur.span()
            cur.advance()
            if cur.eof():
                break
            if not cur.peek().isalpha():
                cur.advance()          # control symbol: \\ \, \$ \| etc.
                continue
            name = _normalize_name(cur.take_name())
            if name in ARITY:
                args = [cur.take_group() for _ in range(ARITY[name])]
                out.append(Command(name, args, span))
            elif name in _SKIP_GROUPS:
                for _ in range(_SKIP_GROUPS[name]):
                    cur.skip_ws()
                    if cur.peek() == "{":
                        cur.take_group()
                if name == "begin":
                    cur.skip_ws()       # tabular column spec and the like
                    if cur.peek() == "{":
                        cur.take_group()
            # any other command: name consumed, its groups get scanned inline
        elif ch == "{":
            stray_opens.append(cur.span())
            cur.advance()
        elif ch == "}":
            if stray_opens:
                stray_opens.pop()
            cur.advance()
        else:
            cur.advance()
    if stray_opens:
        raise DslError(f"unbalanced braces opened at {stray_opens[-1]}", stray_opens[-1])
    return out


def split_branches(arg: Arg) -> list[Arg]:
    """Split a block body on top-level '|' separators (cast-adder branches)."""
    text = arg.text
    parts: list[tuple[str, int]] = []
    depth = 0
    start = 0
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\":
            i += 2
            continue
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
        elif ch == "|" and depth == 0:
            parts.append((text[start:i], start))
            start = i + 1
        i += 1
    parts.append((text[start:], start))
    if len(parts) == 1:
        return [arg]
    out = []
    for chunk, offset in parts:
        line = arg.span.line + text[:offset].count("\n")
        if "\n" in text[:offset]:
            col = offset - text[:offset].rfind("\n")
        else:
            col = arg.span.col + offset
        out.append(Arg(chunk, Span(line, col)))
    return out
