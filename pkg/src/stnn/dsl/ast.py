"""Syntax-tree types and diagnostics for the network description language."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

__all__ = [
    "DslError", "Diagnostic", "AstUnit", "AstUnitUse", "AstMath", "AstInput",
    "AstLink", "AstResidual", "AstMerge", "AstSplit", "AstComponent",
    "AstUserUnit", "AstInstance", "AstBound", "AstNet",
]


class DslError(Exception):
    """Unrecoverable scan/parse failure with a source position."""

    def __init__(self, message: str, span=None):
        super().__init__(message)
        self.span = span


@dataclass
class Diagnostic:
    severity: str            # "error" | "warning"
    message: str
    line: int = 0
    col: int = 0
    production: str = ""

    def __str__(self):
        where = f"{self.line}:{self.col}" if self.line else "-"
        prod = f" [{self.production}]" if self.production else ""
        return f"{where}: {self.severity}: {self.message}{prod}"


@dataclass
class AstUnit:
    """One decorated symbol: unit letter plus up to five parsed fields."""

    kind: str                          # conv | dense | pool | interp | relu | ...
    slicing: Any = None                # parsed decoration items (field one)
    featuring: Any = None              # expression (field two)
    options: Any = None                # option letters (field three)
    share: Optional[str] = None        # sharing label (field four)
    included: tuple = ()               # included-op letters (field five)
    extra: dict = field(default_factory=dict)
    span: Any = None


@dataclass
class AstUnitUse:
    name: str
    instance_id: Any = None            # expression or None (defaults)
    included: tuple = ()
    args: list = field(default_factory=list)   # inline instantiation arguments
    span: Any = None


@dataclass
class AstMath:
    form: str                          # canonical whitelisted form name
    raw: str = ""
    payload: Any = None
    span: Any = None


@dataclass
class AstInput:
    label: str
    signal_axes: str = ""              # e.g. "yx"
    channels: Any = None
    span: Any = None


@dataclass
class AstLink:
    kind: str                          # to | to_mid | to_ref | to_add | to_add_mid | from
    labels: tuple = ()
    span: Any = None


@dataclass
class AstResidual:
    branches: list = field(default_factory=list)   # list of element lists
    label: Optional[str] = None
    repeat: Any = 1                    # int or expression
    projection: bool = False
    span: Any = None


@dataclass
class AstMerge:
    labels: tuple = ()
    axis: str = "a"                    # axis letter or "*" (flatten + concat)
    span: Any = None


@dataclass
class AstSplit:
    axis: str = "a"
    labels: tuple = ()                 # entries may carry ":width" annotations
    span: Any = None


@dataclass
class AstComponent:
    begin: Any = None                  # AstInput | AstLink(from) | AstMerge | None
    elements: list = field(default_factory=list)
    end: Any = None                    # AstLink(to/to_add) | AstSplit | None
    namespace: str = ""
    span: Any = None


@dataclass
class AstUserUnit:
    name: str
    expressions: list = field(default_factory=list)   # raw assignment strings
    components: list = field(default_factory=list)
    span: Any = None


@dataclass
class AstInstance:
    unit: str
    instance_id: Any = None
    args: list = field(default_factory=list)
    span: Any = None


@dataclass
class AstBound:
    net: str
    net_id: str = ""
    inputs: dict = field(default_factory=dict)        # label -> {axis: size}
    scalars: dict = field(default_factory=dict)       # name -> int
    goal: str = ""
    optimizer: str = ""
    reference: str = ""
    span: Any = None


@dataclass
class AstNet:
    components: list = field(default_factory=list)
    units: dict = field(default_factory=dict)          # name -> AstUserUnit
    instances: dict = field(default_factory=dict)      # (unit, id) -> AstInstance
    bounds: list = field(default_factory=list)
    losses: dict = field(default_factory=dict)         # (name, variant) -> components
    diagnostics: list = field(default_factory=list)
