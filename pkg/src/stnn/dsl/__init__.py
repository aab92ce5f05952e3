"""Surface-language front end: scanner, parser, expressions, and lowering."""

from .ast import Diagnostic, DslError
from .parse import parse_source
from .lower import lower

__all__ = ["Diagnostic", "DslError", "parse_source", "lower"]
