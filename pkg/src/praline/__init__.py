"""Probability bounds for Datalog programs with partially known input correlations."""

from praline.frontend import (
    Atom,
    ConflictError,
    InfeasibleError,
    Literal,
    NonStratifiedError,
    ParseError,
    PralineError,
    ProbabilityRangeError,
    Program,
    Rule,
    ScaleError,
    infer_correlation_classes,
    parse,
)
from praline.cli import BoundsReport, solve_program, solve_source

__version__ = "0.1.0"

__all__ = [
    "Atom",
    "BoundsReport",
    "ConflictError",
    "InfeasibleError",
    "Literal",
    "NonStratifiedError",
    "ParseError",
    "PralineError",
    "ProbabilityRangeError",
    "Program",
    "Rule",
    "ScaleError",
    "infer_correlation_classes",
    "parse",
    "solve_program",
    "solve_source",
    "__version__",
]
