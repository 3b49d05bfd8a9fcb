"""Inductive invariants of piecewise polynomial programs.

Pipeline: :mod:`frontend` parses a program into a :class:`~sospi.semialg.PpsSystem`;
:mod:`analysis` synthesizes a polynomial template, then runs policy iteration whose
steps are sum-of-squares programs (:mod:`sos`, solved by :mod:`sdp`) and linear
programs (:mod:`lp`). :mod:`sim` samples the concrete semantics for cross-checks.
"""

from .analysis import (
    AnalysisOptions,
    BoundVector,
    Context,
    NoGoodInvariant,
    NotPostFixpoint,
    TemplateBasis,
    check_inductive,
    eval_relaxed_F,
    policy_iterate,
    synth_template,
)
from .frontend import load, parse
from .poly import MonomialBasis, Polynomial
from .semialg import Partition, PpsSystem, SemiAlgSet

__version__ = "0.1.0"

__all__ = [
    "AnalysisOptions",
    "BoundVector",
    "Context",
    "MonomialBasis",
    "NoGoodInvariant",
    "NotPostFixpoint",
    "Partition",
    "Polynomial",
    "PpsSystem",
    "SemiAlgSet",
    "TemplateBasis",
    "check_inductive",
    "eval_relaxed_F",
    "load",
    "parse",
    "policy_iterate",
    "synth_template",
]
