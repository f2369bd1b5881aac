"""Closed-loop map parametrizations, REN-based controller training and verification tools."""

from .operators import C, S, CausalOperator, evaluate
from .signals import Sequence, SignalPair

__all__ = ["C", "S", "CausalOperator", "evaluate", "Sequence", "SignalPair"]
__version__ = "0.1.0"
