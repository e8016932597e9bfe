"""Finite-trace temporal model checking for data-aware guarded transition
systems over uninterpreted functions, relations and linear rational
arithmetic."""

__version__ = "0.1.0"
