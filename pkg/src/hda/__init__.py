"""Heuristic domain adaptation on synthetic domain-shift tasks."""

__version__ = "0.1.0"
