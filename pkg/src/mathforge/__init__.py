"""Agentic math-problem evolution with dual verification gates."""

__version__ = "0.1.0"
