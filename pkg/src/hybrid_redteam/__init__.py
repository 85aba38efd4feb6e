"""Hybrid planner-guided red-team agent for a multi-subnet cyber range."""

__version__ = "0.1.0"
