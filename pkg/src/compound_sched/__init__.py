"""Declarative compound-AI workflow planning, configuration search and
cluster simulation."""

__version__ = "0.1.0"
