"""Traversability-aware navigation: elevation mapping, terrain costs, planning and mode decisions."""

__version__ = "0.1.0"
