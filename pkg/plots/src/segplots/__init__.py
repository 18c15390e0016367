"""Figures from training metrics CSVs.

This package touches the trainer only through its CSV files; it never
imports it. The aggregate statistics are recomputed here from the same
definitions so plotted values can be checked against logged ones.
"""

__version__ = "0.1.0"
