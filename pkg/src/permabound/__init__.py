"""Permanent bounds for nonnegative matrices via the Bethe free energy."""

__version__ = "0.1.0"
