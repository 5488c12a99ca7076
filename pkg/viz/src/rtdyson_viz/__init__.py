"""Display-only rendering of rtdyson result files."""

__version__ = "0.1.0"
