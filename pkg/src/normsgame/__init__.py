"""Deterministic, replayable simulator of a norms game with tag-command
discussions, pluggable agent backends, and two evolutionary regimes."""

__version__ = "0.1.0"
