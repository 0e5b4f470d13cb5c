"""Figure rendering for norms-game simulator exports (CSV/JSON in, PNG out)."""

__version__ = "0.1.0"
