"""Two-level Q-learning for mixed display of recommendations and ads."""

__version__ = "0.1.0"
