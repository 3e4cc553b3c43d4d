"""Synthetic-to-real transfer for goal-directed indoor navigation agents."""

__version__ = "0.1.0"
