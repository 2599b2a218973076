"""Planner-seeded genetic programming of behavior trees for block assembly."""

__version__ = "0.1.0"
