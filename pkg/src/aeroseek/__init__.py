"""aeroseek: desk-scale aerial semantic search simulator and planner."""

__version__ = "0.1.0"
