"""Finite-time bearing-based maneuvering of acyclic leader-follower formations."""

__version__ = "0.1.0"
