"""Weak supervision for pairwise dilemmas: heuristic rules -> aggregate labels -> forest."""

__version__ = "0.1.0"
