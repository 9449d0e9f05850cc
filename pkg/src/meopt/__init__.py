"""Conic particle gradient descent and convex baselines for sparse
optimization over measures, with teacher-student experiment tooling."""

__version__ = "0.1.0"
