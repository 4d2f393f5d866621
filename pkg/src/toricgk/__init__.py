"""Extremal generalized Kähler structures on toric manifolds, numerically."""
