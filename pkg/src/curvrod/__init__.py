"""Curved thin rods: cell problem, bending-torsion rod, string limit and scaled-energy experiments."""

__version__ = "0.1.0"
