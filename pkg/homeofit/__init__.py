"""
homeofit
========

Approximation of continuous functions by finite-degree polynomials composed
with homeomorphisms.

Architecture:
- poly.py: polynomial bases, conditioned least squares, monotone inversion
- critical.py: critical sets (strict and plateau extremizers)
- construct.py: exact path (Chandler polynomial + piecewise homeomorphism)
- invnet.py: learned path (invertible residual network)
- fit.py: variable-projection training loop and metrics
- targets.py: benchmark targets, grids, synthetic PES, datasets
"""

__version__ = "1.0.0"
__author__ = "homeofit team"
