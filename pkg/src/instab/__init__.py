"""Numerical toolkit for magnetic-Lagrangian instability experiments.

Certifies the hypotheses that make a zero-potential point Lyapunov
unstable, integrates the rescaled Euler-Lagrange dynamics to exhibit the
escape trajectories, and builds the adapted level-set charts behind the
construction.
"""

from .errors import InstabError

__all__ = ["InstabError"]
__version__ = "0.1.0"
