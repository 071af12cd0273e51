"""Discrete volume-normalized Ricci flow on warped 3-manifolds, Perelman functionals,
Otto calculus, curvature-driven Fokker-Planck flows and 1-D optimal transport."""

__version__ = "0.1.0"
