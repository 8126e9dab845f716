"""Numerical toolkit for higher-order Dirichlet problems on Lipschitz domains."""
__version__ = "0.1.0"
