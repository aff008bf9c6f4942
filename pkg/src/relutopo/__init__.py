"""Topology and dynamics of ReLU classifier networks."""

__version__ = "0.1.0"
