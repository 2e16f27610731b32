"""Graph-structured variational background modelling for video."""

__version__ = "0.1.0"
