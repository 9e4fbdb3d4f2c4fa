"""epimob: trajectory-based stochastic SEIR simulation of mobility policies."""

__version__ = "0.1.0"
