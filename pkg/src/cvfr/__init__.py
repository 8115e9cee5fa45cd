"""Continuous-variable firing-rate (continuous Hopfield) networks trained as
classifiers through planted attractors."""

__version__ = "0.1.0"
