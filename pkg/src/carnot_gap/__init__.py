"""Poincare inequalities and spectral gaps for measures exp(-a N^p) on Carnot groups."""

__version__ = "0.1.0"
