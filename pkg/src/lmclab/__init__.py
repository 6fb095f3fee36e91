"""Desk-scale toolkit for studying linear mode connectivity under data shifts.

Train paired copies of a network on shifted data partitions under a fixed
SGD-noise sample, sweep linear interpolations between the trained parameter
vectors, and measure barrier, accuracy-difference, similarity and
ensemble-diversity observables.
"""

__version__ = "0.1.0"
