"""Wasserstein auto-encoding of merge trees and persistence diagrams.

A toolkit that extracts topological descriptors from ensembles of scalar
fields, measures them with optimal-transport distances, and trains an
auto-encoder whose layers transform branch decomposition trees natively,
for data reduction, 2D layouts and interactive latent-space exploration.
"""

__version__ = "0.1.0"
