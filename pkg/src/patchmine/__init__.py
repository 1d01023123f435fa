"""Discriminative visual element discovery from sparse patch activations.

Pipeline stages: sparsified patch features become transactions, frequent
and positively-confident itemsets are mined from them, matching patches
are grouped into elements, linear detectors are trained against shared
background statistics, overlapping detectors are merged, and images are
encoded by spatially max-pooled detector responses for classification.
"""

__version__ = "0.1.0"
