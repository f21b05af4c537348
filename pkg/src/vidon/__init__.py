"""Variable-input operator networks for PDE surrogates.

A set-encoder operator-learning architecture whose inputs are
permutation-invariant collections of (location, value) sensor readings of
varying size, together with the data generators (Darcy flow, Allen-Cahn
travelling waves, 2-d Navier-Stokes), sensor-layout samplers, training
harness, and verification suites needed to exercise it end to end.
"""

__version__ = "0.1.0"
