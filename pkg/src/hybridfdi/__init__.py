"""Hybrid fault detection and isolation for a turbofan engine model.

Calibrated health parameters from an unscented Kalman filter are combined
with measured sensors and used by one-class detectors (autoencoder,
variational autoencoder, hierarchical extreme learning machine and a
one-class SVM baseline) to flag and isolate component faults.
"""

__version__ = "0.1.0"
