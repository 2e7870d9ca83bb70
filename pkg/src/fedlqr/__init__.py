"""Federated model-free LQR policy optimization with scalar-projection uplink.

A desk-scale simulator for fleets of similar linear plants learning one
shared feedback gain: zeroth-order local gradient estimates, a one-scalar-
per-agent uplink codec with seeded direction regeneration, a full-gradient
baseline, and numerical checks of the descent, stability and convergence
theory.
"""

__version__ = "0.1.0"
