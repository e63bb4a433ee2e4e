"""semcom: a desk-scale laboratory for semantic communication.

Distributed infomax transceivers trained end to end through an AWGN channel,
exact information-theoretic oracles on enumerable discrete chains, and
classic digital / analog-autoencoder baselines for comparison.
"""

__version__ = "0.1.0"
