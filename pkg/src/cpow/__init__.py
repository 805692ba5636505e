"""Collaborative proof-of-work: group mining with verified, threshold-controlled rewards."""
__version__ = "0.1.0"
