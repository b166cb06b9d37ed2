"""Secure transmit-power minimization for NOMA cognitive radio networks with SWIPT."""

__version__ = "0.1.0"
