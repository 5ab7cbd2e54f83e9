"""Decentralized differentially private without-replacement SGD."""

__version__ = "0.1.0"
