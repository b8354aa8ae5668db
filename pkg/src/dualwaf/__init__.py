"""Dual-layer machine-learning web application firewall."""

__version__ = "0.1.0"
