"""Quantum-trajectory simulation of linear and norm-preserving stochastic Schroedinger equations."""

__version__ = "0.1.0"
