"""Simulation and inference for Hawkes processes with variable length memory."""

__version__ = "0.1.0"
