"""Simulation and learning toolkit for reinforcement-learning market makers."""

__version__ = "0.1.0"
