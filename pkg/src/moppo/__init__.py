"""Multi-objective PPO by decomposition with UCB-driven scalarisation search."""

__version__ = "0.1.0"
