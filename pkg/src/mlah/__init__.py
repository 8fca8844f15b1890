"""Adversarial-RL laboratory: MLAH hierarchy, PPO, attacks and bias analysis."""

__version__ = "0.1.0"
