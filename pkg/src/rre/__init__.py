"""Reinforced recurrent encoder: an RNN forecaster steered per step by a PPO agent."""

__version__ = "0.1.0"
