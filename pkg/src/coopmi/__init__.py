"""Decentralized multi-agent PPO with a mutual-information social critic on the Commons Game."""

__version__ = "0.1.0"
