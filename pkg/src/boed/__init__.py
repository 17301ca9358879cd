"""Amortized sequential Bayesian experimental design toolkit.

Trains design policies with off-policy ensemble actor-critic RL on a
hidden-parameter MDP whose dense reward factorizes the contrastive
information-gain bound, evaluates them with matching lower/upper bounds, and
serves them through a CLI and a live session HTTP API.
"""

__version__ = "0.1.0"
