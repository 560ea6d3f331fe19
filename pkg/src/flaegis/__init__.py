"""Federated-learning poisoning lab: FLAegis defense, attacks, baselines, simulator."""

__version__ = "0.1.0"

from flaegis.core import (  # noqa: F401
    ClientUpdate,
    ServerView,
    Verdict,
    derive_seed,
    flatten,
    unflatten,
)
