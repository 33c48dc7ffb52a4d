"""Robust MPC for linear systems with polytopic model uncertainty and bounded
additive disturbances, via system level synthesis with a jointly optimized
uncertainty over-approximation filter."""

__version__ = "0.1.0"
