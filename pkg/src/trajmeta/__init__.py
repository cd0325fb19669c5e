"""Behavioral analysis of software-engineering agent trajectories.

Canonicalizes heterogeneous trajectory logs, extracts behavioral features,
control-flow motif features and binary patterns, and runs a
per-configuration random-effects meta-analysis with moderator diagnostics.
"""

__version__ = "0.1.0"
