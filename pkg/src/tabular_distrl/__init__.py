"""Tabular distributional RL lab: RiverSwim environments, PSRL-PI / IQQL / DAIF
agents, contraction certificates and a multi-seed experiment harness."""

__version__ = "0.1.0"
