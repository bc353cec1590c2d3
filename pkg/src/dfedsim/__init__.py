"""Deterministic simulator for decentralized federated optimization.

DFedADMM / DFedADMM-SAM plus the D-PSGD, DFedAvg, DFedAvgM and DFedSAM
baselines over explicit gossip topologies.
"""

__version__ = "0.1.0"
