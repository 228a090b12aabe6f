"""Topology-change simulation, prediction and cost analysis for 6G sub-networks."""

__version__ = "0.1.0"
