"""Packet-level simulator for intra- and inter-datacenter congestion control and reliability."""

from .config import ScenarioConfig, from_dict, load_file, validate
from .network import Simulation, simulate

__all__ = ["ScenarioConfig", "Simulation", "from_dict", "load_file", "simulate", "validate"]
