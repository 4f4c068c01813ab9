"""Spin-dependent recombination simulator.

Pulsed recombination echoes on a conduction-electron / dangling-bond pair
and an exchange-gated readout of a 31P nuclear spin.
"""

from .config import ConfigError, default_config, parse_config
from .hamiltonians import DriveParams, PairParams, mhz
from .propagator import KsmRates, evolve, steady_state
from .readout import ReadoutParams, photon_budget, readout_fidelity
from .sequences import echo_scan, rabi_scan, run_sequence

__all__ = [
    "ConfigError",
    "DriveParams",
    "KsmRates",
    "PairParams",
    "ReadoutParams",
    "default_config",
    "echo_scan",
    "evolve",
    "mhz",
    "parse_config",
    "photon_budget",
    "rabi_scan",
    "readout_fidelity",
    "run_sequence",
    "steady_state",
]
