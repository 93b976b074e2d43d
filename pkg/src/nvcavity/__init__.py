"""Cavity QED of inhomogeneously broadened spin ensembles coupled to a
single resonator mode: level diagrams, transmission models, spectral
reconstruction and maser operating maps."""
from .core import SystemParams, ThermalBath, hz, mhz, to_mhz
from .levels import FieldConfig, ZeroFieldParams, level_table, transition_frequencies
from .oscillator import OscillatorSet, fit_avoided_crossing, steady_amplitude, transmission_map
from .resolvent import CouplingDensity, find_poles, level_shift, reconstruct_from_scans, transmission_gcc
from .maser import PumpedParams, emission_spectrum, maser_steady_state, operating_map

__version__ = "0.1.0"
