"""Simulation of RIS-aided terahertz multi-user MIMO with UWB-assisted hybrid beamforming."""

__version__ = "0.1.0"
