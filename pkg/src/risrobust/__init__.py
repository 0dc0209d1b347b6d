"""Robust RIS-assisted multi-user MISO beamforming under imperfect cascaded CSI."""

__version__ = "0.1.0"
