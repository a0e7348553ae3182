"""Quadrature compressive sampling and compressive pulse-Doppler processing."""
__version__ = "0.1.0"
