"""Diagonalization, scattering and propagator diagnostics for Klein-Gordon fields on a periodic grid."""

__version__ = "0.1.0"
