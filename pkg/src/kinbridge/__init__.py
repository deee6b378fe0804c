"""Numerical bridge between N-body Hamiltonian dynamics and the Boltzmann equation."""

__version__ = "0.1.0"
