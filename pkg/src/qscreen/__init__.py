"""Quantum-embedding workbench for desk-scale ligand-based virtual screening."""

__version__ = "0.1.0"
