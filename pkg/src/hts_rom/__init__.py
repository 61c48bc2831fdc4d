"""Reduced-order models of AC losses in thin superconducting tapes.

Full-order integral-equation model (edge currents and face potentials),
structure-preserving POD, DEIM hyperreduction and a structured neural ODE
whose only learned part is the reduced resistance matrix.
"""
__version__ = "0.1.0"
