"""p-alignment dynamics: agent and 1D hydrodynamic solvers with decay-law monitors."""

__version__ = "0.1.0"
