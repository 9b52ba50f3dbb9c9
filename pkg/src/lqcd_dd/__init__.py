"""Domain-decomposition solver stack for Wilson-Clover lattice QCD at desk scale."""

__version__ = "0.1.0"
