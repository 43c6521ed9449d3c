"""Classical-verifier zero-knowledge arguments for QMA, at desk scale.

All lattice parameters in this package are toy-sized and offer no security.
"""

__version__ = "0.1.0"
