"""Carry-chain fault attack simulator for masked lattice KEM decoders."""
from .errors import ConfigError, StructuralError
from .params import SCHEMES, SchemeParams, get_params

__all__ = ["ConfigError", "StructuralError", "SCHEMES", "SchemeParams", "get_params"]
__version__ = "0.1.0"
