class StructuralError(ValueError):
    """Operands have incompatible shapes, moduli, orders or widths."""


class ConfigError(ValueError):
    """A run configuration failed validation."""
