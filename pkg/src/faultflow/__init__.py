"""Single-phase Darcy flow through a faulted domain with a hybrid finite volume scheme."""

__version__ = "0.1.0"
