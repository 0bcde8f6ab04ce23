"""Hamilton-Jacobi laboratory: quantized minimal-coupling dynamics, hydrodynamic
fields, sign-carrying particle ensembles and residual checks on a periodic 1-D grid."""

__version__ = "0.1.0"
