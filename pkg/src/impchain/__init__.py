"""Disordered XXZ chains with strong impurities: exact diagonalization, probes and LIOMs."""

__version__ = "0.1.0"

from .errors import CapacityError, ConvergenceError, ImpchainError, SectorError, ValidationError  # noqa: F401
