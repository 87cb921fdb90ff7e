"""Bit-encoded computational basis of an L-site spin-1/2 chain.

Bit ``j`` of a configuration is site ``j`` (0-based); a set bit means spin up.
States are kept in ascending integer order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import comb

import numpy as np

from .errors import ValidationError


def _as_half_integer(sector) -> Fraction:
    frac = Fraction(sector).limit_denominator(2)
    if abs(float(frac) - float(sector)) > 1e-12:
        raise ValidationError(f"sector {sector!r} is not a half-integer")
    return frac


@dataclass(frozen=True)
class SpinBasis:
    """Computational basis, optionally restricted to fixed total S^z.

    Attributes
    ----------
    L : int
        Number of sites.
    sector : Fraction or None
        Total magnetization ``S^z_tot`` of every state, ``None`` for the full space.
    states : ndarray of uint64
        Configurations in ascending order.
    """

    L: int
    sector: Fraction | None
    states: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return len(self.states)

    @property
    def n_up(self) -> int | None:
        if self.sector is None:
            return None
        return int(self.sector + Fraction(self.L, 2))

    def index(self, configs) -> np.ndarray:
        """Ordinal of each configuration, -1 where it is not in the basis."""
        configs = np.asarray(configs, dtype=np.uint64)
        pos = np.searchsorted(self.states, configs)
        pos = np.minimum(pos, self.dim - 1)
        found = self.states[pos] == configs
        return np.where(found, pos, -1).astype(np.int64)

    def contains(self, configs) -> np.ndarray:
        return self.index(configs) >= 0

    def sz_values(self, site: int) -> np.ndarray:
        """Eigenvalue of S^z_site (+-1/2) on every basis state."""
        bit = (self.states >> np.uint64(site)) & np.uint64(1)
        return bit.astype(np.float64) - 0.5

    def __len__(self):
        return self.dim


def _configs_with_popcount(L: int, n_up: int) -> np.ndarray:
    all_states = np.arange(2**L, dtype=np.uint64)
    return all_states[np.bitwise_count(all_states) == n_up]


def build_basis(L: int, sector=None) -> SpinBasis:
    """Build the basis of an L-site chain, optionally in one S^z_tot sector.

    Raises
    ------
    ValidationError
        If ``L < 1``, ``|sector| > L/2`` or the sector has the wrong parity
        (it must differ from ``L/2`` by an integer).
    """
    if int(L) != L or L < 1:
        raise ValidationError(f"L must be a positive integer, got {L!r}")
    L = int(L)
    if L > 30:
        raise ValidationError(f"L={L} is too large for a bit-enumerated basis")
    if sector is None:
        return SpinBasis(L, None, np.arange(2**L, dtype=np.uint64))
    frac = _as_half_integer(sector)
    if abs(frac) > Fraction(L, 2):
        raise ValidationError(f"|sector| = {abs(float(frac))} exceeds L/2 = {L / 2}")
    n_up = frac + Fraction(L, 2)
    if n_up.denominator != 1:
        raise ValidationError(
            f"sector {float(frac)} incompatible with L={L}: S^z_tot must be "
            f"{'integer' if L % 2 == 0 else 'half-odd-integer'} for this L"
        )
    states = _configs_with_popcount(L, int(n_up))
    assert len(states) == comb(L, int(n_up))
    return SpinBasis(L, frac, states)


def all_sectors(L: int) -> list[Fraction]:
    """All magnetization quantum numbers of an L-site chain, ascending."""
    return [Fraction(2 * k - L, 2) for k in range(L + 1)]


def default_sector(L: int) -> Fraction:
    """Largest sector: 0 for even L, +1/2 for odd L."""
    return Fraction(L % 2, 2)
