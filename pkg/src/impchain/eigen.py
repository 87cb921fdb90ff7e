"""Full dense symmetric eigendecomposition of sector blocks.

LAPACK does the work: ``dsyev`` (Householder tridiagonalization followed by
implicit QL/QR) when only eigenvalues are needed, ``dsyevd`` (same reduction,
divide and conquer on the tridiagonal) when eigenvectors are needed.
"""
from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.linalg

from .basis import SpinBasis, all_sectors, build_basis
from .errors import CapacityError, ConvergenceError, ValidationError

MAX_DIM = 20000
SYMMETRY_RTOL = 1e-12


@dataclass(frozen=True)
class EigenSystem:
    """Ascending eigenvalues and (optionally) column eigenvectors of one block."""

    values: np.ndarray
    vectors: np.ndarray | None = field(default=None, repr=False)
    basis: SpinBasis | None = field(default=None, repr=False)
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def dim(self):
        return len(self.values)

    @property
    def sector(self):
        return None if self.basis is None else self.basis.sector

    def require_vectors(self):
        if self.vectors is None:
            raise ValidationError("eigenvectors were not computed for this EigenSystem")
        return self.vectors

    def to_eigenbasis(self, op: np.ndarray, other: "EigenSystem | None" = None) -> np.ndarray:
        """``V_self^T op V_other`` (matrix elements between eigenstates)."""
        left = self.require_vectors()
        right = left if other is None else other.require_vectors()
        return left.T @ (op @ right)

    def residual(self, M) -> float:
        """``max_n ||M v_n - E_n v_n||``."""
        V = self.require_vectors()
        return float(np.linalg.norm(M @ V - V * self.values, axis=0).max())

    def orthogonality_error(self) -> float:
        V = self.require_vectors()
        return float(np.abs(V.T @ V - np.eye(V.shape[1])).max())


def check_symmetric(M, rtol=SYMMETRY_RTOL):
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {M.shape}")
    scale = max(1.0, float(np.abs(M).max(initial=0.0)))
    asym = float(np.abs(M - M.conj().T).max(initial=0.0))
    if asym > rtol * scale:
        raise ValidationError(f"matrix is not symmetric (max asymmetry {asym:.3g})")


def eig_full(M, want_vectors: bool = True, *, basis=None, meta=None, max_dim=MAX_DIM,
             check: bool = True) -> EigenSystem:
    """All eigenvalues (and eigenvectors) of a real symmetric matrix.

    Raises
    ------
    ValidationError
        Asymmetric input.
    CapacityError
        Dimension above ``max_dim``.
    ConvergenceError
        LAPACK failed; ``index`` carries the offending index it reported.
    """
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {M.shape}")
    n = M.shape[0]
    if n > max_dim:
        raise CapacityError(f"dimension {n} exceeds the configured limit {max_dim}")
    if check:
        check_symmetric(M)
    if n == 0:
        return EigenSystem(np.empty(0), np.empty((0, 0)) if want_vectors else None, basis, meta or {})
    try:
        if want_vectors:
            w, v = scipy.linalg.eigh(M, driver="evd", check_finite=check)
        else:
            w = scipy.linalg.eigh(M, eigvals_only=True, driver="ev", check_finite=check)
            v = None
    except np.linalg.LinAlgError as exc:
        idx = None
        for tok in str(exc).replace(",", " ").split():
            if tok.isdigit():
                idx = int(tok)
                break
        raise ConvergenceError(f"eigensolver did not converge: {exc}", index=idx) from exc
    return EigenSystem(w, v, basis, dict(meta or {}))


def eig_spec(spec, sector=None, want_vectors: bool = True, **kw) -> EigenSystem:
    """Diagonalize a Hamiltonian spec in one magnetization sector."""
    basis = build_basis(spec.L, sector)
    max_dim = kw.get("max_dim", MAX_DIM)
    if basis.dim > max_dim:
        raise CapacityError(f"dimension {basis.dim} exceeds the configured limit {max_dim}")
    M = spec.dense(basis)
    meta = {"spec_hash": spec.spec_hash(), "L": spec.L, "sector": None if sector is None else float(sector)}
    return eig_full(M, want_vectors, basis=basis, meta=meta, **kw)


def eigvals_spec(spec, sector=None) -> np.ndarray:
    return eig_spec(spec, sector, want_vectors=False).values


def eig_all_sectors(spec, want_vectors: bool = True, sectors=None, **kw) -> dict:
    """``{sector: EigenSystem}`` for every (or the listed) S^z_tot sector."""
    if not spec.conserves_sz():
        raise ValidationError("spec does not conserve total S^z")
    sectors = all_sectors(spec.L) if sectors is None else [Fraction(s) for s in sectors]
    return {s: eig_spec(spec, s, want_vectors, **kw) for s in sectors}


# binary cache format ------------------------------------------------------------
#
# header (little endian):
#   8s  magic  b"IMPEIGv1"
#   I   format version
#   I   L
#   i   2 * sector  (NO_SECTOR when unrestricted)
#   Q   dimension
#   B   has_vectors
#   32s spec hash (raw sha256)
#   32s sha256 of the payload
# payload: values (float64 LE), then vectors column-major (float64 LE)

MAGIC = b"IMPEIGv1"
CACHE_VERSION = 1
NO_SECTOR = -(2**31)
_HEADER = struct.Struct("<8sIIiQB32s32s")


class CacheFormatError(ValidationError):
    """Corrupt or unreadable eigen-cache file."""


def encode_eigensystem(es: EigenSystem, spec_hash: str) -> bytes:
    values = np.ascontiguousarray(es.values, dtype="<f8")
    payload = io.BytesIO()
    payload.write(values.tobytes())
    if es.vectors is not None:
        if np.iscomplexobj(es.vectors):
            raise ValidationError("only real eigenvectors can be cached")
        payload.write(np.asfortranarray(es.vectors, dtype="<f8").tobytes(order="F"))
    body = payload.getvalue()
    L = 0 if es.basis is None else es.basis.L
    sector = NO_SECTOR if es.sector is None else int(2 * es.sector)
    header = _HEADER.pack(MAGIC, CACHE_VERSION, L, sector, es.dim, es.vectors is not None,
                          bytes.fromhex(spec_hash), hashlib.sha256(body).digest())
    return header + body


def decode_eigensystem(blob: bytes, expect_hash: str | None = None) -> EigenSystem:
    if len(blob) < _HEADER.size:
        raise CacheFormatError("truncated header")
    magic, version, L, sector2, dim, has_vec, shash, psum = _HEADER.unpack_from(blob)
    if magic != MAGIC or version != CACHE_VERSION:
        raise CacheFormatError("bad magic or version")
    body = blob[_HEADER.size:]
    if hashlib.sha256(body).digest() != psum:
        raise CacheFormatError("payload checksum mismatch")
    if expect_hash is not None and shash.hex() != expect_hash:
        raise CacheFormatError("spec hash mismatch")
    expected = 8 * dim * (1 + (dim if has_vec else 0))
    if len(body) != expected:
        raise CacheFormatError("payload length mismatch")
    values = np.frombuffer(body, dtype="<f8", count=dim).astype(np.float64)
    vectors = None
    if has_vec:
        vectors = np.frombuffer(body, dtype="<f8", offset=8 * dim).reshape((dim, dim), order="F").astype(np.float64)
    sector = None if sector2 == NO_SECTOR else Fraction(sector2, 2)
    basis = build_basis(L, sector) if L >= 2 else None
    if basis is not None and basis.dim != dim:
        raise CacheFormatError("dimension does not match the stored sector")
    return EigenSystem(values, vectors, basis, {"spec_hash": shash.hex(), "L": L,
                                                "sector": None if sector is None else float(sector)})
