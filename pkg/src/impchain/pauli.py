"""Sparse Pauli-string operators with exact multiplication and commutation.

A Pauli string on L sites is stored in symplectic form as two bitmasks
``(x, z)``; the string is ``i^{|x & z|} X^x Z^z`` so that a site with both
bits set carries ``Y``.  Label strings list sites left to right, character
``j`` is site ``j``.  Operators are linear combinations of strings with
complex coefficients and are treated as immutable values.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse

from .basis import SpinBasis
from .errors import SectorError, ValidationError

DROP_TOL = 1e-14

_LETTER_BITS = {"I": (0, 0), "X": (1, 0), "Y": (1, 1), "Z": (0, 1)}
_PHASES = np.array([1, 1j, -1, -1j], dtype=np.complex128)


def _popcount(a):
    return np.bitwise_count(a).astype(np.int64)


def parse_label(label: str) -> tuple[int, int]:
    """``"XIZ"`` -> ``(x, z)`` bitmasks."""
    x = z = 0
    for j, ch in enumerate(label.upper()):
        try:
            bx, bz = _LETTER_BITS[ch]
        except KeyError:
            raise ValidationError(f"bad Pauli letter {ch!r} in {label!r}") from None
        x |= bx << j
        z |= bz << j
    return x, z


def format_label(x: int, z: int, L: int) -> str:
    out = []
    for j in range(L):
        bx, bz = (x >> j) & 1, (z >> j) & 1
        out.append("IZXY"[bx * 2 + bz])
    return "".join(out)


def _product_phase(x1, z1, x2, z2):
    """Phase exponent (mod 4) and result masks of string products."""
    x3 = x1 ^ x2
    z3 = z1 ^ z2
    e = _popcount(x1 & z1) + _popcount(x2 & z2) + 2 * _popcount(z1 & x2) - _popcount(x3 & z3)
    return np.mod(e, 4), x3, z3


def pauli_product(a: str, b: str) -> tuple[complex, str]:
    """Product of two Pauli strings given as labels.

    >>> pauli_product("X", "Y")
    (1j, 'Z')
    """
    if len(a) != len(b):
        raise ValidationError(f"length mismatch: {len(a)} vs {len(b)}")
    x1, z1 = parse_label(a)
    x2, z2 = parse_label(b)
    e, x3, z3 = _product_phase(
        np.array([x1], np.uint64), np.array([z1], np.uint64),
        np.array([x2], np.uint64), np.array([z2], np.uint64),
    )
    return complex(_PHASES[e[0]]), format_label(int(x3[0]), int(z3[0]), len(a))


class PauliOperator:
    """Linear combination of Pauli strings on ``L`` sites.

    Parameters
    ----------
    L : int
        Number of sites (at most 32).
    x, z : array_like of uint64
        Bitmasks of the strings.
    coeffs : array_like of complex
        Coefficients; duplicates are merged and terms below ``tol`` dropped.
    """

    __slots__ = ("L", "x", "z", "coeffs", "tol")

    def __init__(self, L, x=(), z=(), coeffs=(), *, tol=DROP_TOL, _canonical=False):
        if L > 32:
            raise ValidationError("PauliOperator supports at most 32 sites")
        self.L = int(L)
        self.tol = tol
        x = np.asarray(x, dtype=np.uint64).ravel()
        z = np.asarray(z, dtype=np.uint64).ravel()
        c = np.asarray(coeffs, dtype=np.complex128).ravel()
        if not (len(x) == len(z) == len(c)):
            raise ValidationError("x, z and coeffs must have equal length")
        if not _canonical:
            x, z, c = _merge(self.L, x, z, c, tol)
        self.x, self.z, self.coeffs = x, z, c
        for arr in (self.x, self.z, self.coeffs):
            arr.flags.writeable = False

    # construction helpers -------------------------------------------------

    @classmethod
    def zero(cls, L):
        return cls(L)

    @classmethod
    def identity(cls, L, coeff=1.0):
        return cls(L, [0], [0], [coeff])

    @classmethod
    def from_terms(cls, L, terms):
        """Build from ``{label: coeff}`` or an iterable of ``(label, coeff)``."""
        items = terms.items() if isinstance(terms, dict) else terms
        xs, zs, cs = [], [], []
        for label, coeff in items:
            if len(label) != L:
                raise ValidationError(f"label {label!r} has length != L={L}")
            x, z = parse_label(label)
            xs.append(x)
            zs.append(z)
            cs.append(coeff)
        return cls(L, xs, zs, cs)

    @classmethod
    def site(cls, L, site, letter, coeff=1.0):
        """Single-site Pauli ``letter`` on ``site`` times ``coeff``."""
        if not 0 <= site < L:
            raise ValidationError(f"site {site} out of range for L={L}")
        bx, bz = _LETTER_BITS[letter.upper()]
        return cls(L, [bx << site], [bz << site], [coeff])

    @classmethod
    def spin(cls, L, site, axis):
        """Spin operator ``S^axis_site = sigma^axis_site / 2``."""
        return cls.site(L, site, axis, 0.5)

    # basic protocol ---------------------------------------------------------

    def __len__(self):
        return len(self.coeffs)

    @property
    def n_strings(self):
        return len(self.coeffs)

    def terms(self) -> dict[str, complex]:
        return {
            format_label(int(x), int(z), self.L): complex(c)
            for x, z, c in zip(self.x, self.z, self.coeffs)
        }

    def __repr__(self):
        items = list(self.terms().items())
        shown = ", ".join(f"{k}: {v:.6g}" for k, v in items[:6])
        more = f", ... ({len(items)} terms)" if len(items) > 6 else ""
        return f"PauliOperator(L={self.L}, {{{shown}{more}}})"

    def _check(self, other):
        if not isinstance(other, PauliOperator):
            raise TypeError(f"expected PauliOperator, got {type(other).__name__}")
        if other.L != self.L:
            raise ValidationError(f"length mismatch: L={self.L} vs L={other.L}")

    def __add__(self, other):
        if isinstance(other, (int, float, complex)):
            other = PauliOperator.identity(self.L, other)
        self._check(other)
        return PauliOperator(
            self.L,
            np.concatenate([self.x, other.x]),
            np.concatenate([self.z, other.z]),
            np.concatenate([self.coeffs, other.coeffs]),
            tol=self.tol,
        )

    __radd__ = __add__

    def __neg__(self):
        return self.scale(-1.0)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def scale(self, factor):
        if factor == 0:
            return PauliOperator(self.L, tol=self.tol)
        c = self.coeffs * factor
        keep = np.abs(c) >= self.tol
        return PauliOperator(self.L, self.x[keep], self.z[keep], c[keep], tol=self.tol, _canonical=True)

    def __mul__(self, other):
        if isinstance(other, PauliOperator):
            return multiply(self, other)
        return self.scale(other)

    def __rmul__(self, other):
        return self.scale(other)

    def __matmul__(self, other):
        return multiply(self, other)

    def __truediv__(self, other):
        return self.scale(1.0 / other)

    def dagger(self):
        return PauliOperator(self.L, self.x, self.z, np.conj(self.coeffs), tol=self.tol, _canonical=True)

    def is_hermitian(self, tol=1e-12):
        return bool(np.all(np.abs(self.coeffs.imag) <= tol * max(1.0, np.abs(self.coeffs).max(initial=0))))

    def require_hermitian(self, tol=1e-12):
        if not self.is_hermitian(tol):
            raise ValidationError("operator is not Hermitian (complex string coefficients)")
        return self

    def coefficient(self, label: str) -> complex:
        x, z = parse_label(label)
        hit = np.nonzero((self.x == np.uint64(x)) & (self.z == np.uint64(z)))[0]
        return complex(self.coeffs[hit[0]]) if len(hit) else 0j

    def max_abs(self):
        return float(np.abs(self.coeffs).max(initial=0.0))

    def support(self) -> int:
        """Bitmask of sites acted on non-trivially by some string."""
        return int(np.bitwise_or.reduce(self.x | self.z, initial=np.uint64(0)))

    def conjugate_by_z(self, site):
        """``sigma^z_site A sigma^z_site``: strings with X or Y on ``site`` flip sign."""
        flip = ((self.x >> np.uint64(site)) & np.uint64(1)).astype(bool)
        c = np.where(flip, -self.coeffs, self.coeffs)
        return PauliOperator(self.L, self.x, self.z, c, tol=self.tol, _canonical=True)

    def allclose(self, other, atol=1e-12):
        self._check(other)
        return (self - other).max_abs() <= atol


def _merge(L, x, z, c, tol):
    if len(c) == 0:
        return x, z, c
    key = (x << np.uint64(L)) | z if L <= 32 else None
    uniq, inv = np.unique(key, return_inverse=True)
    re = np.bincount(inv, weights=c.real, minlength=len(uniq))
    im = np.bincount(inv, weights=c.imag, minlength=len(uniq))
    merged = re + 1j * im
    keep = np.abs(merged) >= tol
    uniq = uniq[keep]
    mask = np.uint64((1 << L) - 1)
    return uniq >> np.uint64(L), uniq & mask, merged[keep]


def _pairwise(a: PauliOperator, b: PauliOperator, commutator_only: bool):
    """Products of all term pairs; loops over the shorter operator."""
    swap = len(b) > len(a)
    long_, short = (b, a) if swap else (a, b)
    xs, zs, cs = [], [], []
    for xs_, zs_, cs_ in zip(short.x, short.z, short.coeffs):
        if swap:  # short is the left factor
            x1, z1, x2, z2 = xs_, zs_, long_.x, long_.z
        else:
            x1, z1, x2, z2 = long_.x, long_.z, xs_, zs_
        if commutator_only:
            anti = (_popcount(x1 & z2) + _popcount(z1 & x2)) & 1
            sel = anti.astype(bool)
            if not sel.any():
                continue
            if swap:
                x2, z2 = x2[sel], z2[sel]
            else:
                x1, z1 = x1[sel], z1[sel]
            lc = long_.coeffs[sel]
            factor = 2.0
        else:
            lc = long_.coeffs
            factor = 1.0
        e, x3, z3 = _product_phase(x1, z1, x2, z2)
        xs.append(np.broadcast_to(x3, lc.shape))
        zs.append(np.broadcast_to(z3, lc.shape))
        cs.append(factor * cs_ * lc * _PHASES[e])
    if not cs:
        return PauliOperator(a.L, tol=a.tol)
    return PauliOperator(a.L, np.concatenate(xs), np.concatenate(zs), np.concatenate(cs), tol=a.tol)


def multiply(a: PauliOperator, b: PauliOperator) -> PauliOperator:
    """Operator product ``a @ b``."""
    a._check(b)
    return _pairwise(a, b, commutator_only=False)


def commutator(a: PauliOperator, b: PauliOperator) -> PauliOperator:
    """``[a, b] = ab - ba``; only anticommuting string pairs contribute (2ab)."""
    a._check(b)
    return _pairwise(a, b, commutator_only=True)


def anticommutator(a: PauliOperator, b: PauliOperator) -> PauliOperator:
    return multiply(a, b) + multiply(b, a)


def inner(a: PauliOperator, b: PauliOperator) -> complex:
    """Hilbert-Schmidt product ``Tr(a^dagger b) / 2^L``."""
    a._check(b)
    return _overlap(a, b, conj=True)


def _overlap(a, b, conj):
    ka = (a.x << np.uint64(a.L)) | a.z
    kb = (b.x << np.uint64(b.L)) | b.z
    common, ia, ib = np.intersect1d(ka, kb, assume_unique=True, return_indices=True)
    ca = np.conj(a.coeffs[ia]) if conj else a.coeffs[ia]
    return complex(np.sum(ca * b.coeffs[ib]))


def norm_sq(a: PauliOperator, *, assert_hermitian=False) -> float:
    """``Tr(a^dagger a) / 2^L``, i.e. the sum of squared coefficient moduli."""
    if assert_hermitian:
        a.require_hermitian()
    return float(np.sum(np.abs(a.coeffs) ** 2))


def trace_product(a: PauliOperator, b: PauliOperator, *, assert_hermitian=False) -> float:
    """``Tr(a b) / 2^L`` for Hermitian ``a``, ``b`` (real)."""
    a._check(b)
    if assert_hermitian:
        a.require_hermitian()
        b.require_hermitian()
    return _overlap(a, b, conj=False).real


def trace(a: PauliOperator) -> complex:
    """Normalized trace ``Tr(a) / 2^L``: the identity coefficient."""
    hit = np.nonzero((a.x == 0) & (a.z == 0))[0]
    return complex(a.coeffs[hit[0]]) if len(hit) else 0j


def _matrix_entries(op, basis, basis_in, tol, project):
    if not isinstance(op, PauliOperator):
        op = op.to_pauli()
    basis_in = basis if basis_in is None else basis_in
    if op.L != basis.L or basis_in.L != basis.L:
        raise ValidationError("operator and basis have different L")
    s = basis_in.states
    cols = np.arange(len(s))
    rows_all, cols_all, vals_all = [], [], []
    for x, z, c in zip(op.x, op.z, op.coeffs):
        target = s ^ x
        sign = 1 - 2 * (_popcount(z & ~s) & 1)  # bit 1 = spin up = +1 of Z
        phase = _PHASES[int(_popcount(np.array([x & z], np.uint64))[0]) % 4]
        rows_all.append(target)
        cols_all.append(cols)
        vals_all.append(c * phase * sign)
    if not vals_all:
        return basis_in, np.empty(0, int), np.empty(0, int), np.empty(0)
    targets = np.concatenate(rows_all)
    cidx = np.concatenate(cols_all)
    vals = np.concatenate(vals_all)
    ridx = basis.index(targets)
    inside = ridx >= 0
    if not inside.all() and not project:
        leak_t, leak_c, leak_v = targets[~inside], cidx[~inside], vals[~inside]
        key = leak_t.astype(np.uint64) * np.uint64(basis_in.dim) + leak_c.astype(np.uint64)
        _, inv = np.unique(key, return_inverse=True)
        re = np.bincount(inv, weights=leak_v.real)
        im = np.bincount(inv, weights=leak_v.imag)
        scale = max(1.0, np.abs(vals).max())
        if np.max(np.hypot(re, im)) > tol * scale:
            raise SectorError("operator connects the basis to states outside its sector")
    vals = vals[inside]
    if np.abs(vals.imag).max(initial=0.0) <= tol * max(1.0, np.abs(vals.real).max(initial=0.0)):
        vals = vals.real.copy()
    return basis_in, ridx[inside], cidx[inside], vals


def to_dense(op, basis: SpinBasis, basis_in: SpinBasis | None = None, *, tol=1e-12, project=False):
    """Matrix elements ``<s'|op|s>`` with rows in ``basis`` and columns in ``basis_in``.

    ``op`` may be a :class:`PauliOperator` or anything with a ``to_pauli()``
    method (e.g. a Hamiltonian spec).  Amplitude leaking out of the row basis
    must cancel between strings, otherwise :class:`SectorError` is raised,
    unless ``project`` asks for the projected block (e.g. one sector pair of
    a magnetization-changing operator).  Returns a real array when all
    imaginary parts vanish.
    """
    basis_in, r, c, v = _matrix_entries(op, basis, basis_in, tol, project)
    out = np.zeros((basis.dim, basis_in.dim), dtype=v.dtype if len(v) else float)
    np.add.at(out, (r, c), v)
    if np.iscomplexobj(out) and np.abs(out.imag).max(initial=0.0) <= tol * max(1.0, np.abs(out.real).max(initial=0.0)):
        return out.real.copy()
    return out


def to_sparse(op, basis: SpinBasis, basis_in: SpinBasis | None = None, *, tol=1e-12, project=False):
    """Same as :func:`to_dense` as a ``scipy.sparse`` CSR matrix."""
    basis_in, r, c, v = _matrix_entries(op, basis, basis_in, tol, project)
    M = scipy.sparse.coo_matrix((v, (r, c)), shape=(basis.dim, basis_in.dim)).tocsr()
    M.sum_duplicates()
    M.eliminate_zeros()
    return M


def from_dense(matrix, L: int, *, tol=DROP_TOL) -> PauliOperator:
    """Pauli expansion of a full ``2^L x 2^L`` matrix (small L oracle)."""
    matrix = np.asarray(matrix)
    if matrix.shape != (2**L, 2**L):
        raise ValidationError("from_dense needs a matrix on the full Hilbert space")
    states = np.arange(2**L, dtype=np.uint64)
    xs, zs, cs = [], [], []
    for x in range(2**L):
        target = states ^ np.uint64(x)
        amp = matrix[target.astype(np.int64), states.astype(np.int64)]
        for z in range(2**L):
            sign = 1 - 2 * (_popcount(np.uint64(z) & ~states) & 1)
            phase = _PHASES[int(bin(x & z).count("1")) % 4]
            c = np.sum(amp * sign) / (phase * 2**L)
            if abs(c) >= tol:
                xs.append(x)
                zs.append(z)
                cs.append(c)
    return PauliOperator(L, xs, zs, cs, tol=tol)


def coefficient_matrix(ops, keys=None):
    """Stack operators as rows of a coefficient matrix over a shared string index.

    Returns
    -------
    keys : ndarray of uint64
        Sorted string keys ``(x << L) | z`` (the union over ``ops`` unless given).
    M : ndarray, shape (len(ops), len(keys))
        ``M[i, j]`` is the coefficient of string ``keys[j]`` in ``ops[i]``;
        rows are Hilbert-Schmidt vectors (``inner(a, b) = conj(M[a]) @ M[b]``).
    """
    if not ops:
        return np.empty(0, dtype=np.uint64), np.empty((0, 0), dtype=complex)
    L = ops[0].L
    shift = np.uint64(L)
    own = [(op.x << shift) | op.z for op in ops]
    if keys is None:
        keys = np.unique(np.concatenate(own))
    M = np.zeros((len(ops), len(keys)), dtype=complex)
    for i, (op, k) in enumerate(zip(ops, own)):
        if len(k) == 0:
            continue
        pos = np.searchsorted(keys, k)
        if np.any(pos >= len(keys)) or np.any(keys[np.minimum(pos, len(keys) - 1)] != k):
            raise ValidationError("operator has strings outside the supplied key set")
        M[i, pos] = op.coeffs
    return keys, M


def from_coefficients(L: int, keys, coeffs, tol=DROP_TOL) -> PauliOperator:
    """Inverse of :func:`coefficient_matrix` for a single row."""
    keys = np.asarray(keys, dtype=np.uint64)
    mask = np.uint64((1 << L) - 1)
    c = np.asarray(coeffs, dtype=complex)
    keep = np.abs(c) >= tol
    return PauliOperator(L, keys[keep] >> np.uint64(L), keys[keep] & mask, c[keep], tol=tol, _canonical=True)
