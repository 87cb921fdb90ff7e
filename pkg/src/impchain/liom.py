"""Local integral of motion dressed from an impurity spin.

Setting: ``H = V Sz_0 + H_bulk + eps H_int`` where ``H_bulk`` commutes with
``Sz_0`` and ``H_int`` anticommutes with ``sigma^z_0``.  Everything is linear
in ``eps``.  With ``A_k = Ad^k_{H_bulk} H_int`` (``Ad_H X = [H, X]``) the
ladder stores the Hermitian operators ``R_k = i^k A_k``.

The perturbative charge of order ``N`` keeps ``2N + 1`` corrections::

    Q_N = Sz_0 + eps * sum_{k=0}^{2N} (-sigma^z_0)^k A_k / V^(k+1)

and its O(eps) residual is exactly ``-eps A_{2N+1} / V^(2N+1)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import CapacityError, ValidationError
from .models import HamiltonianSpec, build_bulk
from .pauli import (PauliOperator, coefficient_matrix, commutator, from_coefficients, inner, multiply,
                    norm_sq)

MAX_STRINGS = 50_000_000


@dataclass(frozen=True)
class CommutatorLadder:
    """Nested commutators ``R_k = i^k Ad^k_{H_bulk} H_int`` for ``k = 0..K``."""

    bulk: PauliOperator
    h_int: PauliOperator
    site: int
    R: tuple
    norms: np.ndarray
    string_counts: np.ndarray

    @property
    def depth(self):
        return len(self.R) - 1

    @property
    def L(self):
        return self.bulk.L

    def A(self, k) -> PauliOperator:
        """``Ad^k H_int = (-i)^k R_k``."""
        return self.R[k].scale((-1j) ** k)

    def norm_ratios(self) -> np.ndarray:
        """``||R_{k+1}|| / ||R_k||``."""
        n = np.sqrt(self.norms)
        return n[1:] / n[:-1]

    def sigma(self) -> PauliOperator:
        return PauliOperator.site(self.L, self.site, "Z")

    def trace_matrix(self) -> np.ndarray:
        """``Tr(R_j R_k) / 2^L`` for all stored pairs."""
        n = len(self.R)
        T = np.empty((n, n))
        for j in range(n):
            for k in range(j, n):
                T[j, k] = T[k, j] = inner(self.R[j], self.R[k]).real
        return T

    def moment(self, p: int) -> float:
        """Interference moment ``mu_p = <T_a, T_b>`` for any ``a + b = p``,
        ``T_k = (-sigma^z_0)^k A_k``.

        Even ``p = 2k`` gives ``||R_k||^2``; odd ``p = 2k + 1`` gives
        ``-<A_k, sigma A_{k+1}>``, which vanishes when the bulk spectrum is
        symmetric under a global spin flip but not for generic disorder.
        """
        if p % 2 == 0:
            return float(self.norms[p // 2])
        k = p // 2
        return float(-inner(self.A(k), multiply(self.sigma(), self.A(k + 1))).real)


def liom_hamiltonian(L: int, delta: float = 1.0, W: float = 0.25, seed=0, site: int = 0):
    """Bulk chain and impurity coupling for the LIOM construction.

    The impurity sits on ``site`` (0 = chain boundary).  ``H_bulk`` is the XXZ
    chain with every bond touching ``site`` removed and no field on ``site``;
    ``H_int`` is the flip-flop coupling of ``site`` to its neighbours.

    Returns
    -------
    (HamiltonianSpec, PauliOperator)
    """
    full = build_bulk(L, delta, W, seed)
    fields = list(full.fields)
    fields[site] = 0.0
    bonds = tuple(b for b in full.bonds if site not in b[:2])
    bulk = HamiltonianSpec(L, bonds, tuple(fields), (), dict(full.meta, kind="liom_bulk", liom_site=site))
    h_int = PauliOperator.zero(L)
    for n in (site - 1, site + 1):
        if 0 <= n < L:
            h_int = h_int + PauliOperator.spin(L, n, "X") @ PauliOperator.spin(L, site, "X") \
                + PauliOperator.spin(L, n, "Y") @ PauliOperator.spin(L, site, "Y")
    return bulk, h_int


def _as_pauli(op):
    return op if isinstance(op, PauliOperator) else op.to_pauli()


def build_ladder(h_bulk, h_int: PauliOperator, K: int, site: int = 0, max_strings: int = MAX_STRINGS,
                 tol: float = 1e-12) -> CommutatorLadder:
    """Nested commutators up to depth ``K``.

    Raises
    ------
    ValidationError
        ``K < 1``, ``[Sz_site, H_bulk] != 0`` or ``H_int`` not odd under
        ``sigma^z_site``.
    CapacityError
        A commutator exceeds ``max_strings`` Pauli strings.
    """
    if K < 1:
        raise ValidationError("ladder depth K must be >= 1")
    bulk = _as_pauli(h_bulk)
    L = bulk.L
    sz = PauliOperator.spin(L, site, "Z")
    scale = max(1.0, bulk.max_abs())
    if commutator(sz, bulk).max_abs() > tol * scale:
        raise ValidationError("H_bulk does not commute with Sz on the impurity site")
    if (h_int.conjugate_by_z(site) + h_int).max_abs() > tol * max(1.0, h_int.max_abs()):
        raise ValidationError("H_int is not odd under sigma^z on the impurity site")
    h_int.require_hermitian()
    R = [h_int]
    for k in range(K):
        nxt = commutator(bulk, R[-1]).scale(1j)
        if nxt.n_strings > max_strings:
            raise CapacityError(f"R_{k + 1} has {nxt.n_strings} strings (limit {max_strings})")
        # R_k is Hermitian up to rounding; keep the real part exactly
        R.append(PauliOperator(L, nxt.x, nxt.z, nxt.coeffs.real, tol=nxt.tol, _canonical=False))
    norms = np.array([norm_sq(r) for r in R])
    counts = np.array([r.n_strings for r in R])
    return CommutatorLadder(bulk, h_int, site, tuple(R), norms, counts)


# perturbative (Birkhoff) charge -----------------------------------------------


@dataclass
class BirkhoffCharge:
    """Conserved-charge approximation of order ``N``.

    ``norm`` is ``||Q_N||^2 / ||Sz_0||^2`` (leading term 1); ``residual`` is
    ``Gamma_N = ||i[Q_N, H]||`` at linear order in eps.
    """

    N: int
    eps: float
    V: float
    kind: str
    coeffs: np.ndarray
    norm: float
    residual: float
    operator: PauliOperator | None = field(default=None, repr=False)
    effective_N: int | None = None


def norm_coefficients(N: int) -> np.ndarray:
    """Multiplicities ``c_p = min(p, 4N - p) + 1`` of ``mu_p`` for ``p = 0..4N``."""
    K = 2 * N
    p = np.arange(2 * K + 1)
    return np.minimum(p, 2 * K - p) + 1


def charge_norm(ladder: CommutatorLadder, N: int, eps: float, V: float, *, odd_moments: bool = True) -> float:
    """Interference-exact ``||Q_N||^2 / ||Sz_0||^2`` from ladder moments.

    ``1 + 4 eps^2 sum_p c_p mu_p / V^(p+2)``; even ``p = 2k`` terms carry
    ``||R_k||^2`` with weights ``2k+1`` up to ``k = N`` and ``2(2N-k)+1``
    beyond.  ``odd_moments=False`` keeps only those even terms.
    """
    _need_depth(ladder, 2 * N)
    c = norm_coefficients(N)
    total = 0.0
    for p, cp in enumerate(c):
        if p % 2 and not odd_moments:
            continue
        total += cp * ladder.moment(p) / V ** (p + 2)
    return 1.0 + 4.0 * eps**2 * total


def _need_depth(ladder, depth):
    if ladder.depth < depth:
        raise ValidationError(f"ladder depth {ladder.depth} < required {depth}")


def perturbative_operator(ladder: CommutatorLadder, N: int, eps: float, V: float) -> PauliOperator:
    """Explicit ``Q_N`` as a Pauli operator."""
    _need_depth(ladder, 2 * N)
    L = ladder.L
    sigma = ladder.sigma()
    Q = PauliOperator.spin(L, ladder.site, "Z")
    for k in range(2 * N + 1):
        term = ladder.A(k)
        if k % 2:
            term = multiply(sigma, term).scale(-1.0)
        Q = Q + term.scale(eps / V ** (k + 1))
    return Q


def full_hamiltonian(ladder: CommutatorLadder, V: float, eps: float) -> PauliOperator:
    return ladder.bulk + PauliOperator.spin(ladder.L, ladder.site, "Z").scale(V) + ladder.h_int.scale(eps)


def birkhoff_charge(ladder: CommutatorLadder, N: int, eps: float, V: float, *, explicit: bool = True) -> BirkhoffCharge:
    """Perturbative charge of order ``N`` (needs ladder depth ``2N + 1``)."""
    _need_depth(ladder, 2 * N + 1)
    coeffs = np.array([1.0 / V ** (2 * q + 1) for q in range(N + 1)])
    residual = abs(eps) * np.sqrt(ladder.norms[2 * N + 1]) / abs(V) ** (2 * N + 1)
    norm = charge_norm(ladder, N, eps, V)
    op = perturbative_operator(ladder, N, eps, V) if explicit else None
    return BirkhoffCharge(N, eps, V, "perturbative", coeffs, norm, float(residual), op)


def direct_residual(Q: PauliOperator, H: PauliOperator) -> float:
    """``||i[Q, H]||`` evaluated exactly (includes O(eps^2) pieces)."""
    return float(np.sqrt(norm_sq(commutator(Q, H))))


def residual_curve(ladder: CommutatorLadder, V: float, eps: float, N_max: int):
    """``[(N, Gamma_N)]`` for ``N = 0..N_max`` plus the minimizing order.

    Returns
    -------
    curve : list of (int, float)
    N_argmin : int
    gamma_min : float
    """
    _need_depth(ladder, 2 * N_max + 1)
    curve = [(N, float(abs(eps) * np.sqrt(ladder.norms[2 * N + 1]) / abs(V) ** (2 * N + 1)))
             for N in range(N_max + 1)]
    N_argmin, gmin = min(curve, key=lambda t: t[1])
    return curve, N_argmin, gmin


def residual_curve_from_norms(norm_fn, V: float, eps: float, N_max: int, log: bool = False):
    """Same as :func:`residual_curve` with ``||R_k||^2 = norm_fn(k)`` supplied directly.

    With ``log=True`` the callable returns ``log ||R_k||^2``, which keeps
    asymptotic laws finite at large k.
    """
    def log_gamma(N):
        k = 2 * N + 1
        ln = norm_fn(k) if log else np.log(norm_fn(k))
        return np.log(abs(eps)) + 0.5 * ln - k * np.log(abs(V))

    curve = [(N, float(np.exp(log_gamma(N)))) for N in range(N_max + 1)]
    N_argmin = min(range(N_max + 1), key=log_gamma)
    return curve, N_argmin, curve[N_argmin][1]


def growth_law_log_norm(k, tau: float) -> float:
    """Logarithm of the asymptotic nested-commutator norm ``(2k / (e tau ln 2k))^(2k)``."""
    if k < 1:
        return 0.0
    return float(2 * k * np.log(2 * k / (np.e * tau * np.log(2 * k))))


def growth_law_norm(k, tau: float) -> float:
    """Asymptotic nested-commutator norm ``(2k / (e tau ln 2k))^(2k)``."""
    return float(np.exp(growth_law_log_norm(k, tau)))


# variational charge -------------------------------------------------------------


def variational_directions(ladder: CommutatorLadder, N: int, V: float, constrained: bool = True):
    """Correction operators spanned by the variational ansatz.

    Constrained: ``B_0 = A_0`` and ``B_q = A_2q - V sigma A_{2q-1}`` (so that the
    perturbative charge is ``alpha_q = V^-(2q+1)``).  Unconstrained: the
    ``A_2q`` and ``sigma A_{2q-1}`` separately.
    """
    sigma = ladder.sigma()
    dirs = [ladder.A(0)]
    for q in range(1, N + 1):
        odd = multiply(sigma, ladder.A(2 * q - 1))
        if constrained:
            dirs.append(ladder.A(2 * q) - odd.scale(V))
        else:
            dirs.extend([odd, ladder.A(2 * q)])
    return dirs


def _gram_schmidt_solve(source, images, drop_tol=1e-10):
    """Least squares ``min ||source + sum_i c_i images_i||`` by modified
    Gram-Schmidt with one re-orthogonalization pass.

    ``source`` is a vector and ``images`` a matrix whose rows are the image
    vectors.  Directions whose orthogonal remainder falls below ``drop_tol``
    of their original norm are discarded (coefficient 0).

    Returns
    -------
    coef : ndarray
    residual_norm : float
    rank : int
    """
    n = images.shape[0]
    Qm = np.zeros_like(images)
    Rm = np.zeros((n, n), dtype=complex)
    kept = []
    for i in range(n):
        w = images[i].copy()
        n0 = np.linalg.norm(w)
        if n0 == 0:
            continue
        m = len(kept)
        for _ in range(2):
            if m:
                c = Qm[:m].conj() @ w
                Rm[:m, i] += c
                w -= c @ Qm[:m]
        nw = np.linalg.norm(w)
        if nw < drop_tol * n0:
            continue
        Qm[m] = w / nw
        Rm[m, i] = nw
        kept.append(i)
    m = len(kept)
    coef = np.zeros(n, dtype=complex)
    b = Qm[:m].conj() @ source
    if m:
        Rk = Rm[:m][:, kept]
        coef[kept] = scipy.linalg.solve_triangular(Rk, -b)
    resid = source - b @ Qm[:m]
    return coef, float(np.linalg.norm(resid)), m


def variational_charge(ladder: CommutatorLadder, N: int, eps: float, V: float, *,
                       constrained: bool = True, drop_tol: float = 1e-10) -> BirkhoffCharge:
    """Best charge in the span of the Birkhoff corrections.

    Minimizes the O(eps) residual ``||[Q, V Sz_0 + H_bulk]||`` over the
    coefficients by orthogonalizing the residual images of the correction
    operators (no normal equations are formed).  Directions that lose
    orthogonality are dropped and ``effective_N`` reports what survived.
    """
    _need_depth(ladder, 2 * N + 1)
    dirs = variational_directions(ladder, N, V, constrained)
    charge = _optimize(ladder, dirs, eps, V, drop_tol)
    per_order = 1 if constrained else 2
    rank = charge.effective_N
    charge.N = N
    charge.effective_N = N if rank == len(dirs) else max(0, (rank - 1) // per_order)
    return charge


def krylov_directions(ladder: CommutatorLadder, n_dirs: int, tol: float = 1e-12):
    """Orthonormal directions spanning ``{(sigma Ad)^k H_int}``, built recursively.

    Each new direction is ``sigma [H_bulk, d_prev]`` orthogonalized (twice)
    against all previous ones, so the span stays resolved at depths where
    the raw nested commutators are numerically collinear.  Stops early when
    the space is exhausted.

    Returns
    -------
    list of PauliOperator
    """
    L = ladder.L
    sigma = ladder.sigma()
    d = ladder.h_int.scale(1.0 / np.sqrt(norm_sq(ladder.h_int)))
    dirs = [d]
    keys, rows = None, []
    while len(dirs) < n_dirs:
        w_op = multiply(sigma, commutator(ladder.bulk, dirs[-1]))
        # all directions live on the strings reached so far plus the new ones
        keys = np.union1d(keys, (w_op.x << np.uint64(L)) | w_op.z) if keys is not None else \
            coefficient_matrix(dirs + [w_op])[0]
        _, basis = coefficient_matrix(dirs, keys)
        _, w = coefficient_matrix([w_op], keys)
        w = w[0]
        n0 = np.linalg.norm(w)
        for _ in range(2):
            w -= (basis.conj() @ w) @ basis
        nw = np.linalg.norm(w)
        if n0 == 0 or nw < tol * n0:
            break
        dirs.append(from_coefficients(L, keys, w / nw))
    return dirs


def saturated_charge(ladder: CommutatorLadder, n_dirs: int, eps: float, V: float,
                     drop_tol: float = 1e-10) -> BirkhoffCharge:
    """Unconstrained variational charge over ``n_dirs`` recursively built directions.

    With ``n_dirs`` at or beyond the Krylov dimension this is the exact
    linear-order charge of the finite system.
    """
    dirs = krylov_directions(ladder, n_dirs)
    charge = _optimize(ladder, dirs, eps, V, drop_tol)
    charge.kind = "saturated"
    charge.N = len(dirs)
    return charge


def _optimize(ladder, dirs, eps, V, drop_tol):
    L = ladder.L
    sz = PauliOperator.spin(L, ladder.site, "Z")
    H0 = ladder.bulk + sz.scale(V)
    source = commutator(sz, ladder.h_int)
    keys, M = coefficient_matrix([source] + [commutator(d, H0) for d in dirs])
    coef, resid, rank = _gram_schmidt_solve(M[0], M[1:], drop_tol)
    coef = coef.real
    dkeys, D = coefficient_matrix(dirs)
    dressing = from_coefficients(L, dkeys, coef @ D)
    norm = 1.0 + 4.0 * eps**2 * norm_sq(dressing)
    return BirkhoffCharge(len(dirs), eps, V, "variational", coef, float(norm), abs(eps) * resid,
                          sz + dressing.scale(eps), rank)


# resummed charge ---------------------------------------------------------------


@dataclass
class ResummedNorm:
    """Infinite-order charge norm from the decoupled eigenbasis.

    ``norm = 1/4 + eps^2 chi`` (unnormalized); ``normalized`` divides by 1/4.
    ``chi_without_resonant`` drops terms whose denominator is below the
    resonance tolerance.
    """

    norm: float
    chi: float
    n_resonant: int
    chi_without_resonant: float
    conserved_fraction: float

    @property
    def normalized(self):
        return 4.0 * self.norm


def resummed_norm(h_bulk, h_int: PauliOperator, eps: float, V: float, site: int = 0,
                  resonance_tol: float = 1e-10) -> ResummedNorm:
    """``||Q||^2 = 1/4 + eps^2 / 2^L sum_{nm} |<n|H_int|m>|^2 / (E_n - E_m)^2``
    in the eigenbasis of ``H_bulk + V Sz_site`` (so ``E_n - E_m`` carries ``+-V``).
    """
    from .basis import all_sectors, build_basis
    from .eigen import eig_full
    from .pauli import to_dense

    bulk = _as_pauli(h_bulk)
    L = bulk.L
    H0 = bulk + PauliOperator.spin(L, site, "Z").scale(V)
    chi = chi_nr = 0.0
    n_res = 0
    for s in all_sectors(L):
        basis = build_basis(L, s)
        es = eig_full(to_dense(H0, basis), True)
        X = es.to_eigenbasis(to_dense(h_int, basis))
        dE = es.values[:, None] - es.values[None, :]
        w = np.abs(X) ** 2
        np.fill_diagonal(w, 0.0)
        mask = w > 0
        res = mask & (np.abs(dE) < resonance_tol)
        n_res += int(res.sum())
        ok = mask & ~res
        contrib = np.sum(w[ok] / dE[ok] ** 2)
        chi_nr += contrib
        chi += contrib if not res.any() else np.inf
    chi /= 2**L
    chi_nr /= 2**L
    norm = 0.25 + eps**2 * chi
    return ResummedNorm(float(norm), float(chi), n_res, float(chi_nr), float(0.25 / norm))
