"""Ergodicity probes: level-spacing ratios, fidelity susceptibility, g = Gamma/Delta."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .pauli import PauliOperator, to_dense

GOE_R = 0.5307
POISSON_R = 2 * np.log(2) - 1  # 0.3863
DEGENERACY_TOL = 1e-12
DEFAULT_WINDOW = 0.5
DEFAULT_PROBE_SITE = 2  # third spin of the chain


def central_slice(n: int, window: float) -> slice:
    """Index range of the central ``window`` fraction of ``n`` ordered levels."""
    if not 0 < window <= 1:
        raise ValidationError(f"window must lie in (0, 1], got {window}")
    lo = int(np.floor(n * (1 - window) / 2))
    return slice(lo, n - lo)


# level statistics -------------------------------------------------------------


@dataclass(frozen=True)
class RStatistic:
    """Adjacent-gap ratios ``r_n = min(s_n, s_n+1) / max(s_n, s_n+1)``.

    ``per_realization`` holds the mean of each pooled realization in order;
    ``n_degenerate`` counts gaps below the degeneracy tolerance.
    """

    ratios: np.ndarray
    mean: float
    window: float
    n_realizations: int = 1
    n_degenerate: int = 0
    per_realization: tuple = ()

    @property
    def stderr(self) -> float:
        m = np.asarray(self.per_realization)
        if len(m) < 2:
            return float("nan")
        return float(m.std(ddof=1) / np.sqrt(len(m)))


def r_statistic(values, window: float = DEFAULT_WINDOW, *, degenerate: str = "drop",
                tol: float = DEGENERACY_TOL) -> RStatistic:
    """Level-spacing ratio statistic of one spectrum.

    Parameters
    ----------
    values : array_like
        Ascending eigenvalues.
    window : float
        Central fraction of the spectrum (by level index) that is used.
    degenerate : {"drop", "zero"}
        Gaps below ``tol * bandwidth`` are removed (the degenerate levels are
        merged into one) or kept, giving ``r = 0``.
    """
    E = np.asarray(values, dtype=float)
    if E.ndim != 1:
        raise ValidationError("values must be one-dimensional")
    if np.any(np.diff(E) < 0):
        raise ValidationError("values must be ascending")
    if degenerate not in ("drop", "zero"):
        raise ValidationError("degenerate must be 'drop' or 'zero'")
    sub = E[central_slice(len(E), window)]
    if len(sub) < 3:
        raise ValidationError(f"need at least 3 levels in the window, got {len(sub)}")
    s = np.diff(sub)
    bandwidth = E[-1] - E[0]
    small = s <= tol * bandwidth
    n_deg = int(small.sum())
    if degenerate == "drop":
        s = s[~small]
    if len(s) < 2:
        raise ValidationError("fewer than two non-degenerate spacings in the window")
    a, b = s[:-1], s[1:]
    hi = np.maximum(a, b)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(hi > 0, np.minimum(a, b) / np.where(hi > 0, hi, 1.0), 0.0)
    m = float(r.mean())
    return RStatistic(r, m, window, 1, n_deg, (m,))


def pool_r(stats) -> RStatistic:
    """Pool realizations: every ratio of every realization weighs equally."""
    stats = list(stats)
    if not stats:
        raise ValidationError("nothing to pool")
    r = np.concatenate([s.ratios for s in stats])
    per = tuple(m for s in stats for m in s.per_realization)
    return RStatistic(r, float(r.mean()), stats[0].window, sum(s.n_realizations for s in stats),
                      sum(s.n_degenerate for s in stats), per)


def folded_r(plan, window: float = DEFAULT_WINDOW, **kw) -> RStatistic:
    """``<r>`` of the merged, offset-shifted block spectra of a solved folding plan."""
    from .models import fold_spectra

    return r_statistic(fold_spectra(plan), window, **kw)


def unfolded_r(plan, window: float = DEFAULT_WINDOW, **kw) -> RStatistic:
    """``<r>`` computed per frozen-impurity block, then averaged over blocks."""
    per = [r_statistic(b.values, window, **kw) for b in plan.blocks if b.values is not None and len(b.values) >= 3]
    if not per:
        raise ValidationError("no solved block has enough levels")
    means = [p.mean for p in per]
    return RStatistic(np.concatenate([p.ratios for p in per]), float(np.mean(means)), window, 1,
                      sum(p.n_degenerate for p in per), (float(np.mean(means)),))


def goe_spectrum(n: int, rng) -> np.ndarray:
    """Eigenvalues of an ``n x n`` GOE matrix."""
    A = rng.standard_normal((n, n))
    return np.linalg.eigvalsh((A + A.T) / 2)


def poisson_spectrum(n: int, rng) -> np.ndarray:
    return np.sort(rng.uniform(0.0, 1.0, n))


# fidelity susceptibility ------------------------------------------------------


@dataclass
class ChiResult:
    """Per-eigenstate fidelity susceptibility of one realization.

    ``chi`` holds ``chi_n`` for the eigenstates ``indices`` (a central window);
    ``n_excluded_pairs`` counts exactly degenerate pairs left out of the sums.
    """

    chi: np.ndarray
    indices: np.ndarray
    probe: str
    n_excluded_pairs: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def typical(self) -> float:
        return typical_chi([self])


def fidelity_susceptibility(eigs, P, window: float = DEFAULT_WINDOW, probe: str = "P", *,
                            tol: float = DEGENERACY_TOL) -> ChiResult:
    """``chi_n = sum_{m != n} |<n|P|m>|^2 / (E_n - E_m)^2`` over the whole sector.

    Pairs with ``|E_n - E_m| <= tol * bandwidth`` are excluded and counted.
    """
    V = eigs.require_vectors()
    P = np.asarray(P)
    if P.shape != (eigs.dim, eigs.dim):
        raise ValidationError(f"probe shape {P.shape} does not match dimension {eigs.dim}")
    if not np.allclose(P, P.conj().T, atol=1e-12):
        raise ValidationError("probe must be symmetric")
    E = eigs.values
    sl = central_slice(len(E), window)
    idx = np.arange(len(E))[sl]
    Pe = V[:, sl].conj().T @ (P @ V)
    dE = E[sl, None] - E[None, :]
    bw = E[-1] - E[0] if len(E) > 1 else 1.0
    w = np.abs(Pe) ** 2
    w[np.arange(len(idx)), idx] = 0.0
    degenerate = (np.abs(dE) <= tol * bw) & (w > 0)
    degenerate[np.arange(len(idx)), idx] = False
    ok = (w > 0) & ~degenerate
    ok[np.arange(len(idx)), idx] = False
    terms = np.zeros_like(w)
    terms[ok] = w[ok] / dE[ok] ** 2
    return ChiResult(terms.sum(axis=1), idx, probe, int(degenerate.sum()))


def typical_chi(samples, return_excluded: bool = False):
    """Geometric mean ``exp(E[log chi_n])`` over all eigenstates of all samples.

    Zero entries are excluded (and counted when ``return_excluded``).
    """
    samples = list(samples)
    if not samples:
        raise ValidationError("empty pool")
    chi = np.concatenate([np.asarray(s.chi if isinstance(s, ChiResult) else s, float) for s in samples])
    pos = chi > 0
    if not pos.any():
        raise ValidationError("no positive chi_n in the pool")
    val = float(np.exp(np.mean(np.log(chi[pos]))))
    return (val, int((~pos).sum())) if return_excluded else val


def scaled_chi(chi_V: float, chi_0: float) -> float:
    """``chi(V) / chi(0)``."""
    if chi_0 <= 0:
        raise ValidationError("reference chi must be positive")
    return chi_V / chi_0


def probe_operator(L: int, site: int = DEFAULT_PROBE_SITE, axis: str = "Z") -> PauliOperator:
    if not 0 <= site < L:
        raise ValidationError(f"probe site {site} outside chain of length {L}")
    return PauliOperator.spin(L, site, axis)


# g = Gamma / Delta --------------------------------------------------------------


def g_ratio(gamma: float, delta: float) -> float:
    """Dimensionless ergodicity ratio ``Gamma / Delta``."""
    if not delta > 0:
        raise ValidationError("level spacing must be positive")
    return gamma / delta


@dataclass
class FGRComparison:
    """Per-eigenstate ``chi_n`` against ``2 pi g_n`` in the decoupled-spin geometry."""

    chi: np.ndarray
    gamma: np.ndarray
    delta: np.ndarray
    impurity_up: np.ndarray

    @property
    def ratio(self) -> np.ndarray:
        return self.chi / (2 * np.pi * self.gamma / self.delta)

    @property
    def median_ratio(self) -> float:
        return float(np.median(self.ratio))


def chi_vs_fgr(block, V: float, sector=None, window: float = DEFAULT_WINDOW, k_levels: int = 20) -> FGRComparison:
    """Compare ``chi_n`` with ``2 pi Gamma_n / Delta_n`` for a spin attached to a block.

    The block ``H_L`` (a :class:`HamiltonianSpec` of length ``L``) gets an extra
    spin in field ``V`` coupled by ``lambda S^x_{L-1} S^x_L``.  For block
    eigenstate ``a`` (in ``sector``, central ``window``) and impurity spin
    ``s = +-1/2``:

    * ``chi_n = sum_b |<b|S^x_{L-1}|a>|^2 / 4 / (E_b - E_a - 2 s V)^2`` (exact, all
      final states ``b`` in the block sectors ``sector +- 1``),
    * ``Gamma_n = (pi/2) X_a(2 s V)`` and ``Delta_n`` from the ``k_levels`` final
      levels nearest to ``E_a + 2 s V``: ``X_a`` is their summed weight over the
      energy span they cover and ``Delta_n`` that span divided by ``k_levels``.
    """
    from fractions import Fraction

    from .basis import default_sector
    from .eigen import eig_spec

    L = block.L
    sector = default_sector(L) if sector is None else Fraction(sector)
    init = eig_spec(block, sector)
    Sx = PauliOperator.spin(L, L - 1, "X")
    finals = []
    for d in (-1, 1):
        s = sector + d
        if abs(s) <= Fraction(L, 2):
            es = eig_spec(block, s)
            M = to_dense(Sx, es.basis, init.basis, project=True)
            finals.append((es.values, es.vectors.T @ M @ init.vectors))
    Ef = np.concatenate([f[0] for f in finals])
    Xf = np.concatenate([f[1] for f in finals], axis=0)  # (final, initial)
    order = np.argsort(Ef)
    Ef, W2 = Ef[order], np.abs(Xf[order]) ** 2
    if len(Ef) < k_levels:
        raise ValidationError("not enough final states for the level window")
    idx = np.arange(init.dim)[central_slice(init.dim, window)]
    chi, gam, dl, up = [], [], [], []
    for a in idx:
        for s in (0.5, -0.5):
            target = init.values[a] + 2 * s * V
            dE = Ef - target
            with np.errstate(divide="ignore"):
                chi.append(float(np.sum(W2[:, a] / 4 / dE**2)))
            near = np.argsort(np.abs(dE))[:k_levels]
            span = Ef[near].max() - Ef[near].min()
            span *= k_levels / max(k_levels - 1, 1)
            gam.append(np.pi / 2 * W2[near, a].sum() / span)
            dl.append(span / k_levels)
            up.append(s > 0)
    return FGRComparison(np.array(chi), np.array(gam), np.array(dl), np.array(up))


# CSV ------------------------------------------------------------------------------

CSV_COLUMNS = ("L", "V", "seed", "sector", "probe", "value", "stderr")


def write_probe_csv(path, rows, header_comments=()):
    """Rows are mappings with :data:`CSV_COLUMNS`; comment lines start with ``#``."""
    with open(path, "w", newline="") as fh:
        for line in header_comments:
            fh.write(f"# {line}\n")
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row.get(k, "")) for k in CSV_COLUMNS})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v
