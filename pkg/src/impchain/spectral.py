"""Eigenstate spectral functions of local operators: lines, binning, fits.

For eigenstate ``n`` the spectral function of ``O`` is the Lehmann sum
``A_n(w) = sum_{m != n} |<n|O|m>|^2 delta(w - (E_m - E_n))``.  Pooled
(infinite-temperature) spectra are accumulated bin by bin without ever
materializing the full line list.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .pauli import PauliOperator, commutator, to_sparse

LINE_TOL = 1e-13
DEGENERACY_TOL = 1e-12


# matrix elements ----------------------------------------------------------------


def nested_commutator(H: PauliOperator, O: PauliOperator, k: int) -> PauliOperator:
    """``Ad_H^k O`` with ``Ad_H X = [H, X]``."""
    C = O
    for _ in range(k):
        C = commutator(H, C)
    return C


def eigenbasis_elements(left, right, O, *, H=None, order: int = 0, switch: float = 1.0) -> np.ndarray:
    """``<m|O|n>`` for ``m`` in ``left`` and ``n`` in ``right`` (two EigenSystems).

    With ``order = k > 0`` and the Pauli Hamiltonian ``H`` given, elements with
    ``|E_m - E_n| >= switch`` are taken from ``<m|Ad_H^k O|n> / (E_m - E_n)^k``.
    Rounding in a dense transform is set by the largest element, so this
    resolves high-frequency elements many orders of magnitude below the
    ``1e-16`` floor of the direct route.
    """
    Vl, Vr = left.require_vectors(), right.require_vectors()
    if isinstance(O, PauliOperator) or hasattr(O, "to_pauli"):
        Od = to_sparse(O, left.basis, right.basis, project=True)
    else:
        Od = np.asarray(O)
    M = Vl.T @ (Od @ Vr)
    if order > 0:
        if H is None or not isinstance(O, PauliOperator):
            raise ValidationError("the commutator route needs Pauli forms of H and O")
        Hp = H if isinstance(H, PauliOperator) else H.to_pauli()
        Ck = to_sparse(nested_commutator(Hp, O, order), left.basis, right.basis, project=True)
        Mk = Vl.T @ (Ck @ Vr)
        w = left.values[:, None] - right.values[None, :]
        far = np.abs(w) >= switch
        M = np.where(far, Mk / np.where(far, w, 1.0) ** order, M)
    return M


def matrix_element_lines(eigs, O, n: int, connected: bool = True, other=None, *, tol: float = LINE_TOL):
    """Lines ``(omega_nm, |<n|O|m>|^2)`` of eigenstate ``n``.

    ``O`` is a dense matrix with rows in ``other`` (default: the same
    sector) and columns in ``eigs``.  Diagonal and numerically vanishing
    elements are dropped.  ``connected`` is recorded by callers for the sum
    rule; nothing is subtracted here since the diagonal is excluded.

    Returns
    -------
    omega, weight : ndarray
    """
    if not 0 <= n < eigs.dim:
        raise ValidationError(f"eigenstate index {n} out of range [0, {eigs.dim})")
    other = eigs if other is None else other
    O = np.asarray(O)
    col = other.require_vectors().T @ (O @ eigs.require_vectors()[:, n])
    w = np.abs(col) ** 2
    omega = other.values - eigs.values[n]
    keep = w > (tol * max(1.0, np.abs(O).max(initial=0.0))) ** 2
    if other is eigs:
        keep[n] = False
    return omega[keep], w[keep]


def sum_rule(eigs, O, n: int) -> float:
    """``<n|O^2|n> - <n|O|n>^2`` for a symmetric ``O`` on the sector of ``eigs``."""
    v = eigs.require_vectors()[:, n]
    Ov = np.asarray(O) @ v
    return float(Ov @ Ov - (v @ Ov) ** 2)


# binning ---------------------------------------------------------------------------


def log_edges(w_min: float, w_max: float, per_decade: int = 12) -> np.ndarray:
    n = max(1, int(np.ceil(np.log10(w_max / w_min) * per_decade)))
    return np.logspace(np.log10(w_min), np.log10(w_max), n + 1)


def linear_edges(w_min: float, w_max: float, width: float) -> np.ndarray:
    n = max(1, int(round((w_max - w_min) / width)))
    return np.linspace(w_min, w_max, n + 1)


@dataclass
class SpectralHistogram:
    """Binned spectral function.

    ``A`` is the pooled density per state (summed weight over bin width and
    number of pooled states); ``log_A`` is the mean over samples of the log
    of each sample's binned curve, zero bins excluded (``typ_excluded``).
    ``zero_weight`` collects exactly degenerate lines and, for
    non-connected spectra, the diagonal, per state.
    """

    edges: np.ndarray
    A: np.ndarray
    log_A: np.ndarray
    counts: np.ndarray
    n_states: int
    n_samples: int
    operator: str = "O"
    connected: bool = True
    folded: bool = False
    zero_weight: float = 0.0
    typ_excluded: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def centers(self) -> np.ndarray:
        e = self.edges
        if np.all(e > 0) and e[-1] / e[0] > 20:
            return np.sqrt(e[:-1] * e[1:])
        return 0.5 * (e[:-1] + e[1:])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def A_typ(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.exp(self.log_A)

    @property
    def A_pooled(self) -> np.ndarray:
        """Density not divided by the number of states."""
        return self.A * self.n_states

    @property
    def empty(self) -> np.ndarray:
        return self.counts == 0

    def total_weight(self) -> float:
        return float(np.sum(self.A * self.widths))

    def to_csv(self, path, meta: dict | None = None):
        """Write ``omega_center, A_mean, A_typ, count`` plus a JSON sidecar."""
        with open(path, "w") as fh:
            fh.write("omega_center,A_mean,A_typ,count\n")
            for c, a, t, n in zip(self.centers, self.A, self.A_typ, self.counts):
                fh.write(f"{float(c)!r},{float(a)!r},{float(t)!r},{int(n)}\n")
        side = {"edges": [float(x) for x in self.edges], "n_states": self.n_states, "n_samples": self.n_samples,
                "operator": self.operator, "connected": self.connected, "folded": self.folded,
                "zero_weight": self.zero_weight, "normalization": "per_state", **self.meta, **(meta or {})}
        with open(str(path) + ".json", "w") as fh:
            json.dump(side, fh, indent=1, sort_keys=True)


class SpectralAccumulator:
    """Streaming histogram of spectral lines.

    Parameters
    ----------
    edges : array_like
        Monotone bin edges.
    fold : bool
        Bin ``|omega|`` and halve the weights, so the result is the
        symmetrized ``(A(w) + A(-w)) / 2`` on ``w > 0``.
    """

    def __init__(self, edges, fold: bool = False, operator: str = "O", connected: bool = True,
                 degeneracy_tol: float = DEGENERACY_TOL):
        edges = np.asarray(edges, dtype=float)
        if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
            raise ValidationError("edges must be strictly increasing with at least two entries")
        self.edges = edges
        self.fold = fold
        self.operator = operator
        self.connected = connected
        self.degeneracy_tol = degeneracy_tol
        nb = len(edges) - 1
        self._sum = np.zeros(nb)
        self._cnt = np.zeros(nb, dtype=np.int64)
        self._samples = {}
        self._zero = 0.0
        self.n_states = 0

    def _sample(self, sid):
        if sid not in self._samples:
            self._samples[sid] = [np.zeros(len(self._sum)), 0]
        return self._samples[sid]

    def add_states(self, n: int, sample=0):
        """Register ``n`` pooled eigenstates (the normalization count)."""
        self.n_states += n
        self._sample(sample)[1] += n

    def add_lines(self, omega, weight, sample=0, scale_hint: float = 1.0):
        omega = np.asarray(omega, dtype=float).ravel()
        weight = np.asarray(weight, dtype=float).ravel()
        if self.fold:
            omega = np.abs(omega)
            weight = 0.5 * weight
        zero = np.abs(omega) <= self.degeneracy_tol * scale_hint
        self._zero += float(weight[zero].sum())
        omega, weight = omega[~zero], weight[~zero]
        b = np.searchsorted(self.edges, omega, side="right") - 1
        inside = (b >= 0) & (b < len(self._sum))
        b, weight = b[inside], weight[inside]
        s = np.bincount(b, weights=weight, minlength=len(self._sum))
        self._sum += s
        self._cnt += np.bincount(b, minlength=len(self._sum))
        self._sample(sample)[0] += s

    def add_diagonal(self, values):
        """Diagonal weights ``<n|O|n>^2`` (only for non-connected spectra)."""
        if not self.connected:
            self._zero += float(np.sum(np.asarray(values) ** 2))

    def add_block(self, left_values, right_values, M, sample=0, right_slice=None):
        """Lines between all right states (initial, counted) and left states (final).

        ``M[m, n] = <m|O|n>``; omega is ``E_m - E_n``.
        """
        right_values = np.asarray(right_values)
        cols = slice(None) if right_slice is None else right_slice
        w = np.abs(M[:, cols]) ** 2
        om = np.asarray(left_values)[:, None] - right_values[None, cols]
        bw = max(1.0, float(np.ptp(np.concatenate([left_values, right_values]))))
        if M.shape[0] == M.shape[1] and left_values is right_values:
            idx = np.arange(M.shape[1])[cols]
            w[idx, np.arange(len(idx))] = 0.0
        self.add_lines(om, w, sample, scale_hint=bw)

    def merge(self, other: "SpectralAccumulator") -> "SpectralAccumulator":
        """Fold in another accumulator with the same binning (sample ids must not clash)."""
        if not np.array_equal(self.edges, other.edges) or self.fold != other.fold:
            raise ValidationError("accumulators do not share the binning")
        clash = set(self._samples) & set(other._samples)
        if clash:
            raise ValidationError(f"sample ids {sorted(clash, key=repr)} present in both accumulators")
        self._sum += other._sum
        self._cnt += other._cnt
        self._zero += other._zero
        self.n_states += other.n_states
        for sid, (s, n) in other._samples.items():
            self._samples[sid] = [s.copy(), n]
        return self

    def histogram(self, meta: dict | None = None) -> SpectralHistogram:
        if self.n_states == 0:
            raise ValidationError("no states were accumulated")
        widths = np.diff(self.edges)
        A = self._sum / (widths * self.n_states)
        logs = []
        for sid in sorted(self._samples, key=repr):
            s, n = self._samples[sid]
            if n:
                logs.append(s / (widths * n))
        logs = np.array(logs)
        pos = logs > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            log_A = np.where(pos.any(axis=0), np.sum(np.where(pos, np.log(np.where(pos, logs, 1.0)), 0.0), axis=0)
                             / pos.sum(axis=0), np.nan)
        return SpectralHistogram(self.edges.copy(), A, log_A, self._cnt.copy(), self.n_states, len(logs),
                                 self.operator, self.connected, self.fold, self._zero / self.n_states,
                                 (~pos).sum(axis=0), dict(meta or {}))


def bin_spectral_function(lines, edges, typical: bool = False, n_states=None, fold: bool = False,
                          operator: str = "O") -> SpectralHistogram:
    """Bin explicit lines.

    ``lines`` is a sequence of ``(omega, weight)`` pairs, one per eigenstate,
    or of ``(sample_id, omega, weight)`` triples when ``typical`` curves are
    wanted.  ``n_states`` overrides the state count.
    """
    lines = list(lines)
    if not lines:
        raise ValidationError("no lines to bin")
    acc = SpectralAccumulator(edges, fold=fold, operator=operator)
    for item in lines:
        sid, om, w = item if len(item) == 3 else (0, *item)
        acc.add_lines(om, w, sample=sid)
        acc.add_states(1, sample=sid)
    if n_states is not None:
        acc.n_states = n_states
    h = acc.histogram()
    if not typical:
        h.log_A = np.log(np.where(h.A > 0, h.A, np.nan))
    return h


# pooled spectra ---------------------------------------------------------------------


def sector_spectral_function(spec, O: PauliOperator, edges, *, sectors=None, window: float = 1.0,
                             fold: bool = False, order: int = 0, switch: float = 1.0, sample=0,
                             accumulator: SpectralAccumulator | None = None, eigs=None, operator: str = "O",
                             solver=None):
    """Pool the spectral function of ``O`` over eigenstates of ``spec``.

    Initial states come from the listed magnetization ``sectors`` (default:
    all), restricted to their central ``window`` fraction; final states run
    over every sector that ``O`` reaches.  ``eigs`` may supply precomputed
    ``{sector: EigenSystem}`` and ``solver(spec, sector)`` replaces the
    default eigensolver (a cache, for instance).  Eigensystems are dropped as soon as no
    remaining sector pair needs them, and with ``window = 1`` a pair of
    initial sectors is transformed once and binned in both directions
    (``O`` is assumed Hermitian).  Returns the accumulator (pass one in to
    pool several realizations).
    """
    from fractions import Fraction

    from .basis import all_sectors
    from .eigen import eig_spec
    from .probes import central_slice

    L = spec.L
    sectors = all_sectors(L) if sectors is None else [Fraction(s) for s in sectors]
    acc = accumulator or SpectralAccumulator(edges, fold=fold, operator=operator)
    cache = dict(eigs or {})
    keep_given = set(cache)
    shifts = _magnetization_shifts(O)
    Hp = spec.to_pauli() if order else None
    half = Fraction(L, 2)
    pairs = [(s, s + d) for s in sectors for d in shifts if abs(s + d) <= half]
    both_ways = window >= 1.0
    initial = set(sectors)
    done = set()

    def get(s):
        if s not in cache:
            cache[s] = (solver or eig_spec)(spec, s)
        return cache[s]

    for s in sectors:
        n_init = len(range(get(s).dim)[central_slice(get(s).dim, window)])
        acc.add_states(n_init, sample=sample)
    for i, (s, t) in enumerate(pairs):
        if (s, t) in done:
            continue
        init, fin = get(s), get(t)
        sl = central_slice(init.dim, window)
        M = eigenbasis_elements(fin, init, O, H=Hp, order=order, switch=switch)
        if s == t:
            acc.add_diagonal(np.diag(M)[sl])
            M = M.copy()
            np.fill_diagonal(M, 0.0)
        acc.add_block(fin.values, init.values, M, sample=sample, right_slice=sl)
        if both_ways and s != t and t in initial:
            acc.add_block(init.values, fin.values, M.T, sample=sample)
            done.add((t, s))
        del M
        needed = {x for pair in pairs[i + 1:] if pair not in done for x in pair}
        for key in list(cache):
            if key not in needed and key not in keep_given:
                del cache[key]
    return acc


def _magnetization_shifts(O: PauliOperator):
    """Changes of total S^z produced by the strings of ``O``."""
    from fractions import Fraction

    shifts = set()
    for x, z, c in zip(O.x, O.z, O.coeffs):
        n = int(x).bit_count()
        # a flipped spin changes M by +-1; all sign combinations may occur
        for k in range(n + 1):
            shifts.add(Fraction(n - 2 * k))
    return sorted(shifts)


def conserved_fraction(eigs, O, window: float = 1.0) -> float:
    """``Z = E[<n|O|n>^2] / E[<n|O^2|n>]`` over the central window.

    For ``O = S^z_l`` this is ``4 E[<n|S^z_l|n>^2]``.
    """
    from .probes import central_slice

    V = eigs.require_vectors()[:, central_slice(eigs.dim, window)]
    O = np.asarray(O)
    OV = O @ V
    diag = np.einsum("ij,ij->j", V, OV)
    second = np.einsum("ij,ij->j", OV, OV)
    return float(np.mean(diag**2) / np.mean(second))


# fits ----------------------------------------------------------------------------------


@dataclass
class TailFit:
    """Least-squares fit of ``log A``.

    ``model`` is ``"exp-wlogw"`` (``log A = c - tau w log w``) or ``"power"``
    (``log A = c + exponent log w``).
    """

    model: str
    tau: float | None
    exponent: float | None
    intercept: float
    window: tuple
    residual: float
    n_bins: int


def _curve(hist, use):
    if use == "typical":
        return hist.A_typ
    return hist.A


def fit_tail(hist: SpectralHistogram, window=None, model: str = "exp-wlogw", use: str = "mean") -> TailFit:
    """Fit the spectral tail on ``window`` (default ``[0.6, 0.95] * w_max``).

    ``w_max`` is the largest bin center carrying weight.
    """
    if model not in ("exp-wlogw", "power"):
        raise ValidationError(f"unknown tail model {model!r}")
    A = _curve(hist, use)
    c = hist.centers
    good = np.isfinite(A) & (A > 0)
    if window is None:
        if not good.any():
            raise ValidationError("histogram carries no weight")
        w_max = c[good].max()
        window = (0.6 * w_max, 0.95 * w_max)
    lo, hi = window
    if lo < hist.edges[0] or hi > hist.edges[-1] or lo >= hi:
        raise ValidationError(f"fit window {window} outside data support [{hist.edges[0]}, {hist.edges[-1]}]")
    sel = good & (c >= lo) & (c <= hi)
    if sel.sum() < 5:
        raise ValidationError(f"need at least 5 nonempty bins in the window, got {int(sel.sum())}")
    w, y = c[sel], np.log(A[sel])
    if model == "exp-wlogw":
        if np.any(w <= 0):
            raise ValidationError("exp-wlogw model needs positive frequencies")
        x = w * np.log(w)
    else:
        if np.any(w <= 0):
            raise ValidationError("power-law model needs positive frequencies")
        x = np.log(w)
    X = np.column_stack([np.ones_like(x), x])
    if np.linalg.matrix_rank(X) < 2:
        raise ValidationError("degenerate design matrix")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = float(np.sqrt(np.mean((X @ coef - y) ** 2)))
    if model == "exp-wlogw":
        return TailFit(model, float(-coef[1]), None, float(coef[0]), (lo, hi), resid, int(sel.sum()))
    return TailFit(model, None, float(coef[1]), float(coef[0]), (lo, hi), resid, int(sel.sum()))


def loglog_slope(hist: SpectralHistogram, window, use: str = "mean") -> float:
    return fit_tail(hist, window, "power", use).exponent


# jumps ----------------------------------------------------------------------------------


@dataclass
class JumpScaling:
    """Drop factors of the spectral function across a jump, per V."""

    omega_jump: float
    V: np.ndarray
    drops: np.ndarray
    exponent: float
    intercept: float
    mode: str
    fit_mask: np.ndarray


def _window_mean_log(hist, lo, hi, use):
    A = _curve(hist, use)
    c = hist.centers
    sel = (c > lo) & (c <= hi) & np.isfinite(A) & (A > 0)
    if sel.sum() < 2:
        raise ValidationError(f"insufficient data in ({lo}, {hi}]")
    return c[sel], np.log(A[sel])


def jump_scaling(hists: dict, omega_jump: float, *, mode: str = "reference", width: float = 1.0,
                 reference_V=None, fit_V_min: float = 0.0, use: str = "mean") -> JumpScaling:
    """Suppression of the spectrum past ``omega_jump`` as a function of V.

    ``mode="reference"``: drop = mean over ``(w_j, w_j + width]`` of
    ``A_V / A_ref`` in log space, with ``A_ref`` the smallest-V (or
    ``reference_V``) curve; this is the cumulative suppression of all weak
    links crossed below ``w_j``.
    ``mode="local"``: straight lines in log A fitted on ``[w_j - width, w_j)``
    and ``(w_j, w_j + width]`` extrapolated to ``w_j``; drop is their ratio.

    The exponent is the slope of ``log drop`` against ``log V`` over
    ``V >= fit_V_min``.
    """
    if mode not in ("reference", "local"):
        raise ValidationError("mode must be 'reference' or 'local'")
    Vs = np.array(sorted(hists))
    if len(Vs) < 2:
        raise ValidationError("need at least two values of V")
    drops = []
    if mode == "reference":
        ref = hists[Vs[0] if reference_V is None else reference_V]
        _, y_ref = _window_mean_log(ref, omega_jump, omega_jump + width, use)
        for V in Vs:
            _, y = _window_mean_log(hists[V], omega_jump, omega_jump + width, use)
            if len(y) != len(y_ref):
                raise ValidationError("histograms do not share the binning")
            drops.append(np.exp(np.mean(y - y_ref)))
    else:
        for V in Vs:
            h = hists[V]
            if not (h.edges[0] <= omega_jump - width and h.edges[-1] >= omega_jump + width):
                raise ValidationError("histogram does not cover both sides of the jump")
            xl, yl = _window_mean_log(h, omega_jump - width, omega_jump - 1e-12, use)
            xr, yr = _window_mean_log(h, omega_jump, omega_jump + width, use)
            left = np.polyval(np.polyfit(xl, yl, 1), omega_jump)
            right = np.polyval(np.polyfit(xr, yr, 1), omega_jump)
            drops.append(np.exp(right - left))
    drops = np.array(drops)
    mask = Vs >= fit_V_min
    if mask.sum() < 2:
        raise ValidationError("fewer than two V values in the fit range")
    slope, icpt = np.polyfit(np.log(Vs[mask]), np.log(drops[mask]), 1)
    return JumpScaling(omega_jump, Vs, drops, float(slope), float(icpt), mode, mask)


# effective-model bound -------------------------------------------------------------------


@dataclass
class BoundReport:
    ratio: np.ndarray          # A_full / A_eff per bin (nan where either is empty)
    below: np.ndarray          # bins below the first impurity resonance
    bound_holds: bool
    max_factor: float          # max bin-wise factor between the curves below resonance
    resonance_peaks: np.ndarray  # bin centers of local maxima of A_full near omega = V


def effective_bound_check(A_eff: SpectralHistogram, A_full: SpectralHistogram, V: float | None = None,
                          tol: float = 0.5, resonance_width: float = 1.0, use: str = "mean") -> BoundReport:
    """Bin-wise ``A_full >= A_eff (1 - tol)`` below the first resonance ``w < V - resonance_width``."""
    if len(A_eff.edges) != len(A_full.edges) or not np.allclose(A_eff.edges, A_full.edges):
        raise ValidationError("binning mismatch")
    a, b = _curve(A_eff, use), _curve(A_full, use)
    c = A_full.centers
    both = (a > 0) & (b > 0) & np.isfinite(a) & np.isfinite(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(both, b / a, np.nan)
    below = both & ((c < V - resonance_width) if V is not None else np.ones_like(both))
    holds = bool(np.all(ratio[below] >= 1 - tol)) if below.any() else True
    factor = float(np.exp(np.max(np.abs(np.log(ratio[below]))))) if below.any() else 1.0
    peaks = np.array([])
    if V is not None:
        near = np.where(np.abs(c - V) <= resonance_width)[0]
        pk = [i for i in near if 0 < i < len(b) - 1 and b[i] > b[i - 1] and b[i] > b[i + 1]]
        peaks = c[pk]
    return BoundReport(ratio, below, holds, factor, peaks)
