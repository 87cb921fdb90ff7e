"""Hamiltonians of XXZ chains with strong impurities.

Covers the disordered bulk chain, impurity decoration, the second-order
Schrieffer-Wolff rotated model that keeps the impurity spin, the effective
weak-link model with frozen impurities, and spectrum folding.

Sites are 0-based throughout.
"""
from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from .basis import SpinBasis, build_basis
from .errors import ValidationError
from .pauli import PauliOperator, commutator, to_dense

SPEC_FORMAT_VERSION = 1


@dataclass(frozen=True)
class HamiltonianSpec:
    """Symbolic spin-chain Hamiltonian.

    ``H = sum_b (Jx SxSx + Jy SySy + Jz SzSz)_b + sum_j fields[j] Sz_j
    + sum_t J_t Sz_k (Sx_i Sx_j + Sy_i Sy_j)`` with ``S = sigma / 2``.

    Attributes
    ----------
    bonds : tuple of (i, j, Jx, Jy, Jz)
    fields : tuple of float
        Total longitudinal field per site (disorder plus impurity potential).
    three_body : tuple of (k, i, j, J)
        Impurity-mediated flip-flop terms ``J Sz_k (Sx_i Sx_j + Sy_i Sy_j)``.
    meta : dict
        Provenance: seed, W, Delta, impurity sites and strengths, model kind.
    """

    L: int
    bonds: tuple = ()
    fields: tuple = ()
    three_body: tuple = ()
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if self.L < 1:
            raise ValidationError("L must be positive")
        if len(self.fields) != self.L:
            raise ValidationError(f"need {self.L} fields, got {len(self.fields)}")
        for b in self.bonds:
            i, j = b[0], b[1]
            if not (0 <= i < self.L and 0 <= j < self.L) or i == j:
                raise ValidationError(f"bad bond indices {(i, j)} for L={self.L}")
        for k, i, j, _ in self.three_body:
            if len({k, i, j}) != 3 or not all(0 <= s < self.L for s in (k, i, j)):
                raise ValidationError(f"bad three-body indices {(k, i, j)}")

    @property
    def h(self) -> np.ndarray:
        return np.asarray(self.fields, dtype=float)

    @property
    def impurity_sites(self) -> tuple:
        return tuple(self.meta.get("impurity_sites", ()))

    @property
    def impurity_strengths(self) -> tuple:
        return tuple(self.meta.get("impurity_strengths", ()))

    def to_pauli(self) -> PauliOperator:
        L = self.L
        xs, zs, cs = [], [], []

        def add(x, z, c):
            if c != 0:
                xs.append(x)
                zs.append(z)
                cs.append(c)

        for i, j, jx, jy, jz in self.bonds:
            m = (1 << i) | (1 << j)
            add(m, 0, jx / 4)
            add(m, m, jy / 4)
            add(0, m, jz / 4)
        for j, hj in enumerate(self.fields):
            add(0, 1 << j, hj / 2)
        for k, i, j, J in self.three_body:
            m = (1 << i) | (1 << j)
            add(m, 1 << k, J / 8)
            add(m, m | (1 << k), J / 8)
        op = PauliOperator(L, xs, zs, cs)
        return op

    def dense(self, basis: SpinBasis | None = None, sector=None) -> np.ndarray:
        """Dense matrix in ``basis`` (or a freshly built basis for ``sector``)."""
        if basis is None:
            basis = build_basis(self.L, sector)
        return to_dense(self.to_pauli(), basis)

    def conserves_sz(self) -> bool:
        return all(b[2] == b[3] for b in self.bonds)

    # provenance ------------------------------------------------------------

    def to_text(self) -> str:
        """Human-readable key-value serialization (17 significant digits)."""
        f = lambda v: format(float(v), ".17g")
        lines = [f"# impchain HamiltonianSpec v{SPEC_FORMAT_VERSION}", f"L = {self.L}"]
        for key in sorted(self.meta):
            lines.append(f"meta {key} = {json.dumps(_jsonable(self.meta[key]), sort_keys=True)}")
        for i, j, jx, jy, jz in self.bonds:
            lines.append(f"bond {i} {j} {f(jx)} {f(jy)} {f(jz)}")
        for j, hj in enumerate(self.fields):
            lines.append(f"field {j} {f(hj)}")
        for k, i, j, J in self.three_body:
            lines.append(f"three {k} {i} {j} {f(J)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "HamiltonianSpec":
        L = None
        bonds, fields, three, meta = [], {}, [], {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("L ="):
                L = int(line.split("=", 1)[1])
            elif line.startswith("meta "):
                key, val = line[5:].split(" = ", 1)
                meta[key] = json.loads(val)
            else:
                tok = line.split()
                if tok[0] == "bond":
                    bonds.append((int(tok[1]), int(tok[2]), float(tok[3]), float(tok[4]), float(tok[5])))
                elif tok[0] == "field":
                    fields[int(tok[1])] = float(tok[2])
                elif tok[0] == "three":
                    three.append((int(tok[1]), int(tok[2]), int(tok[3]), float(tok[4])))
                else:
                    raise ValidationError(f"unrecognized spec line: {raw!r}")
        if L is None:
            raise ValidationError("spec text has no 'L =' line")
        return cls(L, tuple(bonds), tuple(fields[j] for j in range(L)), tuple(three), meta)

    def save(self, path):
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path):
        return cls.from_text(Path(path).read_text())

    def spec_hash(self) -> str:
        """SHA-256 of the serialized Hamiltonian terms (metadata excluded)."""
        body = replace(self, meta={}).to_text()
        return hashlib.sha256(body.encode()).hexdigest()


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, (tuple, list, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, Fraction):
        return float(v)
    return v


def center_site(L: int) -> int:
    """0-based impurity site: l = (L+1)/2 for odd L, L/2 + 1 for even L (1-based)."""
    return L // 2


def disorder_fields(L: int, W: float, seed) -> np.ndarray:
    """i.i.d. uniform fields on [-W, W] from ``np.random.default_rng(seed)``."""
    rng = np.random.default_rng(seed)
    return rng.uniform(-W, W, size=L)


def build_bulk(L: int, delta: float = 1.0, W: float = 0.25, seed=0) -> HamiltonianSpec:
    """Open XXZ chain with nearest-neighbour bonds and random fields.

    Parameters
    ----------
    L : int
        Number of sites (>= 2).
    delta : float
        Anisotropy of the Sz-Sz coupling; the in-plane couplings are 1.
    W : float
        Fields are uniform on ``[-W, W]``.
    seed : int or SeedSequence
        Seed for ``np.random.default_rng``; same seed gives the same fields.
    """
    if L < 2:
        raise ValidationError("L must be >= 2")
    if W < 0:
        raise ValidationError("W must be non-negative")
    h = disorder_fields(L, W, seed)
    bonds = tuple((j, j + 1, 1.0, 1.0, float(delta)) for j in range(L - 1))
    meta = {"kind": "bulk", "seed": _seed_repr(seed), "W": float(W), "delta": float(delta),
            "disorder": [float(v) for v in h], "impurity_sites": [], "impurity_strengths": []}
    return HamiltonianSpec(L, bonds, tuple(float(v) for v in h), (), meta)


def _seed_repr(seed):
    if isinstance(seed, np.random.SeedSequence):
        return {"entropy": seed.entropy, "spawn_key": list(seed.spawn_key)}
    return seed if isinstance(seed, (int, type(None))) else int(seed)


def add_impurities(spec: HamiltonianSpec, sites, V: float, jitter: bool = False, seed=None) -> HamiltonianSpec:
    """Add impurity potentials to ``spec``.

    Without jitter every listed site gets ``+V``; with jitter each strength is
    drawn uniformly from ``[V/2, 3V/2]`` using ``default_rng(seed)``.
    """
    sites = [int(s) for s in sites]
    if len(set(sites)) != len(sites):
        raise ValidationError(f"duplicate impurity sites in {sites}")
    for s in sites:
        if not 0 <= s < spec.L:
            raise ValidationError(f"impurity site {s} out of range for L={spec.L}")
        if s in spec.impurity_sites:
            raise ValidationError(f"site {s} already carries an impurity")
    if not sites:
        return spec
    if jitter:
        rng = np.random.default_rng(seed)
        strengths = rng.uniform(V / 2, 3 * V / 2, size=len(sites))
    else:
        strengths = np.full(len(sites), float(V))
    fields = list(spec.fields)
    for s, v in zip(sites, strengths):
        fields[s] += float(v)
    meta = dict(spec.meta)
    meta["kind"] = "full"
    meta["impurity_sites"] = list(spec.impurity_sites) + sites
    meta["impurity_strengths"] = list(spec.impurity_strengths) + [float(v) for v in strengths]
    meta["V"] = float(V)
    meta["jitter"] = bool(jitter)
    if jitter:
        meta["jitter_seed"] = _seed_repr(seed)
    return HamiltonianSpec(spec.L, spec.bonds, tuple(fields), spec.three_body, meta)


def bulk_fields(spec: HamiltonianSpec) -> np.ndarray:
    """Fields with the impurity potentials removed."""
    h = spec.h.copy()
    for s, v in zip(spec.impurity_sites, spec.impurity_strengths):
        h[s] -= v
    return h


def _bond_map(spec):
    out = {}
    for b in spec.bonds:
        out[frozenset(b[:2])] = b
    return out


def schrieffer_wolff(spec: HamiltonianSpec, site: int, V: float):
    """Second-order rotated Hamiltonian with the impurity spin kept.

    Parameters
    ----------
    spec : HamiltonianSpec
        Bulk chain (no impurity on ``site``).
    site : int
        Interior impurity site.
    V : float
        Impurity potential.

    Returns
    -------
    (HamiltonianSpec, PauliOperator)
        The rotated Hamiltonian, diagonal in ``Sz_site``, and the generator
        ``A`` through order ``1/V**2`` so that ``H_rot = exp(iA) H exp(-iA)``.
    """
    if V == 0:
        raise ValidationError("V must be non-zero")
    if not 0 < site < spec.L - 1:
        raise ValidationError(f"site {site} is on the boundary; needs two neighbours")
    if site in spec.impurity_sites:
        raise ValidationError("pass the bulk spec; the impurity is added from V")
    left, right = site - 1, site + 1
    bonds = _bond_map(spec)
    try:
        bl, br = bonds[frozenset((left, site))], bonds[frozenset((site, right))]
    except KeyError:
        raise ValidationError("impurity site must be bonded to both neighbours") from None
    new_bonds = [b for b in spec.bonds if site not in b[:2]]
    new_bonds += [(left, site, 0.0, 0.0, bl[4]), (site, right, 0.0, 0.0, br[4])]
    fields = list(spec.fields)
    # second-order shifts: virtual flips of the impurity push the neighbour
    # fields down and the impurity level up by 1/(4V) per neighbour
    fields[left] -= 1.0 / (4 * V)
    fields[right] -= 1.0 / (4 * V)
    fields[site] += V + 1.0 / (2 * V)
    three = tuple(spec.three_body) + ((site, left, right, 1.0 / V),)
    meta = dict(spec.meta)
    meta.update(kind="schrieffer_wolff", impurity_sites=[site], impurity_strengths=[float(V)], V=float(V))
    rotated = HamiltonianSpec(spec.L, tuple(new_bonds), tuple(fields), three, meta)

    L = spec.L
    full = add_impurities(spec, [site], V).to_pauli()
    sx_n = PauliOperator.spin(L, left, "X") + PauliOperator.spin(L, right, "X")
    sy_n = PauliOperator.spin(L, left, "Y") + PauliOperator.spin(L, right, "Y")
    sx_l = PauliOperator.spin(L, site, "X")
    sy_l = PauliOperator.spin(L, site, "Y")
    A = sy_l @ (sx_n / V - (1j / V**2) * commutator(sy_n, full)) + sx_l @ (
        -sy_n / V - (1j / V**2) * commutator(sx_n, full)
    )
    return rotated, A


def effective_chain(spec: HamiltonianSpec, spins=None, sites=None, strengths=None) -> HamiltonianSpec:
    """Freeze impurities of a full-model spec and return the weak-link chain.

    Each frozen impurity with ``Sz = s`` is removed; its neighbours receive the
    field ``Jz * s`` and are joined by a flip-flop bond of strength
    ``Jxy_left * Jxy_right * s / V`` (``1/(2V)`` for unit couplings and
    ``s = +1/2``).  The ``O(1/V)`` boundary fields are dropped.

    Parameters
    ----------
    spec : HamiltonianSpec
        Full model; impurity sites/strengths are read from its metadata unless
        given explicitly.
    spins : sequence of +-1/2, optional
        Frozen impurity magnetizations (default all +1/2).
    """
    sites = list(spec.impurity_sites if sites is None else sites)
    strengths = list(spec.impurity_strengths if strengths is None else strengths)
    if len(sites) != len(strengths):
        raise ValidationError("need one strength per impurity site")
    spins = [0.5] * len(sites) if spins is None else [float(s) for s in spins]
    if any(abs(abs(s) - 0.5) > 1e-12 for s in spins):
        raise ValidationError("frozen spins must be +-1/2")
    imp = dict(zip(sites, zip(strengths, spins)))
    h = bulk_fields(spec) if spec.impurity_sites else spec.h.copy()
    keep = [j for j in range(spec.L) if j not in imp]
    remap = {old: new for new, old in enumerate(keep)}
    bonds = _bond_map(spec)
    new_fields = [float(h[j]) for j in keep]
    new_bonds = []
    for b in spec.bonds:
        i, j = b[:2]
        if i in imp and j in imp:
            raise ValidationError(f"adjacent impurities {i}, {j} are not supported")
        if i in imp or j in imp:
            continue
        new_bonds.append((remap[i], remap[j]) + tuple(b[2:]))
    for s, (V, sz) in imp.items():
        if V == 0:
            raise ValidationError("impurity strength must be non-zero")
        nbrs = [n for n in (s - 1, s + 1) if frozenset((n, s)) in bonds]
        for n in nbrs:
            new_fields[remap[n]] += bonds[frozenset((n, s))][4] * sz
        if len(nbrs) == 2:
            a, b = nbrs
            ja = 0.5 * (bonds[frozenset((a, s))][2] + bonds[frozenset((a, s))][3])
            jb = 0.5 * (bonds[frozenset((b, s))][2] + bonds[frozenset((b, s))][3])
            J = ja * jb * sz / V
            new_bonds.append((remap[a], remap[b], J, J, 0.0))
    new_bonds.sort(key=lambda t: (min(t[:2]), max(t[:2])))
    meta = dict(spec.meta)
    meta.update(kind="effective", frozen_sites=sites, frozen_strengths=[float(v) for v in strengths],
                frozen_spins=spins, site_map=keep, impurity_sites=[], impurity_strengths=[])
    return HamiltonianSpec(len(keep), tuple(new_bonds), tuple(new_fields), (), meta)


def effective_model(L_left: int, L_right: int, delta: float = 1.0, W: float = 0.25, V: float = 1.0,
                    s: float = 0.5, seed=0) -> HamiltonianSpec:
    """Two blocks joined by a weak link of strength ``s/V`` through a frozen impurity.

    The disorder is drawn exactly as :func:`build_bulk` would for the
    ``L_left + 1 + L_right`` site chain, then the impurity site is removed,
    so the effective and full models of one realization share their fields.
    """
    if V == 0:
        raise ValidationError("V must be non-zero")
    bulk = build_bulk(L_left + 1 + L_right, delta, W, seed)
    return effective_chain(bulk, spins=[s], sites=[L_left], strengths=[V])


def weak_link_chain(n_blocks: int, block_len: int, V, delta: float = 1.0, W: float = 0.25,
                    seed=0, jitter: bool = False, jitter_seed=None) -> HamiltonianSpec:
    """Effective chain of ``n_blocks`` blocks of ``block_len`` sites separated by weak links.

    Built by freezing impurities placed after every ``block_len`` sites of a
    ``n_blocks * (block_len + 1) - 1`` site chain.
    """
    L_full = n_blocks * (block_len + 1) - 1
    sites = [k * (block_len + 1) - 1 for k in range(1, n_blocks)]
    full = add_impurities(build_bulk(L_full, delta, W, seed), sites, V, jitter=jitter, seed=jitter_seed)
    return effective_chain(full)


# folding ----------------------------------------------------------------------


@dataclass
class FoldingBlock:
    spec: HamiltonianSpec
    offset: float
    spins: tuple
    sector: Fraction | None = None
    values: np.ndarray | None = None


@dataclass
class FoldingPlan:
    """Frozen-impurity blocks and the conserved-charge energy offsets."""

    blocks: list

    @property
    def offsets(self):
        return [b.offset for b in self.blocks]

    def solve(self, eigvals=None):
        """Fill in block eigenvalues (default: :func:`impchain.eigen.eigvals_spec`)."""
        if eigvals is None:
            from .eigen import eigvals_spec as eigvals
        for b in self.blocks:
            b.values = eigvals(b.spec, b.sector)
        return self


def folding_plan(full: HamiltonianSpec, sector=None, include_site_disorder: bool = True) -> FoldingPlan:
    """One effective block per configuration of the frozen impurity spins.

    The offset of a block is ``sum_k (V_k + h_k) s_k`` where ``h_k`` is the
    weak disorder on the impurity site (dropped if ``include_site_disorder``
    is false).  With ``sector`` given, each block is restricted to the
    remaining magnetization ``sector - sum_k s_k``.
    """
    sites = list(full.impurity_sites)
    strengths = list(full.impurity_strengths)
    h = bulk_fields(full)
    blocks = []
    for spins in itertools.product((0.5, -0.5), repeat=len(sites)):
        spec = effective_chain(full, spins=spins)
        offset = sum((V + (h[k] if include_site_disorder else 0.0)) * s
                     for k, V, s in zip(sites, strengths, spins))
        sub = None
        if sector is not None:
            sub = Fraction(sector) - sum(Fraction(s).limit_denominator(2) for s in spins)
            if abs(sub) > Fraction(spec.L, 2):
                continue
        blocks.append(FoldingBlock(spec, float(offset), tuple(spins), sub))
    return FoldingPlan(blocks)


def fold_spectra(plan) -> np.ndarray:
    """Union of shifted block spectra, sorted ascending.

    ``plan`` is a solved :class:`FoldingPlan` or a sequence of
    ``(values, offset)`` pairs.
    """
    if isinstance(plan, FoldingPlan):
        pairs = []
        for b in plan.blocks:
            if b.values is None:
                raise ValidationError("folding plan has unsolved blocks; call plan.solve()")
            pairs.append((b.values, b.offset))
    else:
        pairs = list(plan)
    if not pairs:
        return np.empty(0)
    return np.sort(np.concatenate([np.asarray(v, float) + off for v, off in pairs]))


def total_sz(L: int) -> PauliOperator:
    return sum((PauliOperator.spin(L, j, "Z") for j in range(L)), PauliOperator.zero(L))
