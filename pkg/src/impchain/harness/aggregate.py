"""Ordered reduction of per-realization partial results with jackknife errors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError


@dataclass(frozen=True)
class Partial:
    """Sufficient statistics of one realization.

    ``sums[name]`` and ``counts[name]`` define the pooled estimator
    ``sum(sums) / sum(counts)``; ``transform`` maps that ratio to the
    reported value (``"exp"`` for geometric means of logs).
    """

    index: int
    kind: str
    sums: dict
    counts: dict
    transform: dict = field(default_factory=dict)


@dataclass
class Aggregate:
    kind: str
    values: dict
    stderr: dict
    n: int
    indices: tuple


def _apply(t, x):
    return float(np.exp(x)) if t == "exp" else float(x)


def jackknife(sums, counts, transform=None):
    """Pooled estimate and leave-one-out jackknife standard error."""
    s = np.asarray(sums, dtype=float)
    c = np.asarray(counts, dtype=float)
    n = len(s)
    est = _apply(transform, s.sum() / c.sum())
    if n < 2:
        return est, float("nan")
    loo = np.array([_apply(transform, (s.sum() - s[i]) / (c.sum() - c[i])) for i in range(n)])
    err = np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2))
    return est, float(err)


def aggregate(partials, kind: str | None = None) -> Aggregate:
    """Pool partials in realization-index order.

    Raises
    ------
    ValidationError
        Empty input, mixed kinds, mismatched statistic names or duplicate indices.
    """
    partials = sorted(partials, key=lambda p: p.index)
    if not partials:
        raise ValidationError("nothing to aggregate")
    kinds = {p.kind for p in partials}
    if len(kinds) != 1 or (kind is not None and kinds != {kind}):
        raise ValidationError(f"heterogeneous partial kinds: {sorted(kinds)}")
    names = set(partials[0].sums)
    if any(set(p.sums) != names for p in partials):
        raise ValidationError("partials carry different statistics")
    idx = [p.index for p in partials]
    if len(set(idx)) != len(idx):
        raise ValidationError("duplicate realization index")
    values, errs = {}, {}
    for name in sorted(names):
        t = partials[0].transform.get(name)
        values[name], errs[name] = jackknife([p.sums[name] for p in partials],
                                             [p.counts[name] for p in partials], t)
    return Aggregate(kinds.pop(), values, errs, len(partials), tuple(idx))


def mean_partial(index: int, kind: str, samples: dict, log: bool = False) -> Partial:
    """Partial for plain (or geometric, ``log=True``) means of sample arrays."""
    sums, counts, tr = {}, {}, {}
    for name, x in samples.items():
        x = np.asarray(x, dtype=float).ravel()
        if log:
            x = np.log(x[x > 0])
            tr[name] = "exp"
        sums[name] = float(x.sum())
        counts[name] = float(len(x))
    return Partial(index, kind, sums, counts, tr)
