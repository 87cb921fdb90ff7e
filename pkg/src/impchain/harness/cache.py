"""On-disk eigen-cache keyed by Hamiltonian hash and sector.

Entries are written atomically (temporary file plus rename).  A per-key
advisory lock (``fcntl.flock``) serializes compute-and-store, so concurrent
workers asking for the same key compute it once while the others wait.
"""
from __future__ import annotations

import fcntl
import logging
import os
import tempfile
from contextlib import contextmanager
from fractions import Fraction
from pathlib import Path

from ..eigen import CacheFormatError, decode_eigensystem, eig_spec, encode_eigensystem

log = logging.getLogger(__name__)

ENV_VAR = "IMPCHAIN_CACHE"


def resolve_cache_dir(flag=None):
    """``--cache`` flag if given, else the environment variable, else no cache."""
    if flag:
        return Path(flag)
    env = os.environ.get(ENV_VAR)
    return Path(env) if env else None


class EigenCache:
    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0
        self.computed = 0

    def _key(self, spec_hash: str, sector) -> str:
        s = "all" if sector is None else f"{int(2 * Fraction(sector)):+d}"
        return f"{spec_hash}_{s}"

    def path(self, spec_hash: str, sector) -> Path:
        key = self._key(spec_hash, sector)
        return self.root / key[:2] / f"{key}.eig"

    @contextmanager
    def lock(self, spec_hash: str, sector):
        p = self.path(spec_hash, sector)
        p.parent.mkdir(parents=True, exist_ok=True)
        with open(str(p) + ".lock", "a+") as fh:
            fcntl.flock(fh, fcntl.LOCK_EX)
            try:
                yield
            finally:
                fcntl.flock(fh, fcntl.LOCK_UN)

    def lookup(self, spec_hash: str, sector, want_vectors: bool = False):
        """Decoded EigenSystem or None (corrupt entries count as a miss, with a warning)."""
        p = self.path(spec_hash, sector)
        if not p.exists():
            self.misses += 1
            return None
        try:
            es = decode_eigensystem(p.read_bytes(), expect_hash=spec_hash)
        except CacheFormatError as exc:
            log.warning("eigen-cache entry %s is corrupt (%s); recomputing", p.name, exc)
            self.misses += 1
            return None
        if want_vectors and es.vectors is None:
            self.misses += 1
            return None
        self.hits += 1
        return es

    def store(self, es, spec_hash: str):
        p = self.path(spec_hash, es.sector)
        p.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=p.parent, suffix=".tmp")
        with os.fdopen(fd, "wb") as fh:
            fh.write(encode_eigensystem(es, spec_hash))
        os.replace(tmp, p)

    def get_or_compute(self, spec, sector, want_vectors: bool = True, compute=None):
        """Cached EigenSystem of ``spec`` in ``sector``; computed once under the key lock."""
        h = spec.spec_hash()
        with self.lock(h, sector):
            es = self.lookup(h, sector, want_vectors)
            if es is not None:
                return es
            es = (compute or eig_spec)(spec, sector, want_vectors)
            self.computed += 1
            self.store(es, h)
            return es


class NoCache:
    """Stand-in with the same interface that always computes."""

    hits = misses = computed = 0

    def get_or_compute(self, spec, sector, want_vectors: bool = True, compute=None):
        return (compute or eig_spec)(spec, sector, want_vectors)


def open_cache(root):
    return EigenCache(root) if root else NoCache()
