import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from impchain.basis import build_basis
from impchain.eigen import (CacheFormatError, decode_eigensystem, eig_all_sectors, eig_full, eig_spec,
                            encode_eigensystem)
from impchain.errors import CapacityError, ValidationError
from impchain.models import build_bulk


def test_two_by_two():
    es = eig_full(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert np.allclose(es.values, [-1, 1])


def test_diagonal_gives_permutation_vectors():
    es = eig_full(np.diag([3.0, 1.0, 2.0]))
    assert np.allclose(es.values, [1, 2, 3])
    assert np.allclose(np.abs(es.vectors), np.eye(3)[:, [1, 2, 0]])


def test_asymmetric_rejected():
    with pytest.raises(ValidationError):
        eig_full(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_capacity_limit():
    with pytest.raises(CapacityError):
        eig_full(np.eye(5), max_dim=4)


def test_reconstruction_l12():
    spec = build_bulk(12, 1.0, 0.25, seed=0)
    es = eig_spec(spec, 0)
    M = spec.dense(es.basis)
    assert es.dim == 924
    rec = (es.vectors * es.values) @ es.vectors.T
    assert np.max(np.abs(rec - M)) < 1e-9
    assert es.residual(M) <= 1e-9 * np.linalg.norm(M, 2)
    assert es.orthogonality_error() <= 1e-10
    assert np.all(np.diff(es.values) >= 0)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**32 - 1))
def test_random_symmetric_invariants(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n))
    M = A + A.T
    es = eig_full(M)
    assert np.all(np.diff(es.values) >= 0)
    assert es.residual(M) <= 1e-9 * max(1.0, np.linalg.norm(M, 2))
    assert es.orthogonality_error() <= 1e-10
    assert np.allclose(eig_full(M, want_vectors=False).values, es.values, atol=1e-10)


def test_all_sectors_cover_full_spectrum():
    spec = build_bulk(6, 1.0, 0.25, seed=1)
    parts = eig_all_sectors(spec, want_vectors=False)
    merged = np.sort(np.concatenate([es.values for es in parts.values()]))
    full = np.linalg.eigvalsh(spec.dense(build_basis(6)))
    assert np.allclose(merged, full, atol=1e-12)


def test_cache_roundtrip_bitwise():
    spec = build_bulk(8, 1.0, 0.25, seed=2)
    es = eig_spec(spec, 0)
    back = decode_eigensystem(encode_eigensystem(es, spec.spec_hash()), expect_hash=spec.spec_hash())
    assert np.array_equal(back.values, es.values) and np.array_equal(back.vectors, es.vectors)
    assert back.sector == 0 and np.array_equal(back.basis.states, es.basis.states)


def test_cache_corruption_detected():
    spec = build_bulk(6, 1.0, 0.25, seed=2)
    blob = bytearray(encode_eigensystem(eig_spec(spec, 0), spec.spec_hash()))
    blob[-3] ^= 0xFF
    with pytest.raises(CacheFormatError):
        decode_eigensystem(bytes(blob))
    with pytest.raises(CacheFormatError):
        decode_eigensystem(encode_eigensystem(eig_spec(spec, 0), spec.spec_hash()), expect_hash="0" * 64)
