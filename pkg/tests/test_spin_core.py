import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from math import comb

from impchain.basis import all_sectors, build_basis, default_sector
from impchain.errors import SectorError, ValidationError
from impchain.models import build_bulk
from impchain.pauli import (PauliOperator, coefficient_matrix, commutator, from_coefficients, from_dense,
                            inner, multiply, norm_sq, pauli_product, to_dense, to_sparse, trace_product)

# dense single-site oracle
_P = {"I": np.eye(2), "X": np.array([[0, 1], [1, 0]]), "Y": np.array([[0, 1j], [-1j, 0]]),
      "Z": np.diag([-1.0, 1.0])}


def dense_string(label):
    """Site 0 is the leftmost label character and the least significant bit."""
    M = np.array([[1.0]])
    for ch in reversed(label):
        M = np.kron(M, _P[ch])
    return M


def dense_op(op):
    return sum(c * dense_string(lbl) for lbl, c in op.terms().items())


labels = st.integers(1, 5).flatmap(lambda L: st.lists(st.sampled_from("IXYZ"), min_size=L, max_size=L)
                                   .map("".join))


# basis -------------------------------------------------------------------------------


@pytest.mark.parametrize("L,sector,dim", [(3, 0.5, 3), (4, 0, 6), (10, None, 1024)])
def test_basis_dimension(L, sector, dim):
    assert build_basis(L, sector).dim == dim


def test_basis_parity_rejected():
    with pytest.raises(ValidationError, match="incompatible"):
        build_basis(4, 0.5)


@given(st.integers(1, 10), st.data())
def test_basis_invariants(L, data):
    sectors = all_sectors(L)
    s = data.draw(st.sampled_from(sectors))
    b = build_basis(L, s)
    n_up = int(s + L / 2)
    assert b.dim == comb(L, n_up)
    pop = np.array([int(x).bit_count() for x in b.states])
    assert np.all(pop - L / 2 == s)
    assert np.all(np.diff(b.states.astype(np.int64)) > 0)
    assert np.array_equal(b.index(b.states), np.arange(b.dim))


def test_default_sector():
    assert default_sector(8) == 0
    assert default_sector(13) == 0.5


# Pauli algebra -----------------------------------------------------------------------


@pytest.mark.parametrize("a,b,phase,res", [("X", "Y", 1j, "Z"), ("Z", "Z", 1, "I"), ("XI", "IY", 1, "XY")])
def test_pauli_product_table(a, b, phase, res):
    assert pauli_product(a, b) == (phase, res)


def test_pauli_product_length_mismatch():
    with pytest.raises(ValidationError):
        pauli_product("X", "XY")


@settings(max_examples=60)
@given(st.data())
def test_pauli_product_matches_dense(data):
    a = data.draw(labels)
    b = data.draw(st.lists(st.sampled_from("IXYZ"), min_size=len(a), max_size=len(a)).map("".join))
    phase, c = pauli_product(a, b)
    assert np.allclose(dense_string(a) @ dense_string(b), phase * dense_string(c))


def test_commutator_examples():
    Sz, Sx, Sy = (PauliOperator.spin(1, 0, ax) for ax in "ZXY")
    assert commutator(Sz, Sx).allclose(Sy.scale(1j))
    H = build_bulk(4, 1.0, 0.0).to_pauli()
    assert len(commutator(H, H)) == 0
    Mz = sum((PauliOperator.spin(4, j, "Z") for j in range(4)), PauliOperator.zero(4))
    assert len(commutator(H, Mz)) == 0


def _random_op(rng, L, n):
    terms = {"".join(rng.choice(list("IXYZ"), L)): rng.normal() + 1j * rng.normal() for _ in range(n)}
    return PauliOperator.from_terms(L, terms)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_product_and_commutator_match_dense(L, seed):
    rng = np.random.default_rng(seed)
    a, b = _random_op(rng, L, 5), _random_op(rng, L, 5)
    A, B = dense_op(a), dense_op(b)
    assert np.allclose(dense_op(multiply(a, b)) if len(multiply(a, b)) else 0, A @ B)
    assert np.allclose(dense_op(commutator(a, b)) if len(commutator(a, b)) else 0, A @ B - B @ A)
    assert np.isclose(inner(a, b), np.trace(A.conj().T @ B) / 2**L)


def test_norm_examples():
    assert norm_sq(PauliOperator.spin(2, 0, "Z")) == pytest.approx(0.25)
    h_int = multiply(PauliOperator.spin(2, 1, "X"), PauliOperator.spin(2, 0, "X")) + \
        multiply(PauliOperator.spin(2, 1, "Y"), PauliOperator.spin(2, 0, "Y"))
    assert norm_sq(h_int) == pytest.approx(0.125)


def test_norm_of_first_commutator_matches_dense():
    L = 4
    H = build_bulk(L, 1.0, 0.0)
    bulk = H.to_pauli()
    h_int = multiply(PauliOperator.spin(L, 1, "X"), PauliOperator.spin(L, 0, "X")) + \
        multiply(PauliOperator.spin(L, 1, "Y"), PauliOperator.spin(L, 0, "Y"))
    R1 = commutator(bulk, h_int).scale(1j)
    Hd, Id = dense_op(bulk), dense_op(h_int)
    R1d = 1j * (Hd @ Id - Id @ Hd)
    assert norm_sq(R1) == pytest.approx(np.trace(R1d @ R1d).real / 2**L, rel=1e-12)


def test_hermiticity_assertion():
    op = PauliOperator.from_terms(1, {"X": 1j})
    with pytest.raises(ValidationError):
        norm_sq(op, assert_hermitian=True)


def test_trace_product_examples():
    Sz, Sx = PauliOperator.spin(1, 0, "Z"), PauliOperator.spin(1, 0, "X")
    assert trace_product(Sz, Sx) == 0
    a = PauliOperator.from_terms(2, {"XZ": 0.3, "YY": -1.2})
    assert trace_product(a, a) == pytest.approx(norm_sq(a))


def test_drop_tolerance():
    op = PauliOperator.from_terms(2, {"XX": 1.0, "ZZ": 1e-16})
    assert len(op) == 1


def test_to_dense_examples():
    b1 = build_basis(1)
    assert np.allclose(to_dense(PauliOperator.spin(1, 0, "Z"), b1), np.diag([-0.5, 0.5]))
    ff = multiply(PauliOperator.spin(2, 1, "X"), PauliOperator.spin(2, 0, "X")) + \
        multiply(PauliOperator.spin(2, 1, "Y"), PauliOperator.spin(2, 0, "Y"))
    assert np.allclose(to_dense(ff, build_basis(2, 0)), [[0, 0.5], [0.5, 0]])


def test_to_dense_sector_block_matches_full():
    spec = build_bulk(3, 1.0, 0.0)
    spec = type(spec)(3, spec.bonds, (0.1, -0.2, 0.05), (), spec.meta)
    full_b, sec_b = build_basis(3), build_basis(3, 0.5)
    full = to_dense(spec.to_pauli(), full_b)
    idx = full_b.index(sec_b.states)
    assert np.allclose(to_dense(spec.to_pauli(), sec_b), full[np.ix_(idx, idx)], atol=1e-14)
    assert np.allclose(to_sparse(spec.to_pauli(), sec_b).toarray(), full[np.ix_(idx, idx)], atol=1e-14)


def test_to_dense_full_space_matches_kron_oracle():
    rng = np.random.default_rng(3)
    op = _random_op(rng, 3, 6)
    assert np.allclose(to_dense(op, build_basis(3)), dense_op(op))


def test_sector_violation_rejected():
    with pytest.raises(SectorError):
        to_dense(PauliOperator.spin(2, 0, "X"), build_basis(2, 0))


def test_from_dense_roundtrip():
    rng = np.random.default_rng(1)
    op = _random_op(rng, 3, 7)
    assert from_dense(dense_op(op), 3).allclose(op)


def test_coefficient_matrix_roundtrip():
    rng = np.random.default_rng(2)
    ops = [_random_op(rng, 3, 4) for _ in range(3)]
    keys, C = coefficient_matrix(ops)
    for op, row in zip(ops, C):
        assert from_coefficients(3, keys, row).allclose(op)
