import numpy as np
import pytest

from impchain.basis import build_basis
from impchain.errors import ValidationError
from impchain.liom import (birkhoff_charge, build_ladder, charge_norm, direct_residual, full_hamiltonian,
                           growth_law_log_norm, liom_hamiltonian, resummed_norm, residual_curve,
                           residual_curve_from_norms, saturated_charge, variational_charge)
from impchain.models import HamiltonianSpec
from impchain.pauli import PauliOperator, commutator, inner, norm_sq, to_dense


@pytest.fixture(scope="module")
def ladder6():
    bulk, h = liom_hamiltonian(6, 1.0, 0.25, seed=1)
    return bulk, h, build_ladder(bulk, h, 8)


@pytest.fixture(scope="module")
def ladder8():
    return build_ladder(*liom_hamiltonian(8, 1.0, 0.25, seed=0), 13)


def test_first_commutator_matches_dense():
    bulk, h = liom_hamiltonian(4, 1.0, 0.25, seed=3)
    lad = build_ladder(bulk, h, 1)
    b = build_basis(4)
    Hd, Id = bulk.dense(b), to_dense(h, b)
    R1 = 1j * (Hd @ Id - Id @ Hd)
    assert np.allclose(to_dense(lad.R[1], b), R1, atol=1e-12)
    assert lad.norms[1] == pytest.approx(np.trace(R1 @ R1).real / 16, rel=1e-12)


def test_two_site_closed_form():
    # diagonal bulk: each commutator multiplies the flip-flop by the field difference
    h0, h1 = 0.1, 0.7
    bulk = HamiltonianSpec(2, (), (h0, h1), (), {})
    _, h = liom_hamiltonian(2, 1.0, 0.0)
    lad = build_ladder(bulk, h, 4)
    k = np.arange(5)
    assert np.allclose(lad.norms, (h1 - h0) ** (2 * k) / 8)


def test_every_level_is_odd_under_impurity_flip(ladder6):
    _, _, lad = ladder6
    for R in lad.R:
        assert (R.conjugate_by_z(0) + R).max_abs() < 1e-12


def test_trace_identities(ladder6):
    _, _, lad = ladder6
    T = lad.trace_matrix()
    for j in range(4):
        for k in range(4):
            if (j + k) % 2:
                assert abs(T[j, k]) < 1e-12
    # Tr(R_j R_k) depends only on j + k up to the sign (-1)^((k - j) / 2)
    assert T[0, 2] == pytest.approx(-T[1, 1], rel=1e-12)
    assert T[1, 3] == pytest.approx(-T[2, 2], rel=1e-12)
    assert T[0, 4] == pytest.approx(T[2, 2], rel=1e-12)


def test_ladder_rejects_bad_inputs():
    bulk, h = liom_hamiltonian(4, 1.0, 0.25, seed=0)
    with pytest.raises(ValidationError):
        build_ladder(bulk, h, 0)
    with pytest.raises(ValidationError):
        build_ladder(bulk, PauliOperator.spin(4, 0, "Z"), 2)
    with pytest.raises(ValidationError):
        build_ladder(bulk.to_pauli() + PauliOperator.spin(4, 0, "X"), h, 2)


def test_charge_norm_matches_explicit_operator(ladder6):
    _, _, lad = ladder6
    for N in (0, 1, 2, 3):
        q = birkhoff_charge(lad, N, 0.3, 2.5)
        assert q.norm == pytest.approx(4 * norm_sq(q.operator), rel=1e-12)


def test_zero_coupling_is_bare_spin(ladder6):
    bulk, h, lad = ladder6
    q = birkhoff_charge(lad, 2, 0.0, 3.0)
    assert q.norm == 1.0 and q.residual == 0.0
    assert resummed_norm(bulk, h, 0.0, 3.0).norm == pytest.approx(0.25)


def test_linear_residual_matches_direct_commutator(ladder6):
    _, _, lad = ladder6
    eps = 1e-4
    for N in (0, 1, 2):
        q = birkhoff_charge(lad, N, eps, 6.0)
        direct = direct_residual(q.operator, full_hamiltonian(lad, 6.0, eps))
        assert direct == pytest.approx(q.residual, rel=1e-2)


def test_resummed_norm_is_series_limit(ladder6):
    bulk, h, lad = ladder6
    for V in (6.0, 10.0):
        exact = resummed_norm(bulk, h, 0.1, V).normalized - 1
        approx = [charge_norm(lad, N, 0.1, V) - 1 for N in range(4)]
        errs = np.abs(np.array(approx) - exact)
        assert np.all(np.diff(errs) < 0)
        assert errs[-1] < 1e-3 * exact


def test_residual_curve_small_v_grows(ladder8):
    curve, N_argmin, _ = residual_curve(ladder8, 1.0, 0.1, 6)
    g = np.array([c[1] for c in curve])
    assert N_argmin == 0 and np.all(np.diff(g) > 0)


def test_residual_minimum_drops_with_v(ladder8):
    g2 = residual_curve(ladder8, 2.0, 0.1, 6)[2]
    g5 = residual_curve(ladder8, 5.0, 0.1, 6)[2]
    assert g5 < g2


def _growth_law_stationary_k(tau, V):
    # d/dk of k log(2k / (e tau V ln 2k)) vanishes at k = (tau V / 2) ln(2k) exp(1 / ln 2k)
    k = tau * V
    for _ in range(200):
        k = 0.5 * tau * V * np.log(2 * k) * np.exp(1 / np.log(2 * k))
    return k


@pytest.mark.parametrize("V", [3.0, 4.0, 5.0, 8.0])
def test_growth_law_minimizer(V):
    tau = 3.4
    _, N_argmin, _ = residual_curve_from_norms(lambda k: growth_law_log_norm(k, tau), V, 0.1, 200, log=True)
    k = _growth_law_stationary_k(tau, V)
    assert abs(N_argmin - (k - 1) / 2) <= 1


@pytest.mark.xfail(strict=True, reason="the leading-log estimate drops ln(2k)/ln(V), which is not close to 1 "
                                       "at V <= 5; the exact minimizer is tested above")
def test_growth_law_minimizer_leading_log():
    tau = 3.4
    for V in (3.0, 4.0, 5.0):
        _, N_argmin, _ = residual_curve_from_norms(lambda k: growth_law_log_norm(k, tau), V, 0.1, 200, log=True)
        assert abs(N_argmin - 0.25 * tau * V * np.log(V)) <= 2


def test_variational_small_n_matches_perturbative(ladder8):
    for V in (4.0, 8.0):
        for N in (1, 2):
            v = variational_charge(ladder8, N, 0.1, V)
            scaled = v.coeffs * V ** (2 * np.arange(N + 1) + 1)
            # the highest coefficient absorbs the truncated tail of the series
            assert np.allclose(scaled[:-1], 1.0, rtol=0.05)
            if V == 8.0 and N == 1:
                assert scaled[-1] == pytest.approx(1.0, rel=0.05)
            p = birkhoff_charge(ladder8, N, 0.1, V, explicit=False)
            assert v.residual <= p.residual * (1 + 1e-12)


def test_variational_residual_plateaus(ladder8):
    V = 1.5
    var = [variational_charge(ladder8, N, 0.1, V).residual for N in range(1, 7)]
    pert = [birkhoff_charge(ladder8, N, 0.1, V, explicit=False).residual for N in range(1, 7)]
    assert pert[-1] > pert[0]
    assert np.all(np.diff(var) <= 1e-12 * var[0])


def test_saturated_charge_reaches_exact_optimum():
    bulk, h = liom_hamiltonian(4, 1.0, 0.25, seed=0)
    lad = build_ladder(bulk, h, 12)
    res = [saturated_charge(lad, n, 0.1, 3.0).residual for n in (5, 10, 40)]
    assert res[0] > res[1] > res[2]
    # dense oracle: min over all D of || [Sz_0, H_int] + [D, H_0] ||
    b = build_basis(4)
    H0 = bulk.dense(b) + 3.0 * to_dense(PauliOperator.spin(4, 0, "Z"), b)
    s = to_dense(commutator(PauliOperator.spin(4, 0, "Z"), h), b)
    I = np.eye(16)
    Ad = np.kron(I, H0.T) - np.kron(H0, I)
    x = np.linalg.lstsq(Ad, -s.ravel(), rcond=None)[0]
    oracle = 0.1 * np.linalg.norm(s.ravel() + Ad @ x) / 4
    assert oracle < 1e-12 and res[2] < 1e-12


def test_inner_product_normalization():
    assert inner(PauliOperator.spin(3, 1, "Z"), PauliOperator.spin(3, 1, "Z")) == pytest.approx(0.25)
