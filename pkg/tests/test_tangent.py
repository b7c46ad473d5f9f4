import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from wrot.core import BasisSpec, RngStream, haar_matrix
from wrot.fields import Functional, OperatorField, VectorField, w
from wrot.malliavin import expectation_of, random_polynomial
from wrot.rotations import givens_field, planar_rotation, skew_generator
from wrot.tangent import (KernelSpec, adjoint_probe, brownian_increments, derivation_check,
                          directional_derivative_check, divfree_tangent_check, double_integral_path,
                          exp_identity_check, haar_coordinates, ito_path, kernel_operator, kernel_series_identity,
                          kernel_tangent_compare, mollified_kernel, mollifier_profile, pairing_check,
                          phi_q_identity_check, pushforward_gradient_check, tangent_field,
                          tangent_process, unbiasedness_check, TangentOperator)

J = np.array([[0.0, 1.0], [-1.0, 0.0]])
OM2 = np.random.default_rng(21).standard_normal((50, 2))
OM3 = np.random.default_rng(22).standard_normal((50, 3))


def test_tangent_operator_examples():
    assert TangentOperator(J).functional("w1**2").equals(Functional("-2*w1*w2"))
    L = TangentOperator(np.zeros((2, 2)), VectorField([1, 0]))
    assert L.functional("w1*w2").equals(Functional("w2"))
    assert TangentOperator(J).functional(Functional(3)).expr == 0
    with pytest.raises(ValueError):
        TangentOperator(J).functional("w3")


def test_tangent_operator_is_linear():
    L = TangentOperator(J, VectorField([w(1), 1]))
    F, G = Functional("w1**2*w2"), Functional("w1 - w2**3")
    lhs = L(F * 2 + G * -3, OM2)
    np.testing.assert_allclose(lhs, 2 * L(F, OM2) - 3 * L(G, OM2), atol=1e-10)


def test_directional_derivative_second_order():
    fd, analytic, gap = directional_derivative_check(J, "w1**2", OM2, 0.1)
    np.testing.assert_allclose(analytic, -2 * OM2[:, 0] * OM2[:, 1])
    gaps = [directional_derivative_check(J, "w1**2", OM2, t)[2] for t in (0.1, 0.05, 0.025)]
    for a, b in zip(gaps, gaps[1:]):
        assert abs(a / b / 4 - 1) < 0.2
    # linear functionals: exp(tA) is a rotation, so the FD quotient of a linear map stays close
    _, _, g = directional_derivative_check(J, "w1 + 2*w2", OM2, 1e-3)
    assert g < 1e-6
    assert directional_derivative_check(np.zeros((2, 2)), "w1**2", OM2)[2] == 0
    with pytest.raises(ValueError):
        directional_derivative_check(np.eye(2), "w1", OM2)


def test_derivation_and_control():
    assert derivation_check(J, "w1", "w2", OM2) < 1e-12
    L = TangentOperator(J)
    np.testing.assert_allclose(L("w1*w2", OM2), OM2[:, 0] ** 2 - OM2[:, 1] ** 2, atol=1e-12)
    assert derivation_check(J, "w1**2*w2", 1, OM2) < 1e-12
    assert derivation_check([[0, 1], [0, 0]], "w1", "w2", OM2) > 0.5


def test_exp_identities():
    r1, r2 = exp_identity_check(J, "w1", OM2)
    assert r1 < 1e-9 and r2 < 1e-9
    L = TangentOperator(J)
    np.testing.assert_allclose(L(Functional(sp.exp(w(0))), OM2), -np.exp(OM2[:, 0]) * OM2[:, 1], rtol=1e-12)
    assert exp_identity_check(skew_generator(3, w(0) ** 2 + 1, 1, 2), "w2*w3", OM3, h=[0, 1, 1])[1] < 1e-9
    assert exp_identity_check(J, 0, OM2)[0] == 0


def test_adjoint_probe_examples():
    p = adjoint_probe(J, None, "w2", "w1")
    assert p.lhs == pytest.approx(1.0) and p.transpose_form == pytest.approx(1.0)
    assert p.printed_form == pytest.approx(-1.0)
    p = adjoint_probe(np.zeros((2, 2)), VectorField([1, 0]), "w1**2*w2", "w1 + w2")
    assert p.gap < 1e-12
    p = adjoint_probe(J, None, "w1*w2**2", "w1*w2**2")
    assert abs(p.lhs) < 1e-12
    with pytest.raises(ValueError):
        adjoint_probe(skew_generator(2, w(0), 0, 1), None, "w1", "w2")


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_adjoint_transpose_form_random(seed):
    g = np.random.default_rng(seed)
    Q = g.standard_normal((3, 3))
    u = VectorField([w(int(g.integers(3))), 1, 0])
    F, G = random_polynomial(g, 3, 3, terms=3), random_polynomial(g, 3, 2, terms=3)
    p = adjoint_probe(Q, u, F, G)
    assert p.gap < 1e-9 * (1 + abs(p.lhs))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_skew_tangent_has_mean_zero(seed):
    g = np.random.default_rng(seed)
    A = g.standard_normal((3, 3))
    A = A - A.T
    F = random_polynomial(g, 3, 4)
    assert abs(expectation_of(TangentOperator(A).functional(F))) < 1e-10


def test_unbiasedness():
    m, se = unbiasedness_check(J, "w1", lambda x: 2 * x, 100_000, 0)
    assert abs(m) <= 3 * se
    m, se = unbiasedness_check(J, 5, lambda x: 2 * x, 2000, 0)
    assert m == 0 and se == 0


def test_pushforward_gradient():
    assert pushforward_gradient_check(OperatorField.constant(np.eye(3)), "w1*w2", OM3) < 1e-12
    R = OperatorField.constant(planar_rotation(2, 0.8))
    assert pushforward_gradient_check(R, "w1*w2", OM2) < 1e-12
    assert pushforward_gradient_check(givens_field(3), "w2", OM3) <= 1e-8


def test_tangent_process_examples():
    np.testing.assert_allclose(tangent_process(np.eye(2), OM2).coords, OM2)
    np.testing.assert_allclose(tangent_process(J, OM2).coords, np.column_stack([-OM2[:, 1], OM2[:, 0]]))
    assert np.all(tangent_process(np.zeros((2, 2)), OM2).coords == 0)
    tp = tangent_process(np.eye(4), np.arange(4.0), BasisSpec(4, "haar"))
    assert tp.path is not None and len(tp.path[0]) == 5


def test_phi_q_identity():
    L = OperatorField.constant(np.eye(2)) * Functional("w1")
    Y = L.column_divergence(OM2)
    np.testing.assert_allclose(Y, np.column_stack([OM2[:, 0] ** 2 - 1, OM2[:, 0] * OM2[:, 1]]), atol=1e-12)
    assert phi_q_identity_check("w1", np.eye(2), OM2) < 1e-12
    assert phi_q_identity_check("w2", J, OM2) < 1e-12
    assert phi_q_identity_check(1, J, OM2) == 0


def test_pairing_examples():
    pr = pairing_check(J, Functional("w1**2"), OM2)
    np.testing.assert_allclose(pr.lhs, -2 * OM2[:, 0] * OM2[:, 1], atol=1e-12)
    assert pr.residual < 1e-10 and pr.tangent_residual < 1e-10
    pr = pairing_check(J, VectorField([2, -1]), OM2)
    assert pr.residual < 1e-12
    S = np.array([[1.0, 0.5], [0.5, 2.0]])
    pr = pairing_check(S, Functional("w1**2 + w1*w2"), OM2)
    assert pr.residual < 1e-10
    assert pr.tangent_residual > 0.1


def test_divfree_tangent():
    assert divfree_tangent_check(J, OM2) == 0
    Q = OperatorField(sp.Matrix([[0, 0, 0], [0, 0, -w(0) ** 2], [0, w(0) ** 2, 0]]))
    assert divfree_tangent_check(Q, OM3) <= 1e-10
    assert divfree_tangent_check(np.array([[1.0, 0.0], [0.0, 0.0]]), OM2) > 0.1
    assert tangent_field(OperatorField.constant(J)).equals(VectorField([-w(1), w(0)]))


def test_haar_coordinates_recover_increments():
    dw = brownian_increments(3, 8, 2, seed=1)
    om = haar_coordinates(dw).reshape(3, 2, 8)
    back = np.einsum("kx,sck->sxc", haar_matrix(8), om) / 8
    np.testing.assert_allclose(back, dw, atol=1e-14)


@pytest.mark.parametrize("level", [2, 4, 6])
def test_constant_b_kernel_is_exact(level):
    B = np.array([[1.0, 2.0], [-0.5, 3.0]])
    k = KernelSpec(2, b=lambda s: np.broadcast_to(B, np.shape(s) + (2, 2)))
    _, _, gap = kernel_tangent_compare(k, level, samples=50, seed=level)
    assert gap < 1e-12


def test_zero_kernel_gives_zero_paths():
    k = KernelSpec(2, b=lambda s: np.zeros(np.shape(s) + (2, 2)))
    s, i, gap = kernel_tangent_compare(k, 3, samples=5)
    assert np.all(s == 0) and np.all(i == 0) and gap == 0


def test_ito_path_with_identity_is_brownian_path():
    dw = brownian_increments(4, 16, 2, seed=2)
    path = ito_path(np.broadcast_to(np.eye(2), (16, 2, 2)), dw)
    np.testing.assert_allclose(path[:, 1:], np.cumsum(dw, axis=1), atol=1e-14)


def test_kernel_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec(2)
    with pytest.raises(ValueError):
        KernelSpec(2, b=lambda s: s, q=lambda a, b: a)
    with pytest.raises(ValueError):
        double_integral_path(KernelSpec(2, b=lambda s: s), np.zeros((1, 4, 2)))


def test_q_kernel_series_equals_double_integral():
    smooth = lambda s: np.stack([np.stack([np.cos(s), s], -1), np.stack([-s, np.ones_like(s)], -1)], -2)
    k = KernelSpec(2, q=mollified_kernel(smooth, 0.25))
    assert kernel_series_identity(k, 4, samples=10) < 1e-10
    M = kernel_operator(k, 8)
    assert M.shape == (16, 16)


def test_mollifier_gap_halves():
    smooth = lambda s: np.stack([np.stack([np.cos(2 * np.pi * s), s], -1),
                                 np.stack([-s * s, np.sin(2 * np.pi * s) + 1], -1)], -2)
    gaps = mollifier_profile(smooth, 2, [0.1, 0.05, 0.025], level=10, samples=100)
    ratios = gaps[:-1] / gaps[1:]
    assert np.all(np.abs(ratios / 2 - 1) < 0.2)
    const = lambda s: np.broadcast_to(np.eye(2), np.shape(s) + (2, 2))
    assert mollifier_profile(const, 2, [0.1], level=8, samples=10)[0] < 1e-12


def test_kernel_inputs_are_deterministic():
    a = brownian_increments(5, 8, 2, seed=3)
    np.testing.assert_array_equal(a, brownian_increments(5, 8, 2, seed=3))
    assert not np.array_equal(a, RngStream(3).normal(5, 16).reshape(5, 8, 2) / np.sqrt(8))
