import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from wrot.chaos import ChaosExpansion, ou_apply, ou_inverse
from wrot.core import Filtration
from wrot.fields import Functional, VectorField, w
from wrot.malliavin import (clark_ocone_lift, conditional_expectation, decompose_exact_divfree, divergence,
                            energy_identity_check, expectation_of, grad, lemma21_check, ou_representation,
                            random_field, random_polynomial)
from wrot.quadrature import expectation, gaussian_moment, integrate_out

rng = np.random.default_rng(42)
OMEGA = rng.standard_normal((10, 3))


def test_grad_examples():
    np.testing.assert_allclose(grad(Functional("w1*w2"), [0.3, 0.7, 1.1]), [0.7, 0.3, 0.0])
    assert np.all(grad(Functional(5), [1.0, 2.0]) == 0)
    fd = Functional.from_callable(lambda z: np.sin(z[..., 0]), 1)
    assert abs(grad(fd, [0.3])[0] - math.cos(0.3)) < 1e-9
    fd2 = Functional("sin(w1)", mode="finite_difference")
    assert abs(fd2.grad([0.3])[0] - math.cos(0.3)) < 1e-9


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_grad_rejects_nonfinite():
    with pytest.raises(FloatingPointError):
        Functional("1/w1")([0.0])


def test_divergence_examples():
    z = OMEGA[:, :2]
    np.testing.assert_allclose(divergence(VectorField([1, 0]), z), z[:, 0])
    np.testing.assert_allclose(divergence(VectorField([w(0), 0]), z), z[:, 0] ** 2 - 1)
    assert np.abs(divergence(VectorField([w(1), -w(0)]), z)).max() == 0


def test_divergence_product_rule():
    F = Functional("w1**2*w2 + w3")
    u = VectorField(["w2", "w1*w3", "1"])
    Fu = VectorField([F.expr * c.expr for c in u.components])
    lhs = divergence(Fu, OMEGA)
    rhs = F(OMEGA) * divergence(u, OMEGA) - (F.grad(OMEGA) * u(OMEGA)).sum(-1)
    assert np.abs(lhs - rhs).max() < 1e-10


def test_energy_identity_examples():
    assert energy_identity_check(VectorField([1]))[:2] == pytest.approx((1.0, 1.0))
    lhs, rhs, gap = energy_identity_check(VectorField([w(1), 0]))
    assert lhs == pytest.approx(1.0) and gap < 1e-12
    lhs, rhs, gap = energy_identity_check(VectorField([w(1), w(0)]))
    assert lhs == pytest.approx(4.0) and rhs == pytest.approx(4.0)


def test_energy_identity_rejects_low_order():
    with pytest.raises(ValueError):
        energy_identity_check(VectorField([w(0) ** 3]), order=2)


def test_quadrature_moments():
    assert [gaussian_moment(p) for p in range(7)] == [1, 0, 1, 0, 3, 0, 15]
    val = expectation(lambda z: z[:, 0] ** 4 * z[:, 1] ** 2, 2, degree=6)
    assert val == pytest.approx(3.0, abs=1e-12)


def test_chaos_parseval():
    g = np.random.default_rng(1)
    for _ in range(5):
        F = random_polynomial(g, 4, 4)
        c = ChaosExpansion.from_functional(F, range(4))
        second = float(integrate_out(sp.expand(F.expr**2), range(4)))
        assert abs(second - float(c.second_moment())) < 1e-10
        assert abs(float(c.mean) - expectation_of(F)) < 1e-12


def test_ou_operator_examples():
    H2 = ChaosExpansion.from_functional(Functional("w1**2 - 1"))
    assert ou_apply(H2).to_functional().equals(Functional("2*w1**2 - 2"))
    assert ou_inverse(H2).to_functional().equals(Functional("(w1**2 - 1)/2"))
    F = ChaosExpansion.from_functional(Functional("w1*w2"))
    assert ou_inverse(F).to_functional().equals(Functional("w1*w2/2"))
    with pytest.raises(ValueError):
        ou_inverse(ChaosExpansion.from_functional(Functional("w1**2")))


def test_ou_apply_inverse_roundtrip():
    F = Functional("w1*w2 + w2**3 - 3*w2 + w1**2 - 1")
    c = ChaosExpansion.from_functional(F)
    assert ou_apply(ou_inverse(c)).to_functional().equals(F)


def test_ou_representation_recovers_functional():
    F = Functional(sp.expand(w(0) * w(1) + sp.hermite_prob(3, w(1))))
    u = ou_representation(F)
    z = rng.standard_normal((10, 2))
    assert np.abs(u.divergence(z) - F(z)).max() < 1e-12


def test_decompose_examples():
    ue, udf = decompose_exact_divfree(VectorField([w(1), w(0)]))
    assert ue.equals(VectorField([w(1), w(0)])) and udf.equals(VectorField.zeros(2))
    ue, udf = decompose_exact_divfree(VectorField([w(1), -w(0)]))
    assert ue.equals(VectorField.zeros(2)) and udf.equals(VectorField([w(1), -w(0)]))
    ue, udf = decompose_exact_divfree(VectorField([w(1), 0]))
    assert ue.equals(VectorField([w(1) / 2, w(0) / 2]))
    assert udf.equals(VectorField([w(1) / 2, -w(0) / 2]))
    assert np.abs(udf.divergence(OMEGA[:, :2])).max() == 0


def test_decompose_random_fields():
    g = np.random.default_rng(3)
    for _ in range(5):
        u = random_field(g, 3, 2)
        ue, udf = decompose_exact_divfree(u)
        assert (ue + udf).equals(u.pad(ue.dim))
        assert np.abs(udf.divergence(OMEGA)).max() < 1e-10
        assert abs(expectation_of(ue.dot(udf))) < 1e-10


def test_decompose_rejects_non_polynomial():
    with pytest.raises(ValueError):
        decompose_exact_divfree(VectorField(["sin(w1)"]))


def test_conditional_expectation_examples():
    assert conditional_expectation(Functional("w1*w2"), 1).expr == 0
    assert conditional_expectation(Functional("w1**2*w2**2"), 1).equals(Functional("w1**2"))
    c = conditional_expectation(Functional("exp(w2)"), 1, order=20)
    assert abs(float(c.expr) - math.exp(0.5)) < 1e-10
    with pytest.raises(ValueError):
        conditional_expectation(Functional("w1*w2**6"), 1, order=2)


def test_clark_ocone_examples():
    f = Filtration(2)
    assert clark_ocone_lift(Functional("w1*w2"), f).equals(VectorField([0, w(0)]))
    assert clark_ocone_lift(Functional("w1"), Filtration(1)).equals(VectorField([1]))
    # the second Hermite polynomial needs the current coordinate
    assert clark_ocone_lift(Functional("w1**2"), Filtration(1), "adapted").equals(VectorField([w(0)]))
    assert clark_ocone_lift(Functional("w1**2"), Filtration(1)).equals(VectorField([0]))
    with pytest.raises(ValueError):
        clark_ocone_lift(Functional("w1*w3"), Filtration(2))


def test_clark_ocone_random_multiaffine():
    g = np.random.default_rng(7)
    f = Filtration(4)
    z = rng.standard_normal((20, 4))
    for _ in range(10):
        F = random_polynomial(g, 4, 3, multiaffine=True)
        u = clark_ocone_lift(F, f)
        assert np.abs(u.divergence(z) - (F(z) - expectation_of(F))).max() < 1e-12
        lhs, _, _ = energy_identity_check(u)
        norm = sum(expectation_of(Functional(c.expr**2)) for c in u.components)
        assert abs(lhs - norm) < 1e-10


def test_clark_ocone_adapted_general_polynomials():
    g = np.random.default_rng(8)
    f = Filtration(3)
    for _ in range(10):
        F = random_polynomial(g, 3, 4)
        u = clark_ocone_lift(F, f, "adapted")
        assert np.abs(u.divergence(OMEGA) - (F(OMEGA) - expectation_of(F))).max() < 1e-12


def test_skew_column_divergence_examples():
    A = np.array([[0, 1, -2], [-1, 0, 3], [2, -3, 0]])
    v = [VectorField(list(A[:, i])) for i in range(3)]
    r = lemma21_check(v, OMEGA)
    assert r.condition_holds and r.divergence_residual < 1e-12
    S = sp.Matrix([[0, w(0), 1], [-w(0), 0, w(0) ** 2], [-1, -w(0) ** 2, 0]])
    r = lemma21_check([VectorField(list(S[:, i])) for i in range(3)], OMEGA)
    assert r.condition_holds and r.divergence_residual < 1e-10
    r = lemma21_check([VectorField([1])], OMEGA[:, :1])
    assert not r.condition_holds
    # u = delta(e_1) e_1 = omega_1 e_1, whose divergence is omega_1^2 - 1
    assert r.divergence_residual == pytest.approx(np.abs(OMEGA[:, 0] ** 2 - 1).max())


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_adjointness_of_grad_and_divergence(seed):
    g = np.random.default_rng(seed)
    F = random_polynomial(g, 3, 3, terms=3)
    u = random_field(g, 3, 2, terms=2)
    Fd = F.expr * u.divergence_functional().expr
    pair = F.gradient_field(3).dot(u.pad(3)).expr
    lhs = float(integrate_out(sp.expand(Fd), range(3)))
    rhs = float(integrate_out(sp.expand(pair), range(3)))
    assert abs(lhs - rhs) < 1e-10


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
def test_divergence_is_linear(seed, a, b):
    g = np.random.default_rng(seed)
    u, v = random_field(g, 3, 2), random_field(g, 3, 2)
    lhs = (u * a + v * b).divergence(OMEGA)
    rhs = a * u.divergence(OMEGA) + b * v.divergence(OMEGA)
    assert np.abs(lhs - rhs).max() < 1e-9 * (1 + np.abs(rhs).max())
