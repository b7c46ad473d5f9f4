import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from wrot.core import Filtration
from wrot.fields import Functional, VectorField, w
from wrot.malliavin import clark_ocone_lift
from wrot.operators import (astar_concentration, astar_profile, beta_weights, beta_weights_as_printed, det2,
                            lemma_a_bound, operator_adaptedness_check, prop25_check, qnp_analyze, ringrose_field,
                            ringrose_matrix, vector_adaptedness_check)
from wrot.rotations import givens_field

OMEGA = np.random.default_rng(5).standard_normal((20, 4))


def test_qnp_strictly_upper_is_exactly_nilpotent():
    A = np.triu(np.random.default_rng(0).standard_normal((5, 5)), 1)
    d = qnp_analyze(A).diagnostics
    assert d["trace_powers"] < 1e-12 and d["spectral_radius"] == 0 and d["norm_root"] == 0
    assert d["det2_deviation"] < 1e-12


def test_qnp_flags_identity_and_skew():
    rep = qnp_analyze(np.eye(3))
    assert rep.trace_powers[0] == pytest.approx(3.0)
    assert not rep.quasinilpotent
    rep = qnp_analyze(np.array([[0.0, 1.0], [-1.0, 0.0]]))
    assert rep.trace_powers[0] == pytest.approx(2.0)     # |trace A^2| = |-2|
    assert rep.spectral_radius == pytest.approx(1.0)
    assert not rep.quasinilpotent


def test_det2_matches_eigenvalue_product():
    A = np.diag([0.5, -0.2])
    assert det2(A) == pytest.approx(1.5 * math.exp(-0.5) * 0.8 * math.exp(0.2))
    assert det2(np.zeros((3, 3))) == 1


def test_qnp_rejects_bad_input():
    with pytest.raises(ValueError):
        qnp_analyze(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        qnp_analyze(np.zeros((2, 2)), K=1)
    with pytest.raises(np.linalg.LinAlgError):
        qnp_analyze(np.array([[np.nan, 0.0], [0.0, 0.0]]))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 9), st.integers(0, 10_000))
def test_strictly_triangular_matrices_pass_all_diagnostics(n, seed):
    A = np.tril(np.random.default_rng(seed).standard_normal((n, n)), -1)
    assert qnp_analyze(A).all_within


def test_vector_adaptedness_examples():
    f = Filtration(2)
    om = OMEGA[:, :2]
    assert vector_adaptedness_check(VectorField([0, w(0)]), f, om).max_residual == 0
    rep = vector_adaptedness_check(VectorField([w(1), 0]), f, om)
    assert not rep.adapted
    assert rep.residuals[1] == 1.0          # the grid point revealing only e_1
    assert not vector_adaptedness_check(VectorField([w(1), w(0)]), f, om).adapted


def test_adapted_mode_allows_current_coordinate():
    f = Filtration(2)
    u = VectorField([w(0), 0])
    assert not vector_adaptedness_check(u, f, OMEGA[:, :2]).adapted
    assert vector_adaptedness_check(u, f, OMEGA[:, :2], mode="adapted").adapted
    with pytest.raises(ValueError):
        vector_adaptedness_check(u, f, OMEGA[:, :2], mode="other")


def test_givens_field_adaptedness():
    G = givens_field(3)
    om = OMEGA[:, :3]
    assert operator_adaptedness_check(G, Filtration(3), "weak", om).adapted
    assert operator_adaptedness_check(G, Filtration.blocks([1, 2]), "strong", om).adapted
    assert operator_adaptedness_check(G, Filtration.blocks([1, 2]), "star", om).adapted
    # the rotation mixes e_2 and e_3, so splitting them breaks the strong form
    assert not operator_adaptedness_check(G, Filtration(3), "strong", om).adapted
    with pytest.raises(ValueError):
        operator_adaptedness_check(G, Filtration(3), "other", om)


def test_adapted_lift_has_qnp_gradient():
    f = Filtration(2)
    u = clark_ocone_lift(Functional("w1*w2"), f)
    r = prop25_check(u, f, OMEGA[:, :2])
    assert r.adaptedness.max_residual == 0 and r.qnp.all_within and r.holds
    r = prop25_check(VectorField([w(1), w(0)]), f, OMEGA[:, :2])
    assert not r.adaptedness.adapted
    assert r.qnp.trace_powers[0] == pytest.approx(2.0)


def test_ringrose_field_examples():
    u = ringrose_field(4, 1.0)
    expected = [w(1) / 2, w(2) / 4, w(3) / 8, 0]
    assert all(sp.expand(c.expr - e) == 0 for c, e in zip(u.components, expected))
    assert u.divergence(np.ones(4)) == pytest.approx(7 / 8)
    J = u.jacobian(OMEGA)
    np.testing.assert_allclose(J[0], ringrose_matrix(4, 1.0))
    with pytest.raises(ValueError):
        ringrose_field(2, 1.0)
    with pytest.raises(ValueError):
        ringrose_field(4, 0.0)


@pytest.mark.parametrize("n", [8, 16, 40])
def test_ringrose_is_quasinilpotent_not_adapted(n):
    u = ringrose_field(n, 1.0)
    om = np.random.default_rng(n).standard_normal((3, n))
    assert qnp_analyze(ringrose_matrix(n, 1.0)).all_within
    assert not vector_adaptedness_check(u, Filtration(n), om).adapted


def test_ringrose_under_reversed_order_is_adapted():
    # u_i only reads omega_{i+1}, which the reversed order reveals first
    u = ringrose_field(6, 1.0)
    om = np.random.default_rng(2).standard_normal((3, 6))
    assert vector_adaptedness_check(u, Filtration.reversed(6), om).adapted


def _shift_power_oracle(alpha, h, r):
    n = len(h)
    v = list(h)
    for _ in range(r):
        v = [2.0 ** (-(i + 1) * alpha) * v[i + 1] if i + 1 < n else 0.0 for i in range(n)]
    return abs(v[0]) / math.sqrt(sum(x * x for x in v))


def test_shift_power_concentration_against_loop_oracle():
    n = 40
    h = np.array([1.0 / j for j in range(1, n + 1)])
    h /= np.linalg.norm(h)
    ratios, r_star = astar_profile(1.0, h, 10)
    for r in range(1, 11):
        assert ratios[r - 1] == pytest.approx(_shift_power_oracle(1.0, h, r), rel=1e-12)
    assert r_star == 1
    assert ratios[0] == pytest.approx(0.9408, abs=1e-4)
    assert np.all(np.diff(ratios) >= 0)


def test_shift_power_concentration_vanishing_power():
    h = np.eye(6)[3]
    assert astar_concentration(1.0, h, 3).ratio == 1.0
    with pytest.raises(ValueError):
        astar_concentration(1.0, h, 4)
    ratios, r_star = astar_profile(1.0, h)
    assert r_star == 3 and np.isnan(ratios[3])


def test_beta_weights_formula():
    alpha, r, n = 0.7, 3, 9
    direct = [math.prod(2.0 ** (-(i + l) * alpha) for l in range(r)) for i in range(1, n - r + 1)]
    np.testing.assert_allclose(beta_weights(alpha, r, n), direct, rtol=1e-14)
    # the shifted bookkeeping is beta_{i+1} under the same product
    np.testing.assert_allclose(beta_weights_as_printed(alpha, r, n)[:-1], direct[1:], rtol=1e-14)
    M = np.linalg.matrix_power(ringrose_matrix(n, alpha), r)
    np.testing.assert_allclose(np.diag(M, r), direct, rtol=1e-12)


def test_projection_bound_examples():
    e = np.ones(8) / np.sqrt(8)
    assert lemma_a_bound(e, 2) == pytest.approx(math.sqrt(4 / 8), abs=1e-12)
    assert lemma_a_bound(e, 1) == pytest.approx(1.0)
    assert lemma_a_bound(np.eye(8)[0], 8) == 0.0
    with pytest.raises(ValueError):
        lemma_a_bound(e, 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1, 2, 4, 8]))
def test_projection_bound_is_sup_over_unit_vectors(seed, N):
    g = np.random.default_rng(seed)
    e = g.standard_normal(8)
    bound = lemma_a_bound(e, N)
    keep = 8 // N          # the last 8 / N coordinates are outside E_{1 - 1/N}
    for _ in range(5):
        x = g.standard_normal(8)
        x[: 8 - keep] = 0
        if np.linalg.norm(x) > 0:
            assert abs(x @ e) / np.linalg.norm(x) <= bound + 1e-12


def test_lift_is_strictly_triangular():
    F = Functional(w(0) * w(1) + w(1) * w(2) * w(3) - w(0) * w(3))
    u = clark_ocone_lift(F, Filtration(4))
    J = u.jacobian(OMEGA)
    assert np.all(np.triu(J) == 0) or np.all(np.tril(J) == 0)
    assert sp.expand(u.divergence_functional().expr - F.expr) == 0
