import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_admissible, random_correction
from toricgk.polytope import AffineFunction, interior_quadrature, load_builtin
from toricgk.potential import (
    PoissonDatum, PolynomialField, SymplecticPotential, admissibility_check, boundary_layer_nodes,
    gauged_basis, guillemin_potential, hermitian_margin, hessian, real_embedding,
)


def test_segment_value_and_hessian(segment):
    u0 = guillemin_potential(segment)
    assert u0(np.array([0.5])) == pytest.approx(-math.log(2) / 2, abs=1e-15)
    assert hessian(u0, [0.5])[0, 0] == pytest.approx(2.0, abs=1e-14)
    assert hessian(u0, [0.25])[0, 0] == pytest.approx(8 / 3, abs=1e-14)


def test_square_center_hessian(square):
    assert np.allclose(hessian(guillemin_potential(square), [0.5, 0.5]), 2 * np.eye(2), atol=1e-14)


def test_simplex_barycenter_hessian(simplex):
    G = hessian(guillemin_potential(simplex), [1 / 3, 1 / 3])
    assert np.allclose(G, [[3, 1.5], [1.5, 3]], atol=1e-13)


def test_quadratic_correction_adds_twice_q(square):
    Q = np.array([[0.3, -0.1], [-0.1, 0.2]])
    c = square.barycenter
    v = PolynomialField(c, {(2, 0): Q[0, 0], (1, 1): 2 * Q[0, 1], (0, 2): Q[1, 1]})
    u0 = guillemin_potential(square)
    x = np.array([[0.2, 0.7], [0.6, 0.4]])
    assert np.allclose(u0.with_correction(v).hessian(x), u0.hessian(x) + 2 * Q, atol=1e-14)


def test_hessian_rejects_exterior_points(square):
    with pytest.raises(ValueError):
        hessian(guillemin_potential(square), [1.5, 0.5])


# --- admissibility ---

def test_guillemin_admissible_with_eigen_margin(polys):
    for poly in polys.values():
        u0 = guillemin_potential(poly)
        q = interior_quadrature(poly, 3)
        rep = admissibility_check(u0, PoissonDatum.zero(poly.dim), q)
        assert rep.admissible
        allx = np.vstack([q.nodes, boundary_layer_nodes(poly)])
        assert rep.margin == pytest.approx(np.linalg.eigvalsh(u0.hessian(allx)).min(), rel=1e-12)
        assert rep.boundary_ratio_bounded


def test_square_b_margin_closed_form(square):
    b = 0.1
    u0 = guillemin_potential(square)
    q = interior_quadrature(square, 3)
    rep = admissibility_check(u0, PoissonDatum.planar(b), q)
    allx = np.vstack([q.nodes, boundary_layer_nodes(square)])
    p = 2 * allx[:, 0] * (1 - allx[:, 0])
    r = 2 * allx[:, 1] * (1 - allx[:, 1])
    a, d = 1 / p, 1 / r
    lam = (a + d) / 2 - np.sqrt(((a - d) / 2) ** 2 + b ** 2)
    assert rep.admissible
    assert rep.margin == pytest.approx(lam.min(), rel=1e-10)
    # the diagonal reduction G + BHB = diag(1/p - b²q, 1/q - b²p) is positive
    assert np.all(1 / p - b ** 2 * r > 0) and np.all(1 / r - b ** 2 * p > 0)


def test_segment_concave_correction_inadmissible(segment):
    u = guillemin_potential(segment).with_correction(PolynomialField((Fraction(0),), {(2,): -10.0}))
    rep = admissibility_check(u, PoissonDatum.zero(1), interior_quadrature(segment, 3))
    assert not rep.admissible
    assert hessian(u, [0.5])[0, 0] == pytest.approx(2 - 20)


def test_real_embedding_matches_hermitian_eigenvalues():
    rng = np.random.default_rng(3)
    for _ in range(10):
        S = rng.standard_normal((3, 3))
        G = S @ S.T + np.eye(3)
        B = rng.standard_normal((3, 3))
        B = B - B.T
        herm = np.linalg.eigvalsh(G + 1j * B)
        real = np.linalg.eigvalsh(real_embedding(G, B))
        assert np.allclose(np.repeat(herm, 2), real, atol=1e-12)
        assert hermitian_margin(G, B) == pytest.approx(herm.min(), abs=1e-12)


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.0, 1.0), st.floats(0, 0.8))
def test_linear_convexity(seed, t, b):
    sq = load_builtin("square")
    rng = np.random.default_rng(seed)
    datum = PoissonDatum.planar(b)
    ua = random_admissible(sq, datum, rng)
    ub = random_admissible(sq, datum, rng)
    q = interior_quadrature(sq, 3)
    mix = ua.with_correction(ua.correction.scaled(1 - t) + ub.correction.scaled(t))
    assert admissibility_check(mix, datum, q).admissible


# --- gauge ---

@given(st.integers(0, 2 ** 32 - 1), st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
def test_gauge_invariance(seed, c, g1, g2):
    sq = load_builtin("square")
    v = random_correction(sq, np.random.default_rng(seed))
    aff = PolynomialField.from_affine(AffineFunction(c, (g1, g2)), sq.barycenter)
    assert (v + aff).gauged(sq.barycenter).coefficients == v.gauged(sq.barycenter).coefficients


def test_gauged_potential_is_flat_at_basepoint(square):
    rng = np.random.default_rng(0)
    v = PolynomialField((Fraction(1, 5), Fraction(1, 3)),
                        {(0, 0): 1.0, (1, 0): 0.5, (2, 1): 0.3, (0, 3): -0.2, (1, 1): 0.1})
    gv = v.gauged(square.barycenter)
    x0 = np.array([[0.5, 0.5]])
    assert abs(gv(x0)[0]) < 1e-14
    assert np.allclose(gv.gradient(x0), 0, atol=1e-14)
    pts = rng.uniform(0.1, 0.9, (5, 2))
    assert np.allclose(gv.hessian(pts), v.hessian(pts), atol=1e-13)


def test_gauged_basis_excludes_affine():
    assert all(sum(a) >= 2 for a in gauged_basis(2, 6))
    assert len(gauged_basis(2, 4)) == 15 - 3


# --- Hessian against finite differences ---

@given(st.integers(0, 2 ** 32 - 1))
def test_hessian_fd_second_order(seed):
    poly = load_builtin("hirzebruch1")
    rng = np.random.default_rng(seed)
    u = guillemin_potential(poly).with_correction(random_correction(poly, rng))
    h = 1e-3
    x = np.array([0.6, 0.4]) + rng.uniform(-0.15, 0.15, 2)
    assert poly.labels(x[None]).min() >= 10 * 2 * h

    f = lambda y: float(u(y[None])[0])

    def fd(step):
        H = np.zeros((2, 2))
        E = np.eye(2) * step
        for i in range(2):
            for j in range(2):
                H[i, j] = (f(x + E[i] + E[j]) - f(x + E[i] - E[j]) - f(x - E[i] + E[j])
                           + f(x - E[i] - E[j])) / (4 * step ** 2)
        return H

    G = u.hessian(x)
    e1 = np.abs(fd(2 * h) - G).max()
    e2 = np.abs(fd(h) - G).max()
    assert e2 / np.abs(G).max() < 1e-4
    # quadratic convergence, allowing for rounding noise near 1e-8
    assert e2 < 0.3 * e1 or e2 < 1e-7


# --- datum and serialization ---

def test_poisson_datum_requires_antisymmetry():
    with pytest.raises(ValueError):
        PoissonDatum.from_b([[0, 1], [1, 0]])
    d = PoissonDatum.planar(0.3, 0.2)
    assert np.array_equal(d.scaled(2).B, 2 * d.B)
    assert not d.without_a().A.any()


def test_potential_json_round_trip(square):
    u = guillemin_potential(square).with_correction(random_correction(square, np.random.default_rng(1)))
    back = SymplecticPotential.from_json(u.to_json())
    x = np.random.default_rng(2).uniform(0.05, 0.95, (20, 2))
    assert np.array_equal(back.hessian(x), u.hessian(x))
    assert back.correction.coefficients == u.correction.coefficients
    assert set(u.to_json()) >= {"degree", "coefficients", "gauge_point"}
