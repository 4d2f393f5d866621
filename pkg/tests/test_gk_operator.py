import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_admissible, random_polynomial
from oracles import kappa_symbolic, square_kappa_closed_form
from toricgk.gk_operator import (
    IDENTITY_NAMES, POISSON_NORMALIZATION, CurvatureError, abreu_gscal, abreu_gscal_fd,
    bihermitian_frame, donaldson_form, frame_from_hessian, frame_invariants, gscal_crosscheck,
    gscal_field, hermitian_inverse, identity_suite, toric_poisson_factor, wedge,
)
from toricgk.polytope import average_gscal, grid_sample, interior_quadrature, load_builtin
from toricgk.potential import PoissonDatum, PolynomialField, guillemin_potential

FACETS = lambda poly: [(f.normal, f.offset) for f in poly.facets]


# --- Hermitian inverse ---

def test_real_inverse_when_b_vanishes(square):
    Z = hermitian_inverse(guillemin_potential(square), PoissonDatum.zero(2), [[0.3, 0.8]])
    assert not Z.Y.any()
    assert np.allclose(Z.X[0], np.diag([2 * 0.3 * 0.7, 2 * 0.8 * 0.2]), atol=1e-15)


def test_square_closed_form_x(square):
    b = 0.1
    pts = grid_sample(square, 9)
    Z = hermitian_inverse(guillemin_potential(square), PoissonDatum.planar(b), pts)
    p = 2 * pts[:, 0] * (1 - pts[:, 0])
    q = 2 * pts[:, 1] * (1 - pts[:, 1])
    D = 1 - b ** 2 * p * q
    assert np.allclose(Z.X[:, 0, 0], p / D, rtol=1e-12)
    assert np.allclose(Z.X[:, 1, 1], q / D, rtol=1e-12)
    assert np.allclose(Z.X[:, 0, 1], 0, atol=1e-15)


def test_square_center_x11(square):
    Z = hermitian_inverse(guillemin_potential(square), PoissonDatum.planar(0.1), [[0.5, 0.5]])
    assert Z.X[0, 0, 0] == pytest.approx(0.50125313283208, rel=1e-12)


@given(st.integers(0, 2 ** 32 - 1), st.floats(0, 1.5))
def test_donaldson_form_identities(seed, b):
    rng = np.random.default_rng(seed)
    poly = load_builtin("hirzebruch1")
    datum = PoissonDatum.planar(b)
    u = random_admissible(poly, datum, rng)
    x = np.array([[0.5, 0.4], [0.2, 0.9], [1.4, 0.3]])
    Z = hermitian_inverse(u, datum, x)
    for k, G in enumerate(u.hessian(x)):
        X, Y = donaldson_form(G, datum.B)
        assert np.allclose(X, Z.X[k], rtol=1e-12, atol=1e-14)
        assert np.allclose(Y, Z.Y[k], rtol=1e-12, atol=1e-14)
        assert np.allclose(X, X.T, atol=1e-14) and np.linalg.eigvalsh(X).min() > 0
        assert np.allclose(Y, -Y.T, atol=1e-14)
        assert np.allclose(Z.Z[k], Z.Z[k].conj().T, atol=1e-14)


def test_inadmissible_point_raises(square):
    with pytest.raises(CurvatureError):
        hermitian_inverse(guillemin_potential(square), PoissonDatum.planar(3.0), [[0.5, 0.5]])


# --- κ ---

@pytest.mark.parametrize("name,value", [("segment", 4), ("square", 8), ("simplex", 12)])
def test_guillemin_constants(polys, name, value):
    poly = polys[name]
    k = abreu_gscal(guillemin_potential(poly), PoissonDatum.zero(poly.dim), grid_sample(poly, 16))
    assert np.abs(k - value).max() < 1e-9


def test_square_b_matches_symbolic_closed_form(square):
    u0 = guillemin_potential(square)
    for x in ([0.5, 0.5], [0.3, 0.6], [0.05, 0.9], [0.01, 0.02]):
        assert abreu_gscal(u0, PoissonDatum.planar(0.4), x) == pytest.approx(
            square_kappa_closed_form(*x, 0.4), rel=1e-10)


def test_general_potential_matches_symbolic(polys):
    poly = polys["hirzebruch1"]
    corr = {(2, 0): 0.1, (1, 1): -0.05, (0, 3): 0.02, (2, 2): 0.01}
    v = PolynomialField((0, 0), {k: c for k, c in corr.items()})
    u = guillemin_potential(poly).with_correction(v)
    B = [[0, 0.3], [-0.3, 0]]
    for x in ([0.6, 0.4], [1.5, 0.2], [0.02, 0.97], [1.2, 0.79999]):
        ref = kappa_symbolic(FACETS(poly), corr, B, x)
        assert abreu_gscal(u, PoissonDatum.from_b(B), x) == pytest.approx(ref.real, rel=1e-9)


def test_near_slanted_facet_stays_constant(simplex):
    # double precision alone loses everything here
    u0 = guillemin_potential(simplex)
    for eps in (1e-3, 1e-5, 1e-7):
        x = [0.4, 0.6 - eps]
        assert abreu_gscal(u0, PoissonDatum.zero(2), x) == pytest.approx(12, abs=1e-8)


def test_fd_validator_agrees(square):
    u = random_admissible(square, PoissonDatum.planar(0.2), np.random.default_rng(4))
    d = PoissonDatum.planar(0.2)
    for x in ([0.5, 0.5], [0.3, 0.7], [0.8, 0.15]):
        assert abreu_gscal_fd(u, d, x) == pytest.approx(abreu_gscal(u, d, x), rel=1e-4)


def test_exterior_point_rejected(square):
    with pytest.raises(CurvatureError):
        abreu_gscal(guillemin_potential(square), PoissonDatum.zero(2), [1.2, 0.5])


@given(st.integers(0, 2 ** 32 - 1), st.floats(-3, 3), st.floats(0, 0.8))
def test_a_independence_bitwise(seed, a, b):
    sq = load_builtin("square")
    rng = np.random.default_rng(seed)
    u = random_admissible(sq, PoissonDatum.planar(b), rng)
    pts = rng.uniform(0.02, 0.98, (16, 2))
    k0 = abreu_gscal(u, PoissonDatum.planar(b), pts)
    k1 = abreu_gscal(u, PoissonDatum.planar(b, a), pts)
    assert np.array_equal(k0, k1)


@settings(max_examples=8)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(["square", "hirzebruch1", "simplex"]), st.floats(0, 0.6))
def test_average_identity(seed, name, b):
    poly = load_builtin(name)
    rng = np.random.default_rng(seed)
    d = PoissonDatum.planar(b)
    u = random_admissible(poly, d, rng)
    q = interior_quadrature(poly, 8)
    avg = q.integrate(abreu_gscal(u, d, q.nodes)) / float(poly.volume)
    assert avg == pytest.approx(float(average_gscal(poly)), rel=1e-7)


def ibp_defect(u, datum, f, q):
    """∫ f κ − 2∫_∂ f dσ + ∫ tr(X Hess f), and the scale of the three terms."""
    poly = u.polytope
    t1 = q.integrate(f(q.nodes) * abreu_gscal(u, datum, q.nodes))
    t2 = 2 * f.integrate_boundary(poly)
    X = hermitian_inverse(u, datum, q.nodes).X
    t3 = q.integrate(np.einsum("nij,nji->n", X, f.hessian(q.nodes)))
    return t1 - t2 + t3, max(abs(t1), abs(t2), abs(t3), 1.0)


@settings(max_examples=10)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0, 0.8))
def test_integration_by_parts(seed, b):
    sq = load_builtin("square")
    rng = np.random.default_rng(seed)
    d = PoissonDatum.planar(b)
    u = random_admissible(sq, d, rng)
    f = random_polynomial(sq, rng)
    defect, scale = ibp_defect(u, d, f, interior_quadrature(sq, 8))
    assert abs(defect) < 1e-6 * scale


def test_boundary_ratio_bounded(square):
    from toricgk.potential import admissibility_check
    u = random_admissible(square, PoissonDatum.planar(0.5), np.random.default_rng(7))
    rep = admissibility_check(u, PoissonDatum.planar(0.5), interior_quadrature(square, 3))
    assert rep.boundary_ratio_bounded and rep.boundary_ratio_max < 10


# --- frames ---

def _check_invariants(fr, tol=1e-12):
    inv = frame_invariants(fr)
    scale = max(1.0, np.abs(fr.g).max(), np.abs(fr.J).max())
    for name, r in inv.items():
        if name == "g_positive":
            assert r < 0, name
        else:
            assert r < tol * scale ** 2, (name, r)


def test_kahler_frame(square):
    fr = bihermitian_frame(guillemin_potential(square), PoissonDatum.zero(2), [0.3, 0.6])
    assert np.allclose(fr.I, fr.J, atol=1e-14)
    assert not fr.b.any()
    assert np.allclose(fr.F_map, -fr.g @ fr.J, atol=1e-14) or np.allclose(fr.F_map, fr.g @ fr.J, atol=1e-14)
    _check_invariants(fr)


def test_segment_frame(segment):
    x = 0.3
    upp = 1 / (2 * x * (1 - x))
    fr = bihermitian_frame(guillemin_potential(segment), PoissonDatum.zero(1), [x])
    assert np.allclose(fr.g, np.diag([upp, 1 / upp]), atol=1e-14)


def test_a_deformed_frame(square):
    fr = bihermitian_frame(guillemin_potential(square), PoissonDatum.planar(0.0, 0.2), [0.5, 0.5])
    assert not np.allclose(fr.I, fr.J)
    assert np.abs(fr.F_map @ (fr.I + fr.J) + 2 * fr.g).max() < 1e-12
    _check_invariants(fr)


@given(st.integers(0, 2 ** 32 - 1), st.floats(-1, 1), st.floats(-0.8, 0.8))
def test_frame_invariants_random(seed, a, b):
    sq = load_builtin("square")
    rng = np.random.default_rng(seed)
    d = PoissonDatum.planar(b, a)
    u = random_admissible(sq, d, rng)
    _check_invariants(bihermitian_frame(u, d, rng.uniform(0.1, 0.9, 2)), tol=1e-10)


def test_poisson_factor(square):
    for a, b in ((0.2, 0.1), (0.0, 0.3), (-0.5, 0.0)):
        d = PoissonDatum.planar(b, a)
        fr = bihermitian_frame(guillemin_potential(square), d, [0.4, 0.7])
        c, resid = toric_poisson_factor(fr, d)
        assert c == pytest.approx(POISSON_NORMALIZATION, abs=1e-10)
        assert resid < 1e-10


def test_wedge_is_antisymmetric():
    a, b = np.arange(4.0), np.array([1.0, -2, 0.5, 3])
    assert np.array_equal(wedge(a, b), -wedge(b, a))
    assert not wedge(a, a).any()


# --- identities ---

def test_identity_suite_kahler(square):
    fr = bihermitian_frame(guillemin_potential(square), PoissonDatum.zero(2), [0.2, 0.5])
    rep = identity_suite(fr, draws=20)
    assert rep.passed
    assert np.abs(fr.pi).max() < 1e-14
    assert set(rep.residuals) == set(IDENTITY_NAMES)


def test_tr_f_of_self_wedge_vanishes(square):
    fr = bihermitian_frame(guillemin_potential(square), PoissonDatum.planar(0.1, 0.2), [0.2, 0.5])
    a = np.random.default_rng(0).standard_normal(4)
    assert fr.tr_F(wedge(a, a)) == 0.0


def test_identity_suite_square_ab(square):
    fr = bihermitian_frame(guillemin_potential(square), PoissonDatum.planar(0.1, 0.2), [0.5, 0.5])
    rep = identity_suite(fr, draws=100, seed=11)
    assert rep.passed, rep.worst
    assert rep.to_json()["seed"] == 11


@given(st.integers(0, 2 ** 32 - 1))
def test_identity_suite_random_frames(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    S = rng.standard_normal((n, n))
    G = S @ S.T + 0.5 * np.eye(n)
    A = rng.standard_normal((n, n))
    B = rng.standard_normal((n, n))
    d = PoissonDatum(0.5 * (A - A.T), 0.2 * (B - B.T))
    if np.linalg.eigvalsh(np.block([[G, -d.B], [d.B, G]])).min() <= 0:
        return
    fr = frame_from_hessian(G, d)
    rep = identity_suite(fr, draws=20, seed=seed % 1000)
    assert rep.passed, rep.worst


# --- cross-check ---

def test_crosscheck_excludes_kahler_point(square):
    r = gscal_crosscheck(guillemin_potential(square), PoissonDatum.zero(2), [0.5, 0.5])
    assert r.excluded and r.kappa_phi is None


@pytest.mark.parametrize("datum", [PoissonDatum.planar(0.1), PoissonDatum.planar(0.0, 0.2)],
                         ids=["B=0.1", "A=0.2"])
def test_crosscheck_center(square, datum):
    r = gscal_crosscheck(guillemin_potential(square), datum, [0.5, 0.5])
    assert not r.excluded
    assert r.rel_err < 1e-4


def test_crosscheck_random_potential(square):
    d = PoissonDatum.planar(0.3, 0.1)
    u = random_admissible(square, d, np.random.default_rng(5))
    for x in ([0.3, 0.4], [0.7, 0.8]):
        r = gscal_crosscheck(u, d, x)
        assert not r.excluded and r.rel_err < 1e-4


# --- field export ---

def test_field_csv(segment):
    fld = gscal_field(guillemin_potential(segment), PoissonDatum.zero(1), grid_sample(segment, 8))
    rows = list(csv.reader(io.StringIO(fld.to_csv())))
    assert rows[0] == ["x1", "kappa", "min_eig_margin"]
    assert len(rows) == 9
    assert all(abs(float(r[1]) - 4) < 1e-10 for r in rows[1:])
    s = fld.summary()
    assert s["average"] == pytest.approx(4) and s["n_points"] == 8
