import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import polygon_boundary_moment, polygon_moment, polygon_vertices
from toricgk.extremal import guillemin_interior_integral
from toricgk.polytope import (
    AffineFunction, DelzantPolytope, PolytopeError, average_gscal, boundary_integral,
    boundary_quadrature, boundary_volume, check_nodes, grid_sample, interior_quadrature,
    load_polytope, unimodular_image, validate_delzant,
)

TRAPEZOID = DelzantPolytope.from_json({"dim": 2, "facets": [
    {"normal": [0, 1], "offset": 0}, {"normal": [1, 0], "offset": 0},
    {"normal": [0, -1], "offset": 1}, {"normal": [-1, -1], "offset": 2}]})


def facets_of(poly):
    return [(f.normal, f.offset) for f in poly.facets]


# --- validation ---

@pytest.mark.parametrize("name", ["segment", "square", "simplex", "hirzebruch1", "hirzebruch2"])
def test_builtins_validate(polys, name):
    assert validate_delzant(polys[name]).ok


def test_unbounded_is_reported():
    p = DelzantPolytope.from_json({"dim": 2, "facets": [{"normal": [1, 0], "offset": 0},
                                                        {"normal": [0, 1], "offset": 0}]})
    rep = validate_delzant(p)
    assert not rep.ok
    assert [d.code for d in rep.failures] == ["unbounded"]


def test_non_primitive_normal_is_reported():
    p = DelzantPolytope.from_json({"dim": 1, "facets": [{"normal": [2], "offset": 0},
                                                        {"normal": [-1], "offset": 1}]})
    assert "non_primitive_normal" in [d.code for d in validate_delzant(p).failures]


def test_vertex_determinant_is_reported():
    # the vertex (0, 1) has normals (1, 0), (-1, -2): determinant -2
    p = DelzantPolytope.from_json({"dim": 2, "facets": [
        {"normal": [1, 0], "offset": 0}, {"normal": [0, 1], "offset": 0},
        {"normal": [-1, -2], "offset": 2}]})
    codes = [d.code for d in validate_delzant(p).failures]
    assert codes and all(c != "unbounded" for c in codes)


def test_report_json_lists_every_check(square):
    data = validate_delzant(square).to_json()
    assert data["ok"] is True
    assert all(c["passed"] for c in data["checks"])


# --- moments ---

def test_segment_moments(segment):
    m = segment.moments(2)
    assert (m[(0,)], m[(1,)], m[(2,)]) == (1, Fraction(1, 2), Fraction(1, 3))


def test_simplex_area(simplex):
    assert simplex.moments(0)[(0, 0)] == Fraction(1, 2)


def test_trapezoid_area():
    assert TRAPEZOID.volume == Fraction(3, 2)


def test_negative_degree_rejected(square):
    with pytest.raises(ValueError):
        square.moments(-1)


@pytest.mark.parametrize("name", ["square", "simplex", "hirzebruch1", "hirzebruch2"])
def test_moments_match_green_oracle(polys, name):
    poly = polys[name]
    verts = polygon_vertices(facets_of(poly))
    m = poly.moments(4)
    for (a, b), val in m.items():
        assert val == polygon_moment(verts, a, b)


@pytest.mark.parametrize("name", ["square", "simplex", "hirzebruch1", "hirzebruch2"])
def test_boundary_moments_match_edge_oracle(polys, name):
    poly = polys[name]
    bm = poly.total_boundary_moments(3)
    for (a, b), val in bm.items():
        assert val == polygon_boundary_moment(facets_of(poly), a, b)


# --- boundary measure ---

def test_boundary_integral_examples(segment, simplex, square):
    one = lambda n: AffineFunction(1, (0,) * n)
    assert boundary_integral(segment, one(1)) == 2
    assert boundary_integral(simplex, one(2)) == 3
    assert boundary_integral(square, AffineFunction(0, (1, 0))) == 2


def test_average_gscal(polys):
    assert average_gscal(polys["segment"]) == 4
    assert average_gscal(polys["square"]) == 8
    assert average_gscal(polys["simplex"]) == 12
    assert average_gscal(polys["hirzebruch1"]) == Fraction(20, 3)


def test_boundary_quadrature_reproduces_measure(polys):
    for poly in polys.values():
        q = boundary_quadrature(poly, 3)
        assert q.measure == "boundary"
        assert np.all(q.weights > 0)
        assert abs(q.weights.sum() - float(boundary_volume(poly))) < 1e-12


# --- interior quadrature ---

def test_segment_level_one(segment):
    q = interior_quadrature(segment, 1)
    assert np.all((q.nodes > 0) & (q.nodes < 1))
    assert abs(q.weights.sum() - 1) < 1e-12


@pytest.mark.parametrize("level", [1, 2, 5, 9])
def test_square_volume_any_level(square, level):
    assert abs(interior_quadrature(square, level).weights.sum() - 1) < 1e-12


def test_simplex_moment_high_level(simplex):
    q = interior_quadrature(simplex, 8)
    assert abs(q.integrate(q.nodes[:, 0] * q.nodes[:, 1]) - 1 / 24) < 1e-8


def test_level_out_of_range(square):
    for level in (0, 99):
        with pytest.raises(ValueError):
            interior_quadrature(square, level)


def test_quadrature_converges_on_llogl(polys):
    # ∫ ½ Σ L log L against the closed-form value
    for name in ("square", "hirzebruch1"):
        poly = polys[name]
        exact = guillemin_interior_integral(poly)
        errs = []
        for level in (1, 2, 4, 8):
            q = interior_quadrature(poly, level)
            L = poly.labels(q.nodes)
            errs.append(abs(q.integrate(0.5 * np.sum(L * np.log(L), axis=1)) - exact))
        assert all(b <= a for a, b in zip(errs, errs[1:]))
        assert errs[-1] < 1e-10


def test_sample_sets_are_interior(polys):
    for poly in polys.values():
        for pts in (check_nodes(poly, 12), grid_sample(poly, 16)):
            assert np.all(poly.labels(pts) >= 1e-2 - 1e-15)


# --- lattice equivariance ---

def _unimodular(draw_ops):
    M = np.eye(2, dtype=int)
    for i, k in draw_ops:
        E = np.eye(2, dtype=int)
        E[i, 1 - i] = k
        M = E @ M
    return M


@given(st.sampled_from(["square", "simplex", "hirzebruch1"]),
       st.lists(st.tuples(st.integers(0, 1), st.integers(-2, 2)), max_size=3),
       st.booleans(),
       st.tuples(st.fractions(-3, 3, max_denominator=4), st.fractions(-3, 3, max_denominator=4)))
def test_unimodular_equivariance(name, ops, flip, shift):
    from toricgk.polytope import load_builtin
    poly = load_builtin(name)
    M = _unimodular(ops)
    if flip:
        M = M @ np.array([[0, 1], [1, 0]])
    img = unimodular_image(poly, M.tolist(), shift)
    assert validate_delzant(img).ok
    assert img.volume == poly.volume
    assert boundary_volume(img) == boundary_volume(poly)
    assert average_gscal(img) == average_gscal(poly)
    # first and second moments transform under y = M x + t
    m, mi = poly.moments(2), img.moments(2)
    t = [Fraction(s) for s in shift]
    vol = poly.volume
    e = lambda i: tuple(1 if k == i else 0 for k in range(2))
    e2 = lambda i, j: tuple((k == i) + (k == j) for k in range(2))
    first = [m[e(i)] for i in range(2)]
    for i in range(2):
        assert mi[e(i)] == sum(int(M[i, k]) * first[k] for k in range(2)) + t[i] * vol
    for i in range(2):
        for j in range(2):
            lhs = mi[e2(i, j)]
            rhs = sum(int(M[i, k]) * int(M[j, l]) * m[e2(k, l)] for k in range(2) for l in range(2))
            rhs += t[j] * sum(int(M[i, k]) * first[k] for k in range(2))
            rhs += t[i] * sum(int(M[j, k]) * first[k] for k in range(2))
            rhs += t[i] * t[j] * vol
            assert lhs == rhs
    # the labelled boundary measure transforms with unit Jacobian too
    b, bi = poly.total_boundary_moments(1), img.total_boundary_moments(1)
    for i in range(2):
        assert bi[e(i)] == sum(int(M[i, k]) * b[e(k)] for k in range(2)) + t[i] * b[(0, 0)]


def test_non_unimodular_rejected(square):
    with pytest.raises(ValueError):
        unimodular_image(square, [[2, 0], [0, 1]], [0, 0])


# --- I/O ---

def test_json_round_trip(polys, tmp_path):
    for poly in polys.values():
        path = tmp_path / "p.json"
        path.write_text(json.dumps(poly.to_json()))
        assert DelzantPolytope.from_json(path) == poly


def test_offsets_accept_rational_strings():
    p = DelzantPolytope.from_json({"dim": 1, "facets": [{"normal": [1], "offset": "1/3"},
                                                        {"normal": [-1], "offset": 1}]})
    assert p.volume == Fraction(4, 3)


def test_load_polytope_forms(square):
    assert load_polytope("square") == square
    assert load_polytope("square.json") == square
    assert load_polytope(json.dumps(square.to_json())) == square
    with pytest.raises(FileNotFoundError):
        load_polytope("no_such_polytope")
    with pytest.raises(json.JSONDecodeError):
        load_polytope('{"dim":')
