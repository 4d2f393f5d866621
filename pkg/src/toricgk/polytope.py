"""Labelled Delzant polytopes, exact moments and graded quadrature."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linprog

from ._exact import (HalfSpacePolytope, as_fraction, det_exact, facet_measure_jacobian,
                     labelled_boundary_moments, multi_indices, polytope_moments,
                     simplex_jacobian, solve_exact)

BUILTIN_POLYTOPES = ("segment", "square", "simplex", "hirzebruch1", "hirzebruch2")
MAX_QUAD_LEVEL = 16


class PolytopeError(ValueError):
    """Raised for malformed polytope input."""


@dataclass(frozen=True)
class Facet:
    normal: tuple[int, ...]
    offset: Fraction


class DelzantPolytope:
    """Labelled polytope P = {x : L_j(x) = <ν_j, x> + c_j >= 0}."""

    def __init__(self, facets: Sequence[tuple[Sequence[int], object]] | Sequence[Facet], name: str | None = None):
        if not facets:
            raise PolytopeError("facet list is empty")
        fs = []
        for f in facets:
            if isinstance(f, Facet):
                fs.append(f)
            else:
                normal, offset = f
                fs.append(Facet(tuple(int(c) for c in normal), as_fraction(offset)))
        dims = {len(f.normal) for f in fs}
        if len(dims) != 1:
            raise PolytopeError("facet normals have inconsistent lengths")
        self.facets: tuple[Facet, ...] = tuple(fs)
        self.dim = dims.pop()
        self.name = name
        self.normals = np.array([f.normal for f in fs], dtype=float)
        self.offsets = np.array([float(f.offset) for f in fs])
        self._moment_cache: dict = {}
        self._bmoment_cache: dict = {}

    def __repr__(self):
        label = self.name or f"{len(self.facets)} facets"
        return f"DelzantPolytope({label}, dim={self.dim})"

    def __eq__(self, other):
        return isinstance(other, DelzantPolytope) and self.facets == other.facets

    def __hash__(self):
        return hash(self.facets)

    @cached_property
    def exact(self) -> HalfSpacePolytope:
        return HalfSpacePolytope([f.normal for f in self.facets], [f.offset for f in self.facets])

    @property
    def vertices(self) -> list[tuple[Fraction, ...]]:
        return self.exact.vertices

    @cached_property
    def volume(self) -> Fraction:
        return self.exact.volume

    @cached_property
    def barycenter(self) -> tuple[Fraction, ...]:
        m = self.moments(1)
        vol = m[(0,) * self.dim]
        return tuple(m[tuple(1 if i == k else 0 for i in range(self.dim))] / vol for k in range(self.dim))

    def labels(self, x) -> np.ndarray:
        """L_j(x) for points x of shape (..., n); returns (..., m)."""
        x = np.asarray(x, dtype=float)
        return x @ self.normals.T + self.offsets

    def contains_interior(self, x, margin: float = 0.0) -> np.ndarray:
        return np.all(self.labels(x) > margin, axis=-1)

    def moments(self, max_degree: int, center=None) -> dict[tuple[int, ...], Fraction]:
        """Exact ∫_P (x - center)^α dx for |α| <= max_degree."""
        if max_degree < 0:
            raise ValueError("degree must be nonnegative")
        key = (max_degree, None if center is None else tuple(as_fraction(c) for c in center))
        if key not in self._moment_cache:
            self._moment_cache[key] = polytope_moments(self.exact, max_degree, key[1])
        return self._moment_cache[key]

    def boundary_moments(self, max_degree: int, center=None) -> dict[int, dict[tuple[int, ...], Fraction]]:
        """Exact per-facet ∫_{P_j} (x - center)^α dσ_L."""
        if max_degree < 0:
            raise ValueError("degree must be nonnegative")
        key = (max_degree, None if center is None else tuple(as_fraction(c) for c in center))
        if key not in self._bmoment_cache:
            self._bmoment_cache[key] = labelled_boundary_moments(
                self.exact, [f.normal for f in self.facets], max_degree, key[1])
        return self._bmoment_cache[key]

    def total_boundary_moments(self, max_degree: int, center=None) -> dict[tuple[int, ...], Fraction]:
        per = self.boundary_moments(max_degree, center)
        out = {a: Fraction(0) for a in multi_indices(self.dim, max_degree)}
        for table in per.values():
            for a, v in table.items():
                out[a] += v
        return out

    def to_json(self) -> dict:
        d = {"dim": self.dim,
             "facets": [{"normal": list(f.normal), "offset": str(f.offset)} for f in self.facets]}
        if self.name:
            d["name"] = self.name
        return d

    @classmethod
    def from_json(cls, data: dict | str | Path) -> "DelzantPolytope":
        if not isinstance(data, dict):
            data = json.loads(Path(data).read_text())
        try:
            facets = [(f["normal"], f["offset"]) for f in data["facets"]]
            poly = cls(facets, name=data.get("name"))
        except (KeyError, TypeError, ValueError, ZeroDivisionError) as exc:
            raise PolytopeError(f"malformed polytope JSON: {exc}") from exc
        if "dim" in data and int(data["dim"]) != poly.dim:
            raise PolytopeError("declared dim does not match facet normals")
        return poly


def load_builtin(name: str) -> DelzantPolytope:
    if name not in BUILTIN_POLYTOPES:
        raise KeyError(f"unknown built-in polytope {name!r}; choose from {BUILTIN_POLYTOPES}")
    text = resources.files("toricgk.data").joinpath(f"{name}.json").read_text()
    return DelzantPolytope.from_json(json.loads(text))


def load_polytope(spec: str) -> DelzantPolytope:
    """Inline JSON, a path to a JSON file, or the name of a built-in polytope."""
    if spec.lstrip().startswith("{"):
        return DelzantPolytope.from_json(json.loads(spec))
    p = Path(spec)
    if p.exists():
        return DelzantPolytope.from_json(p)
    stem = p.name[:-5] if p.name.endswith(".json") else p.name
    if stem in BUILTIN_POLYTOPES:
        return load_builtin(stem)
    raise FileNotFoundError(spec)


def unimodular_image(poly: DelzantPolytope, matrix, shift) -> DelzantPolytope:
    """Image of (P, L) under x -> M x + t with M integral and |det M| = 1."""
    M = [[Fraction(int(c)) for c in row] for row in matrix]
    if abs(det_exact(M)) != 1:
        raise ValueError("matrix is not unimodular")
    n = poly.dim
    t = [as_fraction(c) for c in shift]
    facets = []
    # L(M^{-1}(y - t)) has normal M^{-T} ν
    Mt = [[M[j][i] for j in range(n)] for i in range(n)]
    for f in poly.facets:
        new_normal = solve_exact(Mt, [Fraction(c) for c in f.normal])
        offset = f.offset - sum(a * b for a, b in zip(new_normal, t))
        facets.append((tuple(int(c) for c in new_normal), offset))
    return DelzantPolytope(facets, name=None)


# --- validation ---------------------------------------------------------

@dataclass
class Diagnostic:
    code: str
    passed: bool
    detail: str = ""


@dataclass
class DiagnosticReport:
    checks: list[Diagnostic] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[Diagnostic]:
        return [c for c in self.checks if not c.passed]

    def to_json(self) -> dict:
        return {"ok": self.ok, "checks": [c.__dict__ for c in self.checks]}


def _bounded(normals: np.ndarray) -> bool:
    m, n = normals.shape
    if np.linalg.matrix_rank(normals) < n:
        return False
    res = linprog(np.zeros(m), A_eq=normals.T, b_eq=np.zeros(n),
                  bounds=[(1, None)] * m, method="highs")
    return res.status == 0


def _chebyshev_radius(poly: DelzantPolytope) -> float:
    m, n = poly.normals.shape
    norms = np.linalg.norm(poly.normals, axis=1)
    # max r  s.t.  -ν·x + r|ν| <= c
    A = np.hstack([-poly.normals, norms[:, None]])
    res = linprog(np.r_[np.zeros(n), -1.0], A_ub=A, b_ub=poly.offsets,
                  bounds=[(None, None)] * n + [(None, 1.0)], method="highs")
    return float(res.x[-1]) if res.status == 0 else -math.inf


def validate_delzant(poly: DelzantPolytope) -> DiagnosticReport:
    rep = DiagnosticReport()
    bad = [j for j, f in enumerate(poly.facets)
           if math.gcd(*f.normal) != 1]
    rep.checks.append(Diagnostic("non_primitive_normal", not bad,
                                 f"facets {bad}" if bad else ""))
    bounded = _bounded(poly.normals)
    rep.checks.append(Diagnostic("unbounded", bounded, "" if bounded else "recession cone is nontrivial"))
    if not bounded:
        return rep
    r = _chebyshev_radius(poly)
    rep.checks.append(Diagnostic("empty_interior", r > 1e-12, f"inradius {r:.3g}"))
    if r <= 1e-12:
        return rep
    ex = poly.exact
    facet_sets = ex.facet_vertex_sets()
    redundant = [j for j in range(len(poly.facets)) if j not in facet_sets]
    rep.checks.append(Diagnostic("redundant_facet", not redundant,
                                 f"facets {redundant}" if redundant else ""))
    non_simple, non_unimodular = [], []
    for i, v in enumerate(ex.vertices):
        active = [j for j in range(len(poly.facets)) if i in ex.incidence[j]]
        if len(active) != poly.dim:
            non_simple.append(i)
            continue
        d = det_exact([[Fraction(c) for c in poly.facets[j].normal] for j in active])
        if abs(d) != 1:
            non_unimodular.append(i)
    rep.checks.append(Diagnostic("non_simple_vertex", not non_simple,
                                 f"vertices {non_simple}" if non_simple else ""))
    rep.checks.append(Diagnostic("vertex_determinant", not non_unimodular,
                                 f"vertices {non_unimodular}" if non_unimodular else ""))
    return rep


# --- exact integrals ----------------------------------------------------

@dataclass(frozen=True)
class AffineFunction:
    """f(x) = constant + <gradient, x>."""
    constant: Fraction | float
    gradient: tuple

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return float(self.constant) + x @ np.asarray([float(g) for g in self.gradient])

    @property
    def is_exact(self) -> bool:
        return isinstance(self.constant, (int, Fraction)) and all(isinstance(g, (int, Fraction)) for g in self.gradient)

    def is_constant(self, tol: float = 0.0) -> bool:
        return all(abs(float(g)) <= tol for g in self.gradient)

    def to_json(self) -> dict:
        return {"constant": _num(self.constant), "gradient": [_num(g) for g in self.gradient]}


def _num(v):
    return str(v) if isinstance(v, Fraction) else float(v)


def integrate_affine_product(poly: DelzantPolytope, f: AffineFunction, g: AffineFunction) -> Fraction:
    """Exact ∫_P f g dx from second moments."""
    n = poly.dim
    m = poly.moments(2)
    e = lambda *idx: tuple(sum(1 for k in idx if k == i) for i in range(n))
    fc, gc = as_fraction(f.constant), as_fraction(g.constant)
    fg = [as_fraction(c) for c in f.gradient]
    gg = [as_fraction(c) for c in g.gradient]
    total = fc * gc * m[e()]
    for i in range(n):
        total += (fc * gg[i] + gc * fg[i]) * m[e(i)]
        for k in range(n):
            total += fg[i] * gg[k] * m[e(i, k)]
    return total


def boundary_integral(poly: DelzantPolytope, f) -> Fraction | float:
    """∫_{∂P} f dσ_L.

    Exact (Fraction) for AffineFunction; objects exposing
    ``integrate_boundary(poly)`` (polynomials, potentials) supply their own
    rule; plain callables use a Gauss rule on each facet simplex.
    """
    if isinstance(f, AffineFunction):
        b = poly.total_boundary_moments(1)
        n = poly.dim
        total = as_fraction(f.constant) * b[(0,) * n]
        for i in range(n):
            total += as_fraction(f.gradient[i]) * b[tuple(1 if k == i else 0 for k in range(n))]
        return total
    if hasattr(f, "integrate_boundary"):
        return f.integrate_boundary(poly)
    rule = boundary_quadrature(poly, level=4)
    return float(np.dot(rule.weights, f(rule.nodes)))


def boundary_volume(poly: DelzantPolytope) -> Fraction:
    return poly.total_boundary_moments(0)[(0,) * poly.dim]


def average_gscal(poly: DelzantPolytope) -> Fraction:
    """a = 2 Vol(∂P, dσ_L) / Vol(P, dx)."""
    return 2 * boundary_volume(poly) / poly.volume


# --- quadrature ---------------------------------------------------------

@dataclass
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    measure: str  # "interior" | "boundary"
    level: int
    facet_tags: np.ndarray | None = None

    def __len__(self):
        return len(self.weights)

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


def _gauss01(k: int):
    x, w = np.polynomial.legendre.leggauss(k)
    return 0.5 * (x + 1.0), 0.5 * w


def _collapsed_rule(simplex, r1d, w1d, graded: bool):
    """Tensor rule on a flag simplex in nested conical coordinates.

    x = p0 + s1 (p1 - p0 + s2 (p2 - p1 + ...)); with grading s = 1 - (1-r)^2
    the nodes cluster toward the face opposite p0 (and, recursively, toward
    every lower face of the flag).
    """
    pts = np.array([[float(c) for c in p] for p in simplex])
    k = len(pts) - 1
    edges = np.diff(pts, axis=0)  # (k, n)
    if graded:
        s1d = 1.0 - (1.0 - r1d) ** 2
        ds = 2.0 * (1.0 - r1d)
    else:
        s1d, ds = r1d, np.ones_like(r1d)
    grids = np.meshgrid(*([np.arange(len(r1d))] * k), indexing="ij")
    idx = np.stack([g.ravel() for g in grids], axis=1)  # (N, k)
    s = s1d[idx]
    w = np.prod(w1d[idx] * ds[idx], axis=1)
    pos = np.zeros((len(idx), pts.shape[1]))
    for lvl in range(k - 1, -1, -1):
        pos = s[:, lvl:lvl + 1] * (edges[lvl] + pos)
    # Jacobian ∏ s_l^{k-l}
    jac_s = np.ones(len(idx))
    for lvl in range(k):
        jac_s *= s[:, lvl] ** (k - 1 - lvl)
    return pts[0] + pos, w * jac_s


def _nodes_per_direction(level: int) -> int:
    return 4 * level + 4


def interior_quadrature(poly: DelzantPolytope, level: int = 4) -> QuadratureRule:
    """Graded conical Gauss rule over the flag triangulation of P."""
    if not 1 <= level <= MAX_QUAD_LEVEL:
        raise ValueError(f"quadrature level must be in [1, {MAX_QUAD_LEVEL}]")
    r, w = _gauss01(_nodes_per_direction(level))
    nodes, weights = [], []
    for simp in poly.exact.simplices:
        jac = float(simplex_jacobian(simp))
        x, wx = _collapsed_rule(simp, r, w, graded=True)
        nodes.append(x)
        weights.append(wx * jac)
    return QuadratureRule(np.vstack(nodes), np.concatenate(weights), "interior", level)


def boundary_quadrature(poly: DelzantPolytope, level: int = 4) -> QuadratureRule:
    if not 1 <= level <= MAX_QUAD_LEVEL:
        raise ValueError(f"quadrature level must be in [1, {MAX_QUAD_LEVEL}]")
    r, w = _gauss01(_nodes_per_direction(level))
    ex = poly.exact
    nodes, weights, tags = [], [], []
    for j in ex.facet_vertex_sets():
        for simp in ex.facet_simplices(j):
            jac = float(facet_measure_jacobian(simp, poly.facets[j].normal))
            if len(simp) == 1:
                x = np.array([[float(c) for c in simp[0]]])
                wx = np.ones(1)
            else:
                x, wx = _collapsed_rule(simp, r, w, graded=False)
            nodes.append(x)
            weights.append(wx * jac)
            tags.append(np.full(len(wx), j))
    return QuadratureRule(np.vstack(nodes), np.concatenate(weights), "boundary", level,
                          np.concatenate(tags))


def check_nodes(poly: DelzantPolytope, density: int = 24, margin: float = 1e-2) -> np.ndarray:
    """Midpoint-lattice nodes in the conical charts, at least ``margin`` from ∂P.

    Midpoints never coincide with Gauss–Legendre abscissae of the
    quadrature rules, so residuals measured here are out-of-sample.
    """
    r = (np.arange(density) + 0.5) / density
    w = np.ones(density)
    pts = [_collapsed_rule(s, r, w, graded=False)[0] for s in poly.exact.simplices]
    x = np.unique(np.round(np.vstack(pts), 15), axis=0)
    return x[poly.contains_interior(x, margin)]


def grid_sample(poly: DelzantPolytope, per_axis: int = 64, margin: float = 1e-2) -> np.ndarray:
    """Uniform per_axis^n grid over the bounding box shrunk by margin, kept where min_j L_j >= margin."""
    verts = np.array([[float(c) for c in v] for v in poly.vertices])
    lo, hi = verts.min(axis=0) + margin, verts.max(axis=0) - margin
    axes = [np.linspace(a, b, per_axis) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    x = np.stack([m.ravel() for m in mesh], axis=1)
    return x[np.all(poly.labels(x) >= margin * (1 - 1e-12), axis=1)]
