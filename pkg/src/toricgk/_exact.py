"""Exact rational polytope machinery.

H-representation polytopes with Fraction data: vertex enumeration, a
recursive flag triangulation, exact simplex monomial integrals and half-space
clipping.  Everything here stays in ``fractions.Fraction``; the public
modules convert to floats at their boundary.
"""
from __future__ import annotations

import itertools
from fractions import Fraction
from functools import cached_property
from math import factorial
from typing import Iterable, Sequence

Point = tuple[Fraction, ...]
MultiIndex = tuple[int, ...]


def as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        return Fraction(value.strip())
    if isinstance(value, float):
        return Fraction(value).limit_denominator(10**12)
    return Fraction(value)


def dot(a: Sequence, b: Sequence):
    return sum((x * y for x, y in zip(a, b)), Fraction(0))


def solve_exact(rows: list[list[Fraction]], rhs: list[Fraction]) -> list[Fraction] | None:
    """Gaussian elimination over the rationals; None if singular."""
    n = len(rows)
    m = [list(r) + [b] for r, b in zip(rows, rhs)]
    for col in range(n):
        piv = next((r for r in range(col, n) if m[r][col] != 0), None)
        if piv is None:
            return None
        m[col], m[piv] = m[piv], m[col]
        p = m[col][col]
        for r in range(n):
            if r != col and m[r][col] != 0:
                f = m[r][col] / p
                m[r] = [a - f * b for a, b in zip(m[r], m[col])]
    return [m[i][n] / m[i][i] for i in range(n)]


def det_exact(rows: list[list[Fraction]]) -> Fraction:
    n = len(rows)
    m = [list(map(Fraction, r)) for r in rows]
    det = Fraction(1)
    for col in range(n):
        piv = next((r for r in range(col, n) if m[r][col] != 0), None)
        if piv is None:
            return Fraction(0)
        if piv != col:
            m[col], m[piv] = m[piv], m[col]
            det = -det
        p = m[col][col]
        det *= p
        for r in range(col + 1, n):
            if m[r][col] != 0:
                f = m[r][col] / p
                m[r] = [a - f * b for a, b in zip(m[r], m[col])]
    return det


def rank_exact(vectors: list[list[Fraction]]) -> int:
    m = [list(v) for v in vectors]
    if not m:
        return 0
    rank, ncols = 0, len(m[0])
    for col in range(ncols):
        piv = next((r for r in range(rank, len(m)) if m[r][col] != 0), None)
        if piv is None:
            continue
        m[rank], m[piv] = m[piv], m[rank]
        for r in range(len(m)):
            if r != rank and m[r][col] != 0:
                f = m[r][col] / m[rank][col]
                m[r] = [a - f * b for a, b in zip(m[r], m[rank])]
        rank += 1
    return rank


def affine_dim(points: Sequence[Point]) -> int:
    if not points:
        return -1
    p0 = points[0]
    return rank_exact([[a - b for a, b in zip(p, p0)] for p in points[1:]])


def centroid(points: Sequence[Point]) -> Point:
    k = len(points)
    return tuple(sum(c) / k for c in zip(*points))


def multi_indices(n: int, max_degree: int, min_degree: int = 0) -> list[MultiIndex]:
    out = []
    for d in range(min_degree, max_degree + 1):
        for combo in itertools.combinations_with_replacement(range(n), d):
            alpha = [0] * n
            for i in combo:
                alpha[i] += 1
            out.append(tuple(alpha))
    # graded, then reverse-lexicographic inside a degree for a stable order
    return sorted(set(out), key=lambda a: (sum(a), tuple(-x for x in a)))


class HalfSpacePolytope:
    """{x : <normal_j, x> + offset_j >= 0} with exact data.

    ``tags[j]`` carries the label index of the original Delzant facet that
    inequality j came from, or None for auxiliary cuts (which do not belong
    to the labelled boundary).
    """

    def __init__(self, normals: Iterable[Sequence], offsets: Iterable, tags=None):
        self.normals = [tuple(as_fraction(c) for c in nu) for nu in normals]
        self.offsets = [as_fraction(c) for c in offsets]
        self.dim = len(self.normals[0])
        self.tags = list(tags) if tags is not None else list(range(len(self.normals)))

    def value(self, j: int, x: Sequence) -> Fraction:
        return dot(self.normals[j], x) + self.offsets[j]

    def clip(self, normal: Sequence, offset, tag=None) -> "HalfSpacePolytope":
        return HalfSpacePolytope(
            self.normals + [tuple(as_fraction(c) for c in normal)],
            self.offsets + [as_fraction(offset)],
            self.tags + [tag],
        )

    @cached_property
    def vertices(self) -> list[Point]:
        n, m = self.dim, len(self.normals)
        found: dict[Point, None] = {}
        for combo in itertools.combinations(range(m), n):
            sol = solve_exact([list(self.normals[j]) for j in combo],
                              [-self.offsets[j] for j in combo])
            if sol is None:
                continue
            x = tuple(sol)
            if all(self.value(j, x) >= 0 for j in range(m)):
                found[x] = None
        return list(found)

    @cached_property
    def incidence(self) -> list[frozenset[int]]:
        """Vertex indices lying on each inequality's hyperplane."""
        return [frozenset(i for i, v in enumerate(self.vertices) if self.value(j, v) == 0)
                for j in range(len(self.normals))]

    @cached_property
    def full_dimensional(self) -> bool:
        return affine_dim(self.vertices) == self.dim

    def facet_vertex_sets(self) -> dict[int, frozenset[int]]:
        """Inequalities that cut out a genuine (n-1)-face, with its vertices."""
        out = {}
        if not self.full_dimensional:
            return out
        for j, verts in enumerate(self.incidence):
            if affine_dim([self.vertices[i] for i in verts]) == self.dim - 1:
                out[j] = verts
        return out

    def _subfaces(self, face: frozenset[int], dim: int) -> list[frozenset[int]]:
        subs = []
        for inc in self.incidence:
            s = face & inc
            if s and s != face and s not in subs:
                if affine_dim([self.vertices[i] for i in s]) == dim - 1:
                    subs.append(s)
        return subs

    def _flags(self, face: frozenset[int], dim: int, memo: dict) -> list[list[Point]]:
        key = face
        if key in memo:
            return memo[key]
        if dim == 0:
            (i,) = tuple(face)
            res = [[self.vertices[i]]]
        else:
            c = centroid([self.vertices[i] for i in sorted(face)])
            res = []
            for sub in self._subfaces(face, dim):
                for tail in self._flags(sub, dim - 1, memo):
                    res.append([c] + tail)
        memo[key] = res
        return res

    @cached_property
    def simplices(self) -> list[list[Point]]:
        """Flag triangulation: [centroid(P), centroid(facet), ..., vertex].

        The face opposite the first point always lies in a facet, which is
        what the graded quadrature relies on.
        """
        if not self.full_dimensional:
            return []
        memo: dict = {}
        return self._flags(frozenset(range(len(self.vertices))), self.dim, memo)

    def facet_simplices(self, j: int) -> list[list[Point]]:
        """(n-1)-simplices triangulating the face on inequality j (may be empty)."""
        fv = self.facet_vertex_sets().get(j)
        if fv is None:
            return []
        if self.dim == 1:
            (i,) = tuple(fv)
            return [[self.vertices[i]]]
        memo: dict = {}
        return self._flags(fv, self.dim - 1, memo)

    @cached_property
    def volume(self) -> Fraction:
        return sum((simplex_jacobian(s) / factorial(self.dim) for s in self.simplices), Fraction(0))


def simplex_jacobian(simplex: Sequence[Point]) -> Fraction:
    """|det| of the edge matrix of a full-dimensional simplex."""
    p0 = simplex[0]
    return abs(det_exact([[a - b for a, b in zip(p, p0)] for p in simplex[1:]]))


def facet_measure_jacobian(simplex: Sequence[Point], normal: Sequence) -> Fraction:
    """(n-1)! times the dσ_L-measure of a simplex lying in a facet.

    dσ_L is Lebesgue measure on the hyperplane scaled so that
    dL ∧ dσ = dx, i.e. Euclidean (n-1)-volume divided by |ν|.
    """
    nu = [as_fraction(c) for c in normal]
    if len(simplex) == 1:
        return Fraction(1)
    p0 = simplex[0]
    rows = [nu] + [[a - b for a, b in zip(p, p0)] for p in simplex[1:]]
    return abs(det_exact(rows)) / dot(nu, nu)


def _poly_mul(a: dict, b: dict) -> dict:
    out: dict = {}
    for ka, va in a.items():
        for kb, vb in b.items():
            k = tuple(x + y for x, y in zip(ka, kb))
            out[k] = out.get(k, 0) + va * vb
    return out


def simplex_moments(simplex: Sequence[Point], jac: Fraction, max_degree: int,
                    center: Sequence | None = None) -> dict[MultiIndex, Fraction]:
    """∫ (x - center)^α over a k-simplex whose measure is jac / k!.

    The simplex is parametrized by barycentric coordinates λ and the
    Dirichlet integral ∫ λ^β = k! vol ∏β_i! / (|β| + k)! closes the sum.
    """
    k = len(simplex) - 1
    n = len(simplex[0])
    c = [as_fraction(x) for x in center] if center is not None else [Fraction(0)] * n
    nb = k + 1
    unit = [tuple(1 if i == j else 0 for i in range(nb)) for j in range(nb)]
    coord = []
    for d in range(n):
        poly = {}
        for j in range(nb):
            val = simplex[j][d] - c[d]
            if val != 0:
                poly[unit[j]] = val
        coord.append(poly)

    powers: dict[MultiIndex, dict] = {tuple([0] * n): {tuple([0] * nb): Fraction(1)}}
    out = {}
    fact = [factorial(i) for i in range(max_degree + k + 2)]
    for alpha in multi_indices(n, max_degree):
        if alpha not in powers:
            d = next(i for i, a in enumerate(alpha) if a > 0)
            prev = tuple(a - (1 if i == d else 0) for i, a in enumerate(alpha))
            powers[alpha] = _poly_mul(powers[prev], coord[d])
        total = Fraction(0)
        for beta, coef in powers[alpha].items():
            num = 1
            for b in beta:
                num *= fact[b]
            total += coef * Fraction(num, fact[sum(beta) + k])
        out[alpha] = total * jac
    return out


def add_moments(acc: dict, new: dict) -> dict:
    for k, v in new.items():
        acc[k] = acc.get(k, Fraction(0)) + v
    return acc


def polytope_moments(poly: HalfSpacePolytope, max_degree: int, center=None) -> dict[MultiIndex, Fraction]:
    acc = {a: Fraction(0) for a in multi_indices(poly.dim, max_degree)}
    for s in poly.simplices:
        add_moments(acc, simplex_moments(s, simplex_jacobian(s), max_degree, center))
    return acc


def labelled_boundary_moments(poly: HalfSpacePolytope, label_normals: Sequence[Sequence],
                              max_degree: int, center=None) -> dict[int, dict[MultiIndex, Fraction]]:
    """Per-label ∫_{face} (x - center)^α dσ_L, skipping untagged cuts.

    Keys are the label indices carried in ``poly.tags``.
    """
    out: dict[int, dict] = {}
    for j in poly.facet_vertex_sets():
        tag = poly.tags[j]
        if tag is None:
            continue
        acc = out.setdefault(tag, {a: Fraction(0) for a in multi_indices(poly.dim, max_degree)})
        for s in poly.facet_simplices(j):
            jac = facet_measure_jacobian(s, label_normals[tag])
            add_moments(acc, simplex_moments(s, jac, max_degree, center))
    return out
