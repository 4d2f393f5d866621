"""Extremal affine function, the relative Futaki functional and crease stability probes."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from math import gcd
from typing import Callable, Sequence

import mpmath
import numpy as np

from ._exact import (HalfSpacePolytope, as_fraction, dot, facet_measure_jacobian,
                     labelled_boundary_moments, polytope_moments, simplex_jacobian, solve_exact)
from .polytope import (AffineFunction, DelzantPolytope, boundary_integral, boundary_quadrature,
                       integrate_affine_product, interior_quadrature)
from .potential import PolynomialField, SymplecticPotential

_DPS = 50


def _unit(n: int, i: int | None = None) -> tuple[int, ...]:
    return tuple(1 if k == i else 0 for k in range(n))


def extremal_affine(poly: DelzantPolytope) -> AffineFunction:
    """ℓ_ext solving ∫_P ℓ f dx = 2 ∫_∂P f dσ_L for f in {1, x_1, ..., x_n}, exactly."""
    n = poly.dim
    m = poly.moments(2)
    b = poly.total_boundary_moments(1)
    basis = [_unit(n)] + [_unit(n, i) for i in range(n)]
    rows = [[m[tuple(x + y for x, y in zip(p, q))] for q in basis] for p in basis]
    rhs = [2 * b[p] for p in basis]
    sol = solve_exact(rows, rhs)
    if sol is None:
        raise ArithmeticError("singular moment system for ℓ_ext")
    return AffineFunction(sol[0], tuple(sol[1:]))


def lext_residuals(poly: DelzantPolytope, ell: AffineFunction) -> list[float]:
    """Relative defect of the defining equations, one per affine basis function."""
    n = poly.dim
    out = []
    for i in [None] + list(range(n)):
        f = AffineFunction(0 if i is not None else 1, _unit(n, i) if i is not None else (0,) * n)
        lhs = integrate_affine_product(poly, ell, f)
        rhs = 2 * boundary_integral(poly, f)
        out.append(float(abs(lhs - rhs)) / max(1.0, float(abs(rhs))))
    return out


# --- exact integrals of L log L -------------------------------------------

def _llogl_antiderivative(m: int, t):
    """F_m with F_m^(m) = t log t; F_{m-j} is its j-th derivative."""
    if m >= 0:
        if t == 0:
            return mpmath.mpf(0)
        h = mpmath.harmonic(m + 1)
        return t ** (m + 1) / mpmath.factorial(m + 1) * (mpmath.log(t) - h + 1)
    if m == -1:
        return mpmath.log(t) + 1
    return (-1) ** m * mpmath.factorial(-m - 2) / t ** (-m - 1)


def _divided_difference(nodes: Sequence[Fraction], m: int):
    """F_m[t_0, ..., t_k] with confluent nodes handled through derivatives."""
    t = sorted(nodes)
    tm = [mpmath.mpf(x.numerator) / x.denominator for x in t]
    K = len(t)
    table = [_llogl_antiderivative(m, x) for x in tm]
    for order in range(1, K):
        new = []
        for i in range(K - order):
            j = i + order
            if t[j] == t[i]:
                new.append(_llogl_antiderivative(m - order, tm[i]) / mpmath.factorial(order))
            else:
                new.append((table[i + 1] - table[i]) / (tm[j] - tm[i]))
        table = new
    return table[0]


def simplex_llogl(simplex, jac: Fraction, normal, offset, weights=None):
    """∫_S w(x) L log L over a k-simplex, L affine ≥ 0, w affine given by vertex values.

    Uses ∫_Δ F^{(k)}(Σ λ_i t_i) dλ = F[t_0..t_k] and, for the weight,
    ∫_Δ λ_i F^{(k+1)}(Σ λ t) dλ = F[t_0..t_k, t_i].
    """
    with mpmath.workdps(_DPS):
        t = [dot(normal, v) + offset for v in simplex]
        if any(x < 0 for x in t):
            raise ValueError("label negative on simplex")
        k = len(simplex) - 1
        J = mpmath.mpf(jac.numerator) / jac.denominator
        if weights is None:
            return J * _divided_difference(t, k)
        total = mpmath.mpf(0)
        for ti, wi in zip(t, weights):
            if wi != 0:
                w = mpmath.mpf(wi.numerator) / wi.denominator
                total += w * _divided_difference(t + [ti], k + 1)
        return J * total


def guillemin_interior_integral(poly: DelzantPolytope, ell: AffineFunction | None = None) -> float:
    """∫_P ℓ u_0 dx with u_0 = ½ Σ L log L (ℓ ≡ 1 if None)."""
    ex = poly.exact
    total = mpmath.mpf(0)
    with mpmath.workdps(_DPS):
        for s in ex.simplices:
            jac = simplex_jacobian(s)
            w = None
            if ell is not None:
                c, g = as_fraction(ell.constant), [as_fraction(x) for x in ell.gradient]
                w = [c + dot(g, v) for v in s]
            for f in poly.facets:
                total += simplex_llogl(s, jac, f.normal, f.offset, w)
        return float(total / 2)


def guillemin_boundary_integral(poly: DelzantPolytope) -> float:
    """∫_∂P u_0 dσ_L."""
    ex = poly.exact
    total = mpmath.mpf(0)
    with mpmath.workdps(_DPS):
        for j, f in enumerate(poly.facets):
            for s in ex.facet_simplices(j):
                jac = facet_measure_jacobian(s, f.normal)
                for k, g in enumerate(poly.facets):
                    if k != j:
                        total += simplex_llogl(s, jac, g.normal, g.offset)
        return float(total / 2)


# --- convex test functions --------------------------------------------------

@dataclass
class ConvexTestFunction:
    """f(x) = max_k p_k(x) over affine pieces; normalized means f ≥ f(x0) = 0 on P."""
    kind: str
    pieces: list[AffineFunction]
    basepoint: tuple | None = None
    normalized: bool = False
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("affine", "crease", "max-of-affines"):
            raise ValueError(f"unknown test function kind {self.kind!r}")
        if not self.pieces:
            raise ValueError("a test function needs at least one affine piece")

    @classmethod
    def affine(cls, f: AffineFunction) -> "ConvexTestFunction":
        return cls("affine", [f])

    @classmethod
    def crease(cls, direction, offset, basepoint=None, normalize: bool = True) -> "ConvexTestFunction":
        """max(0, <a, x> - c)."""
        a = tuple(as_fraction(v) for v in direction)
        c = as_fraction(offset)
        f = cls("crease", [AffineFunction(Fraction(0), (Fraction(0),) * len(a)), AffineFunction(-c, a)],
                label=f"a={tuple(str(v) for v in a)};c={c}")
        if normalize:
            f = f.normalize(basepoint)
        return f

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.max(np.stack([p(x) for p in self.pieces]), axis=0)

    def normalize(self, basepoint) -> "ConvexTestFunction":
        """Subtract the piece active at x0, a supporting affine function there."""
        x0 = tuple(as_fraction(v) for v in basepoint)
        vals = [as_fraction(p.constant) + dot([as_fraction(g) for g in p.gradient], x0) for p in self.pieces]
        act = self.pieces[vals.index(max(vals))]
        ac, ag = as_fraction(act.constant), [as_fraction(g) for g in act.gradient]
        pieces = [AffineFunction(as_fraction(p.constant) - ac,
                                 tuple(as_fraction(g) - h for g, h in zip(p.gradient, ag)))
                  for p in self.pieces]
        return ConvexTestFunction(self.kind, pieces, x0, True, self.label)

    def regions(self, poly: DelzantPolytope) -> list[tuple[AffineFunction, HalfSpacePolytope]]:
        """Cells of P on which each piece is the maximum (auxiliary cuts untagged)."""
        ex = poly.exact
        uniq: list[AffineFunction] = []
        for p in self.pieces:
            key = (as_fraction(p.constant), tuple(as_fraction(g) for g in p.gradient))
            if key not in [(as_fraction(q.constant), tuple(as_fraction(g) for g in q.gradient)) for q in uniq]:
                uniq.append(AffineFunction(*key))
        out = []
        for k, p in enumerate(uniq):
            cell = ex
            for m, q in enumerate(uniq):
                if m != k:
                    cell = cell.clip([a - b for a, b in zip(p.gradient, q.gradient)], p.constant - q.constant)
            out.append((p, cell))
        return out

    def to_json(self) -> dict:
        return {"kind": self.kind, "label": self.label, "normalized": self.normalized,
                "pieces": [p.to_json() for p in self.pieces],
                "basepoint": None if self.basepoint is None else [str(v) for v in self.basepoint]}


def _affine_moment_integral(table, ell_c, ell_g, p: AffineFunction, n: int) -> Fraction:
    """∫ ℓ p from a degree-2 moment table (ℓ = None means ℓ ≡ 1 and degree 1 suffices)."""
    pc, pg = as_fraction(p.constant), [as_fraction(g) for g in p.gradient]
    if ell_c is None:
        return pc * table[_unit(n)] + sum((pg[i] * table[_unit(n, i)] for i in range(n)), Fraction(0))
    total = ell_c * pc * table[_unit(n)]
    for i in range(n):
        total += (ell_c * pg[i] + pc * ell_g[i]) * table[_unit(n, i)]
        for k in range(n):
            total += ell_g[i] * pg[k] * table[tuple(a + b for a, b in zip(_unit(n, i), _unit(n, k)))]
    return total


def piecewise_integrals(poly: DelzantPolytope, f: ConvexTestFunction, ell: AffineFunction | None):
    """Exact (∫_P ℓ f dx, ∫_∂P f dσ_L) for a max-of-affines f."""
    n = poly.dim
    normals = [fa.normal for fa in poly.facets]
    ell_c = None if ell is None else as_fraction(ell.constant)
    ell_g = None if ell is None else [as_fraction(g) for g in ell.gradient]
    vol_term, bdy_term = Fraction(0), Fraction(0)
    for p, cell in f.regions(poly):
        if not cell.full_dimensional:
            continue
        vol_term += _affine_moment_integral(polytope_moments(cell, 2), ell_c, ell_g, p, n)
        for table in labelled_boundary_moments(cell, normals, 1).values():
            bdy_term += _affine_moment_integral(table, None, None, p, n)
    return vol_term, bdy_term


def futaki(poly: DelzantPolytope, ell: AffineFunction, f) -> Fraction | float:
    """F_ℓ(f) = -∫_P ℓ f dx + 2 ∫_∂P f dσ_L.

    Exact rational for affine and max-of-affines f, exact moments for
    polynomials, closed-form L log L integrals for potentials, quadrature
    for anything else.
    """
    if isinstance(f, AffineFunction):
        f = ConvexTestFunction.affine(f)
    if isinstance(f, ConvexTestFunction):
        vol, bdy = piecewise_integrals(poly, f, ell)
        return -vol + 2 * bdy
    if isinstance(f, PolynomialField):
        return -f.integrate_times_affine(poly, ell) + 2 * f.integrate_boundary(poly)
    if isinstance(f, SymplecticPotential):
        return (-guillemin_interior_integral(poly, ell) + 2 * guillemin_boundary_integral(poly)
                + futaki(poly, ell, f.correction))
    if callable(f):
        qi = interior_quadrature(poly, level=6)
        qb = boundary_quadrature(poly, level=6)
        return -qi.integrate(ell(qi.nodes) * f(qi.nodes)) + 2 * qb.integrate(f(qb.nodes))
    raise TypeError(f"cannot integrate {type(f).__name__}")


# --- stability probes -------------------------------------------------------

@dataclass
class ProbeFamily:
    """Crease probes max(0, <a, x> - c) with primitive a, |a_i| <= max_entry."""
    max_entry: int = 3
    offsets_per_direction: int = 13
    basepoint: tuple | None = None
    tol: float = 1e-12
    ell_override: Callable[[AffineFunction], AffineFunction] | AffineFunction | None = None


def primitive_directions(n: int, max_entry: int) -> list[tuple[int, ...]]:
    """One representative per ± pair: the first nonzero entry is positive."""
    out = []
    for a in itertools.product(range(-max_entry, max_entry + 1), repeat=n):
        nz = [v for v in a if v]
        if not nz or nz[0] < 0:
            continue
        g = 0
        for v in nz:
            g = gcd(g, abs(v))
        if g == 1:
            out.append(a)
    return out


def crease_family(poly: DelzantPolytope, fam: ProbeFamily) -> list[ConvexTestFunction]:
    if fam.offsets_per_direction < 1 or fam.max_entry < 1:
        raise ValueError("empty probe family")
    x0 = fam.basepoint if fam.basepoint is not None else poly.barycenter
    verts = poly.vertices
    out = []
    for a in primitive_directions(poly.dim, fam.max_entry):
        vals = [dot(a, v) for v in verts]
        lo, hi = min(vals), max(vals)
        K = fam.offsets_per_direction
        for k in range(1, K + 1):
            c = lo + (hi - lo) * Fraction(k, K + 1)
            out.append(ConvexTestFunction.crease(a, c, x0))
    if not out:
        raise ValueError("empty probe family")
    return out


@dataclass
class Probe:
    id: str
    F_val: Fraction
    boundary_norm: Fraction
    ratio: float

    def to_json(self) -> dict:
        return {"id": self.id, "F_val": float(self.F_val), "F_exact": str(self.F_val),
                "boundary_norm": float(self.boundary_norm), "ratio": self.ratio}


@dataclass
class StabilityReport:
    l_ext: AffineFunction
    probes: list[Probe] = field(default_factory=list)
    tol: float = 1e-12

    @property
    def min_ratio(self) -> float:
        return min((p.ratio for p in self.probes), default=float("nan"))

    @property
    def certificates(self) -> list[Probe]:
        return [p for p in self.probes if p.F_val < -self.tol]

    @property
    def verdict(self) -> str:
        return "unstable-certificate" if self.certificates else "no-violation-found"

    def to_json(self) -> dict:
        return {"l_ext": self.l_ext.to_json(), "probes": [p.to_json() for p in self.probes],
                "min_ratio": self.min_ratio, "verdict": self.verdict,
                "n_probes": len(self.probes), "n_certificates": len(self.certificates)}


def stability_probe(poly: DelzantPolytope, fam: ProbeFamily | None = None) -> StabilityReport:
    """Evaluate F_{ℓ_ext} exactly on normalized crease functions.

    ``fam.ell_override`` replaces ℓ_ext (a function of ℓ_ext or a fixed
    AffineFunction); it exists to exercise the certificate path.
    """
    fam = fam or ProbeFamily()
    ell = extremal_affine(poly)
    if fam.ell_override is not None:
        ell = fam.ell_override(ell) if callable(fam.ell_override) and not isinstance(
            fam.ell_override, AffineFunction) else fam.ell_override
    probes = []
    for f in crease_family(poly, fam):
        vol, bdy = piecewise_integrals(poly, f, ell)
        F = -vol + 2 * bdy
        ratio = float(F) / float(bdy) if bdy > 0 else float("inf")
        probes.append(Probe(f.label, F, bdy, ratio))
    probes.sort(key=lambda p: p.id)
    return StabilityReport(ell, probes, fam.tol)
