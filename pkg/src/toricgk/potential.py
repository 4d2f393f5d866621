"""Symplectic potentials u = u_0 + v and constant Poisson data (A, B)."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from pathlib import Path
from typing import Sequence

import numpy as np

from ._exact import as_fraction, multi_indices
from .polytope import AffineFunction, DelzantPolytope, QuadratureRule

MultiIndex = tuple[int, ...]


class AdmissibilityError(ValueError):
    """A potential is not admissible for the requested Poisson datum."""


def _falling(a: int, b: int) -> int:
    out = 1
    for i in range(b):
        out *= a - i
    return out


def monomial_derivatives(x: np.ndarray, center: np.ndarray, alphas: Sequence[MultiIndex],
                         order: int) -> np.ndarray:
    """∂^order of (x - center)^α for every α in ``alphas``.

    Returns an array of shape (len(alphas), N) + (n,) * order, symmetric in
    the trailing axes.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    N, n = x.shape
    y = x - center
    maxdeg = max((max(a) for a in alphas), default=0)
    powers = np.ones((maxdeg + 1, N, n))
    for k in range(1, maxdeg + 1):
        powers[k] = powers[k - 1] * y
    out = np.zeros((len(alphas), N) + (n,) * order)
    for idx in itertools.combinations_with_replacement(range(n), order):
        beta = [0] * n
        for i in idx:
            beta[i] += 1
        vals = np.zeros((len(alphas), N))
        for ia, alpha in enumerate(alphas):
            if any(a < b for a, b in zip(alpha, beta)):
                continue
            coef = 1
            term = np.ones(N)
            for i in range(n):
                coef *= _falling(alpha[i], beta[i])
                e = alpha[i] - beta[i]
                if e:
                    term = term * powers[e, :, i]
            vals[ia] = coef * term
        for perm in set(itertools.permutations(idx)):
            out[(slice(None), slice(None)) + perm] = vals
    return out


@dataclass
class PolynomialField:
    """v(x) = Σ_α c_α (x - center)^α."""
    center: tuple[Fraction, ...]
    coefficients: dict[MultiIndex, float] = field(default_factory=dict)

    def __post_init__(self):
        self.center = tuple(as_fraction(c) for c in self.center)
        # sorted keys fix the summation order, so serialization round-trips bitwise
        self.coefficients = dict(sorted((tuple(int(i) for i in k), float(v))
                                        for k, v in self.coefficients.items()))

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def degree(self) -> int:
        return max((sum(a) for a in self.coefficients), default=0)

    @property
    def center_array(self) -> np.ndarray:
        return np.array([float(c) for c in self.center])

    @classmethod
    def zero(cls, center) -> "PolynomialField":
        return cls(tuple(center), {})

    @classmethod
    def from_affine(cls, f: AffineFunction, center) -> "PolynomialField":
        c = [as_fraction(x) for x in center]
        n = len(c)
        val = float(f.constant) + sum(float(g) * float(ci) for g, ci in zip(f.gradient, c))
        coeffs = {(0,) * n: val}
        for i, g in enumerate(f.gradient):
            coeffs[tuple(1 if k == i else 0 for k in range(n))] = float(g)
        return cls(tuple(c), coeffs)

    def _arrays(self):
        alphas = list(self.coefficients)
        return alphas, np.array([self.coefficients[a] for a in alphas])

    def derivative(self, x, order: int) -> np.ndarray:
        alphas, c = self._arrays()
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if not alphas:
            return np.zeros((x.shape[0],) + (x.shape[1],) * order)
        d = monomial_derivatives(x, self.center_array, alphas, order)
        return np.tensordot(c, d, axes=(0, 0))

    def __call__(self, x):
        return self.derivative(x, 0)

    def gradient(self, x):
        return self.derivative(x, 1)

    def hessian(self, x):
        return self.derivative(x, 2)

    def scaled(self, s: float) -> "PolynomialField":
        return PolynomialField(self.center, {a: s * c for a, c in self.coefficients.items()})

    def __add__(self, other: "PolynomialField") -> "PolynomialField":
        if other.center != self.center:
            other = other.recentered(self.center)
        out = dict(self.coefficients)
        for a, c in other.coefficients.items():
            out[a] = out.get(a, 0.0) + c
        return PolynomialField(self.center, out)

    def __sub__(self, other):
        return self + other.scaled(-1.0)

    def recentered(self, center) -> "PolynomialField":
        """Same function written in powers of (x - center)."""
        center = tuple(as_fraction(c) for c in center)
        shift = [float(a - b) for a, b in zip(center, self.center)]
        out: dict[MultiIndex, float] = {}
        for alpha, c in self.coefficients.items():
            # (y + s)^α with y = x - center, s = center - old_center
            for beta in itertools.product(*[range(a + 1) for a in alpha]):
                w = c
                for a, b, s in zip(alpha, beta, shift):
                    w *= comb(a, b) * s ** (a - b)
                out[beta] = out.get(beta, 0.0) + w
        return PolynomialField(center, {k: v for k, v in out.items() if v != 0.0})

    def gauged(self, center=None) -> "PolynomialField":
        """Drop the affine part at ``center``: v(x0) = 0, ∇v(x0) = 0."""
        p = self if center is None else self.recentered(center)
        return PolynomialField(p.center, {a: c for a, c in p.coefficients.items() if sum(a) >= 2})

    def _moment_sum(self, table) -> float:
        return float(sum(c * float(table[a]) for a, c in self.coefficients.items()))

    def integrate(self, poly: DelzantPolytope) -> float:
        return self._moment_sum(poly.moments(self.degree, self.center))

    def integrate_times_affine(self, poly: DelzantPolytope, f: AffineFunction) -> float:
        """∫_P f v dx using moments of one degree higher."""
        n = self.dim
        m = poly.moments(self.degree + 1, self.center)
        f0 = float(f.constant) + sum(float(g) * float(c) for g, c in zip(f.gradient, self.center))
        total = 0.0
        for a, c in self.coefficients.items():
            total += c * f0 * float(m[a])
            for i in range(n):
                g = float(f.gradient[i])
                if g:
                    total += c * g * float(m[tuple(a[k] + (k == i) for k in range(n))])
        return total

    def integrate_boundary(self, poly: DelzantPolytope) -> float:
        return self._moment_sum(poly.total_boundary_moments(self.degree, self.center))

    def to_json(self) -> dict:
        return {"degree": self.degree,
                "coefficients": {",".join(map(str, a)): c for a, c in sorted(self.coefficients.items())},
                "gauge_point": [float(c) for c in self.center]}

    @classmethod
    def from_json(cls, data: dict) -> "PolynomialField":
        center = tuple(_float_to_fraction(c) for c in data["gauge_point"])
        coeffs = {tuple(int(i) for i in k.split(",")): float(v) for k, v in data["coefficients"].items()}
        return cls(center, coeffs)


def _float_to_fraction(v) -> Fraction:
    if isinstance(v, str):
        return Fraction(v)
    f = Fraction(v).limit_denominator(10**12)
    return f if float(f) == float(v) else Fraction(v)


def gauged_basis(dim: int, degree: int) -> list[MultiIndex]:
    """Monomial exponents 2 <= |α| <= degree, the gauge-fixed correction space."""
    return multi_indices(dim, degree, min_degree=2)


# --- potentials -----------------------------------------------------------

class SymplecticPotential:
    """u(x) = ½ Σ_j L_j(x) log L_j(x) + v(x) with v gauged at a basepoint."""

    guillemin_scale = 0.5

    def __init__(self, polytope: DelzantPolytope, correction: PolynomialField | None = None,
                 gauge_point=None):
        self.polytope = polytope
        if gauge_point is None:
            gauge_point = correction.center if correction is not None else polytope.barycenter
        gauge_point = tuple(as_fraction(c) for c in gauge_point)
        if correction is None:
            correction = PolynomialField.zero(gauge_point)
        self.correction = correction.gauged(gauge_point)

    @property
    def gauge_point(self) -> tuple[Fraction, ...]:
        return self.correction.center

    @property
    def degree(self) -> int:
        return self.correction.degree

    def __repr__(self):
        return f"SymplecticPotential({self.polytope!r}, degree={self.degree})"

    def _labels(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        L = self.polytope.labels(x)
        if np.any(L <= 0):
            raise ValueError("point is not in the interior of the polytope")
        return L

    def guillemin_value(self, x) -> np.ndarray:
        L = self._labels(x)
        return 0.5 * np.sum(L * np.log(L), axis=-1)

    def __call__(self, x) -> np.ndarray:
        return self.guillemin_value(x) + self.correction(x)

    def guillemin_hessian(self, x) -> np.ndarray:
        """G_0 = ½ Σ_j ν_j ν_jᵀ / L_j."""
        L = self._labels(x)
        nu = self.polytope.normals
        return 0.5 * np.einsum("pj,ja,jb->pab", 1.0 / L, nu, nu)

    def hessian(self, x) -> np.ndarray:
        return self.guillemin_hessian(x) + self.correction.hessian(x)

    def hessian_jets(self, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(G, ∂_k G, ∂_k ∂_l G) at points x; axes (N, i, j[, k[, l]])."""
        L = self._labels(x)
        nu = self.polytope.normals
        G = 0.5 * np.einsum("pj,ja,jb->pab", 1.0 / L, nu, nu)
        dG = -0.5 * np.einsum("pj,ja,jb,jk->pabk", L ** -2, nu, nu, nu)
        d2G = np.einsum("pj,ja,jb,jk,jl->pabkl", L ** -3, nu, nu, nu, nu)
        if self.correction.coefficients:
            G = G + self.correction.derivative(x, 2)
            dG = dG + self.correction.derivative(x, 3)
            d2G = d2G + self.correction.derivative(x, 4)
        return G, dG, d2G

    def with_correction(self, correction: PolynomialField) -> "SymplecticPotential":
        return SymplecticPotential(self.polytope, correction, self.gauge_point)

    def add_polynomial(self, p: PolynomialField) -> "SymplecticPotential":
        return self.with_correction(self.correction + p.recentered(self.gauge_point))

    def integrate_boundary(self, poly: DelzantPolytope) -> float:
        from .extremal import guillemin_boundary_integral
        return guillemin_boundary_integral(self.polytope) + self.correction.integrate_boundary(poly)

    def to_json(self) -> dict:
        d = self.correction.to_json()
        d["polytope"] = self.polytope.to_json()
        return d

    @classmethod
    def from_json(cls, data: dict | str | Path, polytope: DelzantPolytope | None = None) -> "SymplecticPotential":
        if not isinstance(data, dict):
            data = json.loads(Path(data).read_text())
        if polytope is None:
            polytope = DelzantPolytope.from_json(data["polytope"])
        corr = PolynomialField.from_json(data)
        return cls(polytope, corr, corr.center)


def guillemin_potential(poly: DelzantPolytope) -> SymplecticPotential:
    return SymplecticPotential(poly)


def hessian(u: SymplecticPotential, x) -> np.ndarray:
    """Hess u at interior points; a single point returns an (n, n) matrix."""
    x = np.asarray(x, dtype=float)
    G = u.hessian(x)
    return G[0] if x.ndim == 1 else G


@dataclass
class PoissonDatum:
    """Constant bivectors A, B on the torus Lie algebra."""
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        for name, M in (("A", self.A), ("B", self.B)):
            if M.shape[0] != M.shape[1]:
                raise ValueError(f"{name} must be square")
            if not np.allclose(M, -M.T, atol=0.0, rtol=0.0):
                raise ValueError(f"{name} must be antisymmetric")

    @classmethod
    def zero(cls, n: int) -> "PoissonDatum":
        return cls(np.zeros((n, n)), np.zeros((n, n)))

    @classmethod
    def from_b(cls, B, A=None) -> "PoissonDatum":
        B = np.atleast_2d(np.asarray(B, dtype=float))
        return cls(np.zeros_like(B) if A is None else A, B)

    @classmethod
    def planar(cls, b: float = 0.0, a: float = 0.0) -> "PoissonDatum":
        """2-torus datum with A_12 = a, B_12 = b."""
        return cls(np.array([[0.0, a], [-a, 0.0]]), np.array([[0.0, b], [-b, 0.0]]))

    @property
    def dim(self) -> int:
        return self.B.shape[0]

    def scaled(self, t: float) -> "PoissonDatum":
        return PoissonDatum(t * self.A, t * self.B)

    def without_a(self) -> "PoissonDatum":
        return PoissonDatum(np.zeros_like(self.A), self.B)

    def to_json(self) -> dict:
        return {"A": self.A.tolist(), "B": self.B.tolist()}


# --- admissibility ------------------------------------------------------

@dataclass
class AdmissibilityReport:
    admissible: bool
    margin: float
    worst_point: list[float]
    boundary_ratio_max: float
    boundary_ratio_bounded: bool
    n_nodes: int

    def to_json(self) -> dict:
        return dict(self.__dict__)


def real_embedding(G: np.ndarray, B: np.ndarray) -> np.ndarray:
    """[[G, -B], [B, G]], whose spectrum is that of G + iB, doubled."""
    G = np.asarray(G)
    Bb = np.broadcast_to(B, G.shape)
    top = np.concatenate([G, -Bb], axis=-1)
    bot = np.concatenate([Bb, G], axis=-1)
    return np.concatenate([top, bot], axis=-2)


def hermitian_margin(G: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of G + iB at every point."""
    return np.linalg.eigvalsh(real_embedding(G, B))[..., 0]


def boundary_layer_nodes(poly: DelzantPolytope, depths=(1e-2, 1e-3, 1e-4, 1e-5, 1e-6)) -> np.ndarray:
    """Points at graded distances from every facet, along rays from face centroids."""
    ex = poly.exact
    pts = []
    for simp in ex.simplices:
        apex = np.array([float(c) for c in simp[0]])
        base = np.mean([[float(c) for c in p] for p in simp[1:]], axis=0)
        for d in depths:
            pts.append(base + d * (apex - base))
    return np.array(pts)


def admissibility_check(u: SymplecticPotential, datum: PoissonDatum,
                        quad: QuadratureRule | np.ndarray, bound: float = 1e6) -> AdmissibilityReport:
    """Sampled positivity of Hess u + iB and boundedness of (Hess u + iB)^{-1} G_0."""
    nodes = quad.nodes if isinstance(quad, QuadratureRule) else np.asarray(quad)
    layer = boundary_layer_nodes(u.polytope)
    allx = np.vstack([nodes, layer])
    G = u.hessian(allx)
    eig = hermitian_margin(G, datum.B)
    i = int(np.argmin(eig))
    margin = float(eig[i])
    ratio = np.nan
    if margin > 0:
        G0 = u.guillemin_hessian(layer)
        Z = np.linalg.inv(u.hessian(layer) + 1j * datum.B)
        ratio = float(np.max(np.linalg.norm(Z @ G0, ord=2, axis=(-2, -1))))
    return AdmissibilityReport(
        admissible=margin > 0,
        margin=margin,
        worst_point=allx[i].tolist(),
        boundary_ratio_max=ratio,
        boundary_ratio_bounded=bool(np.isfinite(ratio) and ratio < bound),
        n_nodes=len(allx),
    )
