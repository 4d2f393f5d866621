"""Toric Mabuchi energy relative to ℓ_ext, its variations and linear geodesics.

M(u) = F_ℓext(u) - ∫_P log det(Hess u + iB) dx + ∫_P log det(Hess u_ref) dx.
The log-det integrals are split as ∫ log det[(Hess u + iB) G_0^{-1}] (a
bounded integrand) plus a common ∫ log det G_0 that cancels in the total.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .extremal import extremal_affine, futaki
from .gk_operator import abreu_gscal
from .polytope import AffineFunction, DelzantPolytope, QuadratureRule, interior_quadrature
from .potential import AdmissibilityError, PoissonDatum, PolynomialField, SymplecticPotential, hermitian_margin

REFERENCE_LEVEL = 12


@dataclass
class EnergyBreakdown:
    futaki_term: float
    logdet_term: float
    reference_term: float

    @property
    def total(self) -> float:
        return self.futaki_term + self.logdet_term + self.reference_term

    def to_json(self) -> dict:
        return {"futaki_term": self.futaki_term, "logdet_term": self.logdet_term,
                "reference_term": self.reference_term, "total": self.total}


def _check_rule(quad: QuadratureRule):
    if quad.measure != "interior":
        raise ValueError("the energy needs an interior (dx) quadrature rule")


@lru_cache(maxsize=32)
def guillemin_logdet_integral(poly: DelzantPolytope, level: int = REFERENCE_LEVEL) -> float:
    """∫_P log det G_0 dx on a fine graded rule; shared by both log-det terms."""
    q = interior_quadrature(poly, level)
    nu = poly.normals
    G0 = 0.5 * np.einsum("pj,ja,jb->pab", 1.0 / poly.labels(q.nodes), nu, nu)
    return q.integrate(np.linalg.slogdet(G0)[1])


def logdet_ratio(u: SymplecticPotential, B: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """log det[(Hess u + iB) G_0^{-1}] at nodes; raises if not admissible."""
    G = u.hessian(nodes)
    if np.any(hermitian_margin(G, B) <= 0):
        raise AdmissibilityError("Hess u + iB is not positive definite on the quadrature nodes")
    M = G + 1j * B
    ld = np.linalg.slogdet(M)[1]
    return ld - np.linalg.slogdet(u.guillemin_hessian(nodes))[1]


def mabuchi_energy(u: SymplecticPotential, datum: PoissonDatum, u_ref: SymplecticPotential | None = None,
                   quad: QuadratureRule | None = None, ell: AffineFunction | None = None) -> EnergyBreakdown:
    """Relative Mabuchi energy as a breakdown; the reference log det is taken at B = 0."""
    poly = u.polytope
    if u_ref is not None and u_ref.polytope != poly:
        raise ValueError("u and u_ref live on different polytopes")
    quad = quad or interior_quadrature(poly, 6)
    _check_rule(quad)
    ell = ell or extremal_affine(poly)
    common = guillemin_logdet_integral(poly)
    fut = float(futaki(poly, ell, u))
    lu = quad.integrate(logdet_ratio(u, datum.B, quad.nodes))
    if u_ref is None or not u_ref.correction.coefficients:
        lref = 0.0
    else:
        lref = quad.integrate(logdet_ratio(u_ref, np.zeros_like(datum.B), quad.nodes))
    return EnergyBreakdown(fut, -(lu + common), lref + common)


def mabuchi_gradient_pairing(u: SymplecticPotential, datum: PoissonDatum, direction: PolynomialField,
                             quad: QuadratureRule | None = None, ell: AffineFunction | None = None) -> float:
    """∫_P u̇ (κ - ℓ_ext) dx."""
    poly = u.polytope
    quad = quad or interior_quadrature(poly, 6)
    ell = ell or extremal_affine(poly)
    kappa = abreu_gscal(u, datum, quad.nodes)
    return quad.integrate(direction(quad.nodes) * (kappa - ell(quad.nodes)))


def mabuchi_second_variation(u: SymplecticPotential, datum: PoissonDatum, direction: PolynomialField,
                             quad: QuadratureRule | None = None) -> float:
    """∫_P tr[(Z S)^2] dx with Z = (Hess u + iB)^{-1}, S = Hess u̇."""
    quad = quad or interior_quadrature(u.polytope, 6)
    S = direction.hessian(quad.nodes)
    if not np.any(S):
        return 0.0
    Z = np.linalg.inv(u.hessian(quad.nodes) + 1j * datum.B)
    ZS = Z @ S
    vals = np.einsum("nij,nji->n", ZS, ZS)
    val = quad.integrate(vals.real)
    imag = abs(quad.integrate(vals.imag))
    if imag > 1e-10 * max(1.0, abs(val)):
        raise ArithmeticError(f"imaginary residue {imag:.3e} in the second variation")
    return val


def geodesic(u_a: SymplecticPotential, u_b: SymplecticPotential, t: float) -> SymplecticPotential:
    """u_t = (1 - t) u_a + t u_b; the Guillemin parts agree so only corrections mix."""
    if u_a.polytope != u_b.polytope:
        raise ValueError("geodesic endpoints live on different polytopes")
    if u_a.gauge_point != u_b.gauge_point:
        raise ValueError("geodesic endpoints use different gauges")
    if t == 0:
        return u_a
    if t == 1:
        return u_b
    corr = u_a.correction.scaled(1.0 - t) + u_b.correction.scaled(t)
    return u_a.with_correction(corr)


@dataclass
class ScanRow:
    t: float
    M: float
    dM_pairing: float
    d2M: float | None


def convexity_scan(u_a: SymplecticPotential, u_b: SymplecticPotential, datum: PoissonDatum,
                   samples: int = 11, quad: QuadratureRule | None = None,
                   u_ref: SymplecticPotential | None = None) -> list[ScanRow]:
    """M along the geodesic, its pairing derivative and centered second differences."""
    if samples < 3:
        raise ValueError("need at least three samples")
    poly = u_a.polytope
    quad = quad or interior_quadrature(poly, 6)
    ell = extremal_affine(poly)
    ts = np.linspace(0.0, 1.0, samples)
    h = ts[1] - ts[0]
    udot = u_b.correction - u_a.correction
    Ms, dMs = [], []
    for t in ts:
        ut = geodesic(u_a, u_b, float(t))
        Ms.append(mabuchi_energy(ut, datum, u_ref, quad, ell).total)
        dMs.append(mabuchi_gradient_pairing(ut, datum, udot, quad, ell))
    rows = []
    for k, t in enumerate(ts):
        d2 = None if k in (0, samples - 1) else (Ms[k + 1] - 2 * Ms[k] + Ms[k - 1]) / h ** 2
        rows.append(ScanRow(float(t), Ms[k], dMs[k], d2))
    return rows


def scan_to_csv(rows: list[ScanRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "M", "dM_pairing", "d2M"])
    for r in rows:
        w.writerow([f"{r.t:.17g}", f"{r.M:.17g}", f"{r.dM_pairing:.17g}",
                    "" if r.d2M is None else f"{r.d2M:.17g}"])
    return buf.getvalue()
