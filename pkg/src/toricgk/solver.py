"""Variational solver for κ(u, 0, B) = ℓ_ext over gauged polynomial corrections.

The discrete Mabuchi energy on a fixed graded rule is minimized in the
coefficients of v = Σ s_α ((x - x0)/h)^α, 2 <= |α| <= d.  L-BFGS with an
admissibility-preserving backtracking line search does the bulk of the
descent and Newton steps with the exact second variation finish it.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .extremal import extremal_affine, futaki
from .gk_operator import abreu_gscal
from .polytope import AffineFunction, DelzantPolytope, check_nodes, interior_quadrature
from .potential import (AdmissibilityError, PoissonDatum, PolynomialField, SymplecticPotential,
                        boundary_layer_nodes, gauged_basis, hermitian_margin, monomial_derivatives)

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    pass


@dataclass
class LineSearch:
    shrink: float = 0.5
    armijo: float = 1e-4
    margin_fraction: float = 0.1
    max_halvings: int = 50


@dataclass
class SolveOptions:
    degree: int = 8
    degree_cap: int = 12
    quad_level: int = 6
    check_density: int = 24
    max_iterations: int = 200
    residual_target: float = 1e-4
    lbfgs_memory: int = 10
    lbfgs_iterations: int = 40
    newton_tol: float = 1e-22
    line_search: LineSearch = field(default_factory=LineSearch)
    continuation_steps: tuple[float, ...] = (0.0, 0.05, 0.1, 0.15, 0.2)

    def __post_init__(self):
        if self.residual_target <= 0:
            raise ValueError("residual_target must be positive")
        if self.degree < 2:
            raise ValueError("degree must be at least 2")
        steps = [abs(t) for t in self.continuation_steps]
        if steps and (steps[0] != 0 or any(b < a for a, b in zip(steps, steps[1:]))):
            raise ValueError("continuation steps must start at 0 and increase in |t|")


@dataclass
class SolutionReport:
    potential: SymplecticPotential
    residual_sup: float
    residual_l2: float
    energy_trace: list[tuple[int, float]]
    admissibility_margin: float
    t: float
    converged: bool
    degree: int
    iterations: int
    l_ext: AffineFunction
    B: np.ndarray
    residual_target: float
    diagnostics: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "converged": self.converged, "t": self.t, "degree": self.degree,
            "iterations": self.iterations, "residual_sup": self.residual_sup,
            "residual_l2": self.residual_l2, "residual_target": self.residual_target,
            "admissibility_margin": self.admissibility_margin,
            "l_ext": self.l_ext.to_json(), "B": self.B.tolist(),
            "energy_trace": [[i, e] for i, e in self.energy_trace],
            "diagnostics": list(self.diagnostics),
            "potential": self.potential.correction.to_json(),
        }


class _Discretization:
    """Energy, gradient and Hessian of the discrete Mabuchi energy in scaled coefficients."""

    def __init__(self, poly: DelzantPolytope, B: np.ndarray, degree: int, level: int, ell: AffineFunction):
        self.poly, self.B, self.degree, self.ell = poly, B, degree, ell
        self.center = poly.barycenter
        c = np.array([float(v) for v in self.center])
        verts = np.array([[float(v) for v in p] for p in poly.vertices])
        self.h = float(np.max(verts.max(0) - verts.min(0))) / 2
        self.alphas = gauged_basis(poly.dim, degree)
        self.quad = interior_quadrature(poly, level)
        nodes = self.quad.nodes
        self.w = self.quad.weights
        scale = np.array([self.h ** -sum(a) for a in self.alphas])
        self.scale = scale
        self.S = monomial_derivatives(nodes, c, self.alphas, 2) * scale[:, None, None, None]
        self.u0 = SymplecticPotential(poly)
        self.G0 = self.u0.guillemin_hessian(nodes)
        self.logdet0 = np.linalg.slogdet(self.G0)[1]
        self.layer = boundary_layer_nodes(poly)
        self.S_layer = monomial_derivatives(self.layer, c, self.alphas, 2) * scale[:, None, None, None]
        self.G0_layer = self.u0.guillemin_hessian(self.layer)
        self.f_const = float(futaki(poly, ell, self.u0))
        self.f = np.array([float(futaki(poly, ell, PolynomialField(self.center, {a: s})))
                           for a, s in zip(self.alphas, scale)])

    def potential(self, s: np.ndarray) -> SymplecticPotential:
        coeffs = {a: float(v) * k for a, v, k in zip(self.alphas, s, self.scale) if v != 0}
        return SymplecticPotential(self.poly, PolynomialField(self.center, coeffs))

    def coefficients_of(self, u: SymplecticPotential) -> np.ndarray:
        corr = u.correction.recentered(self.center)
        out = np.zeros(len(self.alphas))
        index = {a: i for i, a in enumerate(self.alphas)}
        for a, v in corr.coefficients.items():
            if sum(a) < 2:
                continue
            if a not in index:
                raise ValueError(f"warm start has degree above {self.degree}")
            out[index[a]] = v / self.scale[index[a]]
        return out

    def hessians(self, s):
        return self.G0 + np.tensordot(s, self.S, axes=(0, 0))

    def margin(self, s) -> float:
        G = self.hessians(s)
        Gl = self.G0_layer + np.tensordot(s, self.S_layer, axes=(0, 0))
        return float(min(hermitian_margin(G, self.B).min(), hermitian_margin(Gl, self.B).min()))

    def energy(self, s) -> float:
        """Discrete M relative to u_0 (whose own log-det ratio is zero)."""
        G = self.hessians(s)
        ld = np.linalg.slogdet(G + 1j * self.B)[1] - self.logdet0
        return self.f_const + float(self.f @ s) - float(self.w @ ld)

    def gradient(self, s) -> np.ndarray:
        X = np.linalg.inv(self.hessians(s) + 1j * self.B).real
        return self.f - np.einsum("q,qij,aqji->a", self.w, X, self.S)

    def hessian(self, s) -> np.ndarray:
        Z = np.linalg.inv(self.hessians(s) + 1j * self.B)
        ZS = np.einsum("qij,aqjk->aqik", Z, self.S)
        H = np.einsum("q,aqij,bqji->ab", self.w, ZS, ZS).real
        return 0.5 * (H + H.T)


def _residuals(u: SymplecticPotential, B: np.ndarray, ell: AffineFunction, nodes: np.ndarray):
    r = abreu_gscal(u, PoissonDatum.from_b(B), nodes) - ell(nodes)
    return float(np.max(np.abs(r))), float(np.sqrt(np.mean(r ** 2)))


def _line_search(disc: _Discretization, s, E, g, d, margin, ls: LineSearch):
    slope = float(g @ d)
    if slope >= 0:
        return None
    step = 1.0
    for _ in range(ls.max_halvings):
        trial = s + step * d
        m = disc.margin(trial)
        if m > ls.margin_fraction * margin:
            Et = disc.energy(trial)
            if Et <= E + ls.armijo * step * slope:
                return trial, Et, m
        step *= ls.shrink
    return None


def _minimize(disc: _Discretization, s: np.ndarray, opts: SolveOptions, trace: list, it0: int):
    """L-BFGS then Newton on the discrete energy; returns (s, iterations, diagnostics)."""
    ls = opts.line_search
    E = disc.energy(s)
    g = disc.gradient(s)
    margin = disc.margin(s)
    it = it0
    mem_s, mem_y = [], []
    diags = []
    for _ in range(opts.lbfgs_iterations):
        if it >= opts.max_iterations:
            break
        q = g.copy()
        alphas = []
        for sv, yv in reversed(list(zip(mem_s, mem_y))):
            rho = 1.0 / float(yv @ sv)
            a = rho * float(sv @ q)
            alphas.append((rho, a, sv, yv))
            q -= a * yv
        if mem_s:
            q *= float(mem_s[-1] @ mem_y[-1]) / float(mem_y[-1] @ mem_y[-1])
        else:
            q /= max(1.0, float(np.linalg.norm(g)))
        for rho, a, sv, yv in reversed(alphas):
            b = rho * float(yv @ q)
            q += (a - b) * sv
        res = _line_search(disc, s, E, g, -q, margin, ls)
        if res is None:
            mem_s, mem_y = [], []
            res = _line_search(disc, s, E, g, -g / max(1.0, float(np.linalg.norm(g))), margin, ls)
            if res is None:
                break
        s_new, E_new, margin = res
        g_new = disc.gradient(s_new)
        sv, yv = s_new - s, g_new - g
        if float(sv @ yv) > 1e-300:
            mem_s.append(sv)
            mem_y.append(yv)
            if len(mem_s) > opts.lbfgs_memory:
                mem_s.pop(0)
                mem_y.pop(0)
        s, E, g = s_new, E_new, g_new
        it += 1
        trace.append((it, E))
        if abs(E - trace[-2][1]) < 1e-15 * max(1.0, abs(E)):
            break
    # Newton endgame
    while it < opts.max_iterations:
        H = disc.hessian(s)
        try:
            d = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            d = -np.linalg.lstsq(H, g, rcond=None)[0]
        decrement = -float(g @ d)
        if decrement < opts.newton_tol * max(1.0, abs(E)):
            break
        res = _line_search(disc, s, E, g, d, margin, ls)
        if res is None:
            diags.append("line search failed at the admissibility boundary")
            break
        s, E, margin = res
        g = disc.gradient(s)
        it += 1
        trace.append((it, E))
    return s, it, diags


def solve_extremal(poly: DelzantPolytope, B, opts: SolveOptions | None = None,
                   initial: SymplecticPotential | None = None, t: float = 1.0) -> SolutionReport:
    """Minimize the discrete M^{ℓ_ext} for the datum (0, t B)."""
    opts = opts or SolveOptions()
    B = t * np.atleast_2d(np.asarray(B, dtype=float))
    PoissonDatum.from_b(B)  # antisymmetry check
    ell = extremal_affine(poly)
    nodes = check_nodes(poly, opts.check_density)
    degree = opts.degree if initial is None else max(opts.degree, initial.degree)
    disc = _Discretization(poly, B, degree, opts.quad_level, ell)
    s = np.zeros(len(disc.alphas)) if initial is None else disc.coefficients_of(initial)
    margin = disc.margin(s)
    if margin <= 0:
        what = "Guillemin potential" if initial is None else "initial potential"
        raise AdmissibilityError(f"{what} is not admissible for B (margin {margin:.3e})")
    trace = [(0, disc.energy(s))]
    it = 0
    diags: list[str] = []
    u = disc.potential(s)
    rsup, rl2 = _residuals(u, B, ell, nodes)
    while rsup > opts.residual_target and it < opts.max_iterations:
        s, it, d = _minimize(disc, s, opts, trace, it)
        diags += d
        u = disc.potential(s)
        rsup, rl2 = _residuals(u, B, ell, nodes)
        log.info("degree %d: residual %.3e after %d iterations", degree, rsup, it)
        if rsup <= opts.residual_target or d:
            break
        if degree + 2 > opts.degree_cap:
            diags.append(f"residual plateau {rsup:.3e} at the degree cap {opts.degree_cap}")
            break
        degree += 2
        diags.append(f"degree raised to {degree}")
        disc = _Discretization(poly, B, degree, opts.quad_level, ell)
        s = disc.coefficients_of(u)
        trace.append((it, disc.energy(s)))
    margin = disc.margin(s)
    converged = rsup <= opts.residual_target and margin > 0
    if it >= opts.max_iterations and not converged:
        diags.append("iteration cap reached")
    return SolutionReport(u, rsup, rl2, trace, margin, t, converged, degree, it, ell, B,
                          opts.residual_target, diags)


class ContinuationReports(list):
    """Reports in t order; ``diagnostic`` is set when the run was truncated."""
    diagnostic: str | None = None


def continuation(poly: DelzantPolytope, B, opts: SolveOptions | None = None) -> ContinuationReports:
    """Solve along t B for t in opts.continuation_steps, warm-starting each step."""
    opts = opts or SolveOptions()
    out = ContinuationReports()
    prev = None
    for t in opts.continuation_steps:
        try:
            rep = solve_extremal(poly, B, opts, initial=prev, t=t)
        except AdmissibilityError as exc:
            out.diagnostic = f"continuation ceiling at t={t}: {exc}"
            break
        if not rep.converged:
            out.diagnostic = f"continuation ceiling at t={t}: solve did not converge"
            break
        out.append(rep)
        prev = rep.potential
    return out


@dataclass
class InvarianceReport:
    passed: bool
    l_ext: AffineFunction | None
    mismatches: list[str]

    def to_json(self) -> dict:
        return {"passed": self.passed, "l_ext": None if self.l_ext is None else self.l_ext.to_json(),
                "mismatches": self.mismatches}


def lext_invariance_check(reports: list[SolutionReport], check_density: int = 24) -> InvarianceReport:
    """All solves share one ℓ_ext, and each converged κ matches it."""
    if not reports:
        return InvarianceReport(True, None, [])
    poly = reports[0].potential.polytope
    ell = extremal_affine(poly)
    nodes = check_nodes(poly, check_density)
    bad = []
    for r in reports:
        if r.potential.polytope != poly:
            bad.append(f"t={r.t}: different polytope")
            continue
        if r.l_ext != ell:
            bad.append(f"t={r.t}: ℓ_ext differs")
        if r.converged:
            rsup, _ = _residuals(r.potential, r.B, ell, nodes)
            if rsup > r.residual_target * (1 + 1e-9):
                bad.append(f"t={r.t}: κ - ℓ_ext = {rsup:.3e} above target")
    return InvarianceReport(not bad, ell, bad)


def save_checkpoint(path, u: SymplecticPotential) -> None:
    Path(path).write_text(json.dumps(u.to_json(), indent=1, sort_keys=True))


def load_checkpoint(path, poly: DelzantPolytope | None = None) -> SymplecticPotential:
    return SymplecticPotential.from_json(json.loads(Path(path).read_text()), poly)
