"""Generalized-Kähler scalar curvature in momentum coordinates.

κ(u, A, B) = -Σ_ij ∂_i ∂_j ((Hess u + iB)^{-1})_ij, evaluated by forward-mode
differentiation of the matrix inverse, plus the pointwise biHermitian frame
and the independent Φ-formula used as a cross-check.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from ._highprec import kappa_point
from .potential import PoissonDatum, SymplecticPotential, hermitian_margin

# Constants fixed once by comparing the two sides numerically (see tests).
PHI_ORIENTATION = -1.0      # κ_Φ-formula = PHI_ORIENTATION * κ_abreu in our frame conventions
POISSON_NORMALIZATION = -1.0  # π_J = POISSON_NORMALIZATION * Σ (A+iB)_ij V_i ∧ V_j
IMAG_TOL = 1e-10
COND_LIMIT = 1e12
DEGENERATE_SIGMA = 1e-6
NEAR_BOUNDARY = 0.05  # below this distance to ∂P, κ is re-evaluated in multiprecision


class CurvatureError(ValueError):
    pass


def _points(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    return np.atleast_2d(x), x.ndim == 1


@dataclass
class HermitianInverseField:
    points: np.ndarray
    Z: np.ndarray

    @property
    def X(self) -> np.ndarray:
        return self.Z.real

    @property
    def Y(self) -> np.ndarray:
        return self.Z.imag


def hermitian_inverse(u: SymplecticPotential, datum: PoissonDatum, x) -> HermitianInverseField:
    """Z = (Hess u + iB)^{-1} at one or many points."""
    pts, _ = _points(x)
    M = u.hessian(pts) + 1j * datum.B
    cond = np.linalg.cond(M)
    if np.any(~np.isfinite(cond)) or np.any(cond > COND_LIMIT):
        raise CurvatureError("Hess u + iB is numerically singular")
    if np.any(hermitian_margin(M.real, datum.B) <= 0):
        raise CurvatureError("Hess u + iB is not positive definite")
    return HermitianInverseField(pts, np.linalg.inv(M))


def donaldson_form(G: np.ndarray, B: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """X = (G + B G^{-1} B)^{-1} and Y = -G^{-1} B X, computed without complex numbers."""
    H = np.linalg.inv(G)
    X = np.linalg.inv(G + B @ H @ B)
    return X, -H @ B @ X


def _abreu_terms(u: SymplecticPotential, B: np.ndarray, pts: np.ndarray) -> np.ndarray:
    G, dG, d2G = u.hessian_jets(pts)
    Z = np.linalg.inv(G + 1j * B)
    Gk = np.moveaxis(dG, -1, 1)                      # (N, k, a, b)
    Gkl = np.moveaxis(np.moveaxis(d2G, -1, 1), -1, 1)  # (N, k, l, a, b)
    W = np.einsum("nab,nkbc,ncd->nkad", Z, Gk, Z)     # Z ∂_k G Z
    t1 = np.einsum("nia,niab,njbj->n", Z, Gk, W)
    t2 = np.einsum("nia,njab,nibj->n", Z, Gk, W)
    t3 = np.einsum("nia,nijab,nbj->n", Z, Gkl, Z)
    return -(t1 + t2 - t3)


def abreu_gscal(u: SymplecticPotential, datum: PoissonDatum, x) -> np.ndarray | float:
    """κ at one point (float) or many points (array); A plays no role."""
    pts, single = _points(x)
    if np.any(u.polytope.labels(pts) <= 0):
        raise CurvatureError("point outside the open polytope")
    k = _abreu_terms(u, datum.B, pts)
    near = np.flatnonzero(boundary_distance(u.polytope, pts) < NEAR_BOUNDARY)
    if near.size:
        k[near] = _abreu_highprec(u, datum.B, pts[near])
    scale = 1.0 + np.abs(k.real)
    if np.any(np.abs(k.imag) > IMAG_TOL * scale):
        raise CurvatureError(f"imaginary residue {np.max(np.abs(k.imag)):.3e} in κ")
    return float(k.real[0]) if single else k.real


def _abreu_highprec(u: SymplecticPotential, B: np.ndarray, pts: np.ndarray) -> np.ndarray:
    poly = u.polytope
    R = [u.correction.derivative(pts, k) for k in (2, 3, 4)]
    normals = [f.normal for f in poly.facets]
    offsets = [f.offset for f in poly.facets]
    return np.array([kappa_point(normals, offsets, x, R[0][i], R[1][i], R[2][i], B)
                     for i, x in enumerate(pts)])


def boundary_distance(poly, pts: np.ndarray) -> np.ndarray:
    return np.min(poly.labels(pts) / np.linalg.norm(poly.normals, axis=1), axis=-1)


def _stencil_step(poly, x: np.ndarray, h: float) -> float:
    d = float(boundary_distance(poly, x[None])[0])
    return h * min(1.0, d)


def abreu_gscal_fd(u: SymplecticPotential, datum: PoissonDatum, x, h: float = 1e-3) -> float:
    """Nested central differences of Re (Hess u + iB)^{-1}; a slow secondary validator."""
    x = np.asarray(x, dtype=float)
    n = x.size
    h = _stencil_step(u.polytope, x, h)
    E = np.eye(n) * h

    def X(y):
        return np.linalg.inv(u.hessian(y[None])[0] + 1j * datum.B).real

    k = 0.0
    for i in range(n):
        for j in range(n):
            d = (X(x + E[i] + E[j])[i, j] - X(x + E[i] - E[j])[i, j]
                 - X(x - E[i] + E[j])[i, j] + X(x - E[i] - E[j])[i, j]) / (4 * h * h)
            k -= d
    return k


# --- pointwise biHermitian frame -------------------------------------------

def wedge(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """α∧β = α⊗β - β⊗α as an endomorphism X -> α(X)β - β(X)α."""
    return np.outer(b, a) - np.outer(a, b)


@dataclass
class PointFrame:
    """biHermitian data at one point, basis (∂_μ1..∂_μn, ∂_θ1..∂_θn).

    ``F`` and ``b`` are bilinear-form matrices (F[a, c] = F(e_a, e_c));
    ``J`` and ``I`` act on vectors; ``pi`` is the map T*M -> TM.
    """
    x: np.ndarray
    g: np.ndarray
    J: np.ndarray
    I: np.ndarray
    F: np.ndarray
    b: np.ndarray
    pi: np.ndarray

    @property
    def dim(self) -> int:
        return self.g.shape[0] // 2

    @property
    def F_map(self) -> np.ndarray:
        """X -> F(X, .)."""
        return self.F.T

    @property
    def g_inv(self) -> np.ndarray:
        return np.linalg.inv(self.g)

    def on_forms(self, K: np.ndarray) -> np.ndarray:
        """Action of an endomorphism on 1-forms via the metric, α -> g K g^{-1} α."""
        return self.g @ K @ self.g_inv

    def inner(self, a, b) -> float:
        return float(a @ self.g_inv @ b)

    def tr_F(self, psi: np.ndarray) -> float:
        return 0.5 * float(np.trace(np.linalg.solve(self.F_map, psi)))

    def phi(self) -> float:
        """Φ = ½ log det(I - J) - ½ log det(I + J)."""
        _, l1 = np.linalg.slogdet(self.I - self.J)
        _, l2 = np.linalg.slogdet(self.I + self.J)
        return 0.5 * l1 - 0.5 * l2

    def sigma_min(self) -> float:
        return float(np.linalg.svd(self.I - self.J, compute_uv=False)[-1])


def frame_from_hessian(G: np.ndarray, datum: PoissonDatum, x=None) -> PointFrame:
    n = G.shape[0]
    GA = G + datum.A
    if abs(np.linalg.det(GA)) < 1e-14 * max(1.0, np.linalg.norm(GA)) ** n:
        raise CurvatureError("Hess u + A is singular")
    J = np.zeros((2 * n, 2 * n))
    J[n:, :n] = GA.T
    J[:n, n:] = -np.linalg.inv(GA).T
    F = np.zeros((2 * n, 2 * n))
    F[:n, n:] = np.eye(n)
    F[n:, :n] = -np.eye(n)
    F[:n, :n] = 2 * datum.B
    FJ = J.T @ F                    # (X, Y) -> F(JX, Y)
    g = -0.5 * (FJ + FJ.T)
    b = -0.5 * (FJ - FJ.T)
    Fmap = F.T
    I = -np.linalg.solve(Fmap, J.T @ Fmap)
    pi = 0.5 * (I @ J - J @ I) @ np.linalg.inv(g)
    return PointFrame(np.asarray(x) if x is not None else None, g, J, I, F, b, pi)


def bihermitian_frame(u: SymplecticPotential, datum: PoissonDatum, x) -> PointFrame:
    x = np.asarray(x, dtype=float)
    return frame_from_hessian(u.hessian(x[None])[0], datum, x)


def frame_invariants(fr: PointFrame) -> dict[str, float]:
    """Residuals of the structural relations every frame must satisfy."""
    E = np.eye(2 * fr.dim)
    gJ, gI = fr.g @ fr.J, fr.g @ fr.I
    FJ = fr.J.T @ fr.F
    return {
        "J_squared": float(np.abs(fr.J @ fr.J + E).max()),
        "I_squared": float(np.abs(fr.I @ fr.I + E).max()),
        "g_symmetric": float(np.abs(fr.g - fr.g.T).max()),
        "g_positive": float(-np.linalg.eigvalsh(fr.g)[0]),
        "gJ_skew": float(np.abs(gJ + gJ.T).max()),
        "gI_skew": float(np.abs(gI + gI.T).max()),
        "F_I_plus_J": float(np.abs(fr.F_map @ (fr.I + fr.J) + 2 * fr.g).max()),
        "b_skew_part": float(np.abs(fr.b + 0.5 * (FJ - FJ.T)).max()),
        "pi_skew": float(np.abs(fr.pi + fr.pi.T).max()),
    }


def toric_poisson_factor(fr: PointFrame, datum: PoissonDatum) -> tuple[complex, float]:
    """Best constant c with π_J ≈ c Σ (A+iB)_ij V_i ∧ V_j, V_i = ∂_θi - iJ∂_θi; returns (c, residual)."""
    n = fr.dim
    piJ = fr.pi - 1j * fr.J @ fr.pi
    V = np.zeros((2 * n, n), dtype=complex)
    for i in range(n):
        e = np.zeros(2 * n)
        e[n + i] = 1.0
        V[:, i] = e - 1j * fr.J @ e
    R = V @ (datum.A + 1j * datum.B) @ V.T
    R = R - R.T
    nr = np.vdot(R.ravel(), R.ravel())
    if abs(nr) == 0:
        return complex(POISSON_NORMALIZATION), float(np.abs(piJ).max())
    c = complex(np.vdot(R.ravel(), piJ.ravel()) / nr)
    resid = float(np.abs(piJ - POISSON_NORMALIZATION * R).max())
    return c, resid


# --- algebraic identities ----------------------------------------------------

IDENTITY_NAMES = ("basic", "deep1", "identity", "Fvolume", "poisson",
                  "deep2_left", "deep2_right", "deep4", "deep5")


@dataclass
class IdentityReport:
    residuals: dict[str, float]
    seed: int
    draws: int
    tol: float

    @property
    def passed(self) -> bool:
        return all(r < self.tol for r in self.residuals.values())

    @property
    def worst(self) -> tuple[str, float]:
        k = max(self.residuals, key=self.residuals.get)
        return k, self.residuals[k]

    def to_json(self) -> dict:
        return {"residuals": self.residuals, "seed": self.seed, "draws": self.draws,
                "tol": self.tol, "passed": self.passed}


def _rel(a, b) -> float:
    return abs(a - b) / max(1.0, abs(a), abs(b))


def identity_suite(fr: PointFrame, draws: int = 100, seed: int = 0, tol: float = 1e-10) -> IdentityReport:
    """Pointwise algebraic identities of symplectic-type GK geometry on random 1-forms."""
    rng = np.random.default_rng(seed)
    N = 2 * fr.dim
    gi = fr.g_inv
    Finv = np.linalg.inv(fr.F_map)
    If, Jf = fr.on_forms(fr.I), fr.on_forms(fr.J)
    K = If + Jf
    ip = fr.inner

    def tr2(p1, p2):
        return float(np.trace(Finv @ p1 @ Finv @ p2))

    def ip2(a1, a2, b1, b2):
        return ip(a1, b1) * ip(a2, b2) - ip(a1, b2) * ip(a2, b1)

    res = {k: 0.0 for k in IDENTITY_NAMES}
    scale = max(1.0, float(np.abs(fr.g).max()))
    res["basic"] = max(float(np.abs(fr.F_map + 2 * fr.g @ np.linalg.inv(fr.I + fr.J)).max()),
                       float(np.abs(Finv + 0.5 * (fr.I + fr.J) @ gi).max())) / float(scale)
    res["identity"] = float(np.abs(fr.I @ (fr.I + fr.J) - (fr.I + fr.J) @ fr.J).max()) / scale
    for _ in range(draws):
        a, b, a1, a2, b1, b2 = rng.standard_normal((6, N))
        upd = {
            "deep1": _rel(fr.tr_F(wedge(a, b)), 0.5 * ip(K @ a, b)),
            "Fvolume": _rel(fr.tr_F(wedge(a, Jf @ b)), -fr.tr_F(wedge(If @ a, b))),
            "poisson": _rel(-0.5 * np.trace(fr.pi @ wedge(a, b)), fr.tr_F(wedge((Jf - If) @ a, b))),
            "deep2_left": _rel(tr2(wedge(b1, b2), wedge(a1, a2)), 0.5 * ip2(K @ a1, K @ a2, b1, b2)),
            "deep2_right": _rel(tr2(wedge(b1, b2), wedge(a1, a2)), 0.5 * ip2(a1, a2, K @ b1, K @ b2)),
            "deep4": _rel(tr2(wedge(b, If @ b), wedge(a, Jf @ a)),
                          0.5 * (ip(K @ a, b) ** 2 + ip(K @ a, If @ b) ** 2)),
            "deep5": _rel(tr2(wedge(If @ b1, If @ b2), wedge(a1, a2)),
                          tr2(wedge(b1, b2), wedge(Jf @ a1, Jf @ a2))),
        }
        for k, v in upd.items():
            res[k] = max(res[k], v)
    return IdentityReport(res, seed, draws, tol)


# --- Φ cross-check -----------------------------------------------------------

@dataclass
class CrosscheckResult:
    x: list[float]
    kappa_abreu: float
    kappa_phi: float | None
    rel_err: float | None
    excluded: bool = False
    sigma_min: float = float("nan")

    def to_json(self) -> dict:
        return dict(self.__dict__)


def _phi_formula(u: SymplecticPotential, datum: PoissonDatum, x: np.ndarray, h: float) -> float:
    n = x.size
    E = np.eye(n) * h

    def frame(y):
        return bihermitian_frame(u, datum, y)

    def eta(y):
        dphi = np.zeros(2 * n)
        for k in range(n):
            dphi[k] = (frame(y + E[k]).phi() - frame(y - E[k]).phi()) / (2 * h)
        fr = frame(y)
        return fr.F_map @ np.linalg.solve(fr.g, dphi)

    deta = np.zeros((2 * n, 2 * n))  # deta[a, c] = ∂_a η_c, θ-derivatives vanish
    for k in range(n):
        deta[k] = (eta(x + E[k]) - eta(x - E[k])) / (2 * h)
    D = deta - deta.T
    return PHI_ORIENTATION * frame(x).tr_F(D.T)


def gscal_crosscheck(u: SymplecticPotential, datum: PoissonDatum, x, h: float = 1e-3) -> CrosscheckResult:
    """Compare κ_abreu with tr_F d(F g^{-1} dΦ) by central differences in μ."""
    x = np.asarray(x, dtype=float)
    ka = abreu_gscal(u, datum, x)
    hs = _stencil_step(u.polytope, x, h)
    sig = min(bihermitian_frame(u, datum, y).sigma_min()
              for y in [x] + [x + s * hs * e for e in np.eye(x.size) for s in (-2, 2)])
    if sig < DEGENERATE_SIGMA:
        return CrosscheckResult(x.tolist(), ka, None, None, True, sig)
    kp = _phi_formula(u, datum, x, hs)
    return CrosscheckResult(x.tolist(), ka, kp, abs(kp - ka) / (1 + abs(ka)), False, sig)


# --- field export ------------------------------------------------------------

@dataclass
class GscalField:
    points: np.ndarray
    kappa: np.ndarray
    margin: np.ndarray
    meta: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {"n_points": int(len(self.kappa)), "average": float(np.mean(self.kappa)),
                "min": float(np.min(self.kappa)), "max": float(np.max(self.kappa)),
                "min_eig_margin": float(np.min(self.margin)), **self.meta}

    def to_csv(self) -> str:
        n = self.points.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(n)] + ["kappa", "min_eig_margin"])
        for p, k, m in zip(self.points, self.kappa, self.margin):
            w.writerow([f"{v:.17g}" for v in p] + [f"{k:.17g}", f"{m:.17g}"])
        return buf.getvalue()


def gscal_field(u: SymplecticPotential, datum: PoissonDatum, points) -> GscalField:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    kappa = abreu_gscal(u, datum, pts)
    margin = hermitian_margin(u.hessian(pts), datum.B)
    return GscalField(pts, np.atleast_1d(kappa), margin)
