"""Solve κ(u, 0, B) = ℓ_ext and check the solution with oracles that share no code with the solver."""
import argparse
import json
import time

import numpy as np

from toricgk.gk_operator import gscal_crosscheck, hermitian_inverse, abreu_gscal
from toricgk.mabuchi import mabuchi_gradient_pairing
from toricgk.polytope import interior_quadrature, load_polytope
from toricgk.potential import PoissonDatum, PolynomialField, gauged_basis
from toricgk.solver import SolveOptions, solve_extremal


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("polytope", nargs="?", default="square")
    ap.add_argument("--b", type=float, default=0.1)
    ap.add_argument("--degree", type=int, default=8)
    ap.add_argument("--tol", type=float, default=1e-4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    poly = load_polytope(args.polytope)
    B = np.array([[0, args.b], [-args.b, 0]]) if poly.dim == 2 else np.zeros((poly.dim, poly.dim))
    t0 = time.perf_counter()
    rep = solve_extremal(poly, B, SolveOptions(degree=args.degree, residual_target=args.tol))
    print(f"solve: converged={rep.converged} degree={rep.degree} iterations={rep.iterations} "
          f"residual_sup={rep.residual_sup:.3e} margin={rep.admissibility_margin:.3e} "
          f"[{time.perf_counter() - t0:.1f} s]")
    for d in rep.diagnostics:
        print("  ", d)

    u, datum = rep.potential, PoissonDatum.from_b(B)
    rng = np.random.default_rng(args.seed)
    q = interior_quadrature(poly, 8)

    # integration by parts with a random cubic
    f = PolynomialField(poly.barycenter, {a: rng.standard_normal() for a in gauged_basis(poly.dim, 3)})
    X = hermitian_inverse(u, datum, q.nodes).X
    t1 = q.integrate(f(q.nodes) * abreu_gscal(u, datum, q.nodes))
    t2 = 2 * f.integrate_boundary(poly)
    t3 = q.integrate(np.einsum("nij,nji->n", X, f.hessian(q.nodes)))
    print(f"by-parts defect: {abs(t1 - t2 + t3):.2e} (terms ~ {max(abs(t1), abs(t2), abs(t3)):.2f})")

    if poly.dim == 2 and args.b:
        pts = rng.uniform(0.1, 0.9, (20, 2))
        pts = pts[poly.contains_interior(pts, 0.05)]
        errs = [gscal_crosscheck(u, datum, x).rel_err for x in pts]
        print(f"Φ-formula cross-check at {len(errs)} points: max rel err {max(errs):.2e}")

    worst = max(abs(mabuchi_gradient_pairing(u, datum, PolynomialField(poly.barycenter, {a: 1.0}), q))
                for a in gauged_basis(poly.dim, 4))
    print(f"max |dM(u̇)| over degree-4 monomials: {worst:.2e}")
    print(json.dumps({k: v for k, v in rep.to_json().items() if k != "potential" and k != "energy_trace"},
                     default=str))


if __name__ == "__main__":
    main()
