"""Mabuchi energy along random linear geodesics; writes one CSV per scan."""
import argparse
from pathlib import Path

import numpy as np

from toricgk.mabuchi import convexity_scan, scan_to_csv
from toricgk.polytope import interior_quadrature, load_polytope
from toricgk.potential import (
    PoissonDatum, PolynomialField, admissibility_check, gauged_basis, guillemin_potential,
)


def random_endpoint(poly, datum, rng, q, scale=0.05):
    v = PolynomialField(poly.barycenter, {a: scale * rng.standard_normal() for a in gauged_basis(poly.dim, 4)})
    u = guillemin_potential(poly)
    while not admissibility_check(u.with_correction(v), datum, q).admissible:
        v = v.scaled(0.5)
    return u.with_correction(v)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("polytope", nargs="?", default="square")
    ap.add_argument("--b", type=float, default=0.1)
    ap.add_argument("--scans", type=int, default=3)
    ap.add_argument("--samples", type=int, default=11)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("out/convexity"))
    args = ap.parse_args()

    poly = load_polytope(args.polytope)
    datum = PoissonDatum.planar(args.b) if poly.dim == 2 else PoissonDatum.zero(poly.dim)
    rng = np.random.default_rng(args.seed)
    q = interior_quadrature(poly, 6)
    args.out.mkdir(parents=True, exist_ok=True)
    for k in range(args.scans):
        ua, ub = random_endpoint(poly, datum, rng, q), random_endpoint(poly, datum, rng, q)
        rows = convexity_scan(ua, ub, datum, args.samples, q)
        d2 = [r.d2M for r in rows if r.d2M is not None]
        print(f"scan {k}: M(0) = {rows[0].M:.8f}, M(1) = {rows[-1].M:.8f}, min second difference {min(d2):.3e}")
        (args.out / f"{poly.name}_scan{k}.csv").write_text(scan_to_csv(rows))


if __name__ == "__main__":
    main()
