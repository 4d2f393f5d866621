"""Crease-probe stability reports for every built-in polytope, plus the injected-ℓ certificate."""
import argparse

from toricgk.extremal import ProbeFamily, extremal_affine, stability_probe
from toricgk.polytope import BUILTIN_POLYTOPES, AffineFunction, load_builtin


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--max-entry", type=int, default=3)
    ap.add_argument("--offsets", type=int, default=13)
    args = ap.parse_args()

    fam = ProbeFamily(max_entry=args.max_entry, offsets_per_direction=args.offsets)
    for name in BUILTIN_POLYTOPES:
        poly = load_builtin(name)
        rep = stability_probe(poly, fam)
        worst = min(rep.probes, key=lambda p: p.ratio)
        print(f"{name:12s} ℓ_ext = {extremal_affine(poly).to_json()}  probes={len(rep.probes):4d} "
              f"min_ratio={rep.min_ratio:.4f} ({worst.id})  {rep.verdict}")

    sq = load_builtin("square")
    bump = lambda ell: AffineFunction(ell.constant, (ell.gradient[0] + 100, ell.gradient[1]))
    rep = stability_probe(sq, ProbeFamily(ell_override=bump))
    print(f"square with ℓ + 100 x1: {rep.verdict}, {len(rep.certificates)} certificates, "
          f"most negative F = {float(min(p.F_val for p in rep.probes)):.3f}")


if __name__ == "__main__":
    main()
