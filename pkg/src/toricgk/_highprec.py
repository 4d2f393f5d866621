"""Multiprecision evaluation of κ for points close to ∂P.

Near a facet the three forward-mode terms of κ are each O(1/L) while their
sum is O(1), so double precision loses roughly log10(1/L)^2.5 digits.  Here
the same formula runs in gmpy2 complex arithmetic with precision grown
from min L; label values are formed from the exact rational data.
"""
from __future__ import annotations

import gmpy2
import numpy as np
from gmpy2 import mpc, mpfr, mpq


def precision_bits(min_label: float) -> int:
    return 80 + int(4 * max(0.0, np.log2(1.0 / max(min_label, 1e-300))))


def _inverse(M, n):
    A = [row[:] + [mpc(1) if i == j else mpc(0) for j in range(n)] for i, row in enumerate(M)]
    for c in range(n):
        p = max(range(c, n), key=lambda r: abs(A[r][c]))
        A[c], A[p] = A[p], A[c]
        inv = 1 / A[c][c]
        A[c] = [v * inv for v in A[c]]
        for r in range(n):
            if r != c and A[r][c] != 0:
                f = A[r][c]
                A[r] = [a - f * b for a, b in zip(A[r], A[c])]
    return [row[n:] for row in A]


def _matvec(M, v):
    return [sum((a * b for a, b in zip(row, v)), mpc(0)) for row in M]


def _vecmat(v, M):
    n = len(M[0])
    return [sum((v[k] * M[k][j] for k in range(len(v))), mpc(0)) for j in range(n)]


def _dot(a, b):
    return sum((x * y for x, y in zip(a, b)), mpc(0))


def kappa_point(normals, offsets, x, R2, R3, R4, B) -> complex:
    """Σ-form of -Σ_ij ∂_i∂_j (G + iB)^{-1}_ij at one point.

    normals: integer rows; offsets: Fractions; x: float vector; R2..R4:
    derivative tensors (float) of the smooth correction; B: float matrix.
    """
    n = len(x)
    Lq = [sum((mpq(int(nu[k])) * mpq(float(x[k])) for k in range(n)), mpq(0))
          + mpq(off.numerator, off.denominator) for nu, off in zip(normals, offsets)]
    lmin = float(min(Lq))
    with gmpy2.context(gmpy2.get_context(), precision=precision_bits(lmin)):
        L = [mpfr(v) for v in Lq]
        inv1 = [1 / v for v in L]
        inv2 = [v * v for v in inv1]
        inv3 = [a * b for a, b in zip(inv1, inv2)]
        half = mpfr("0.5")
        G = [[mpc(mpfr(float(R2[a, b])), mpfr(float(B[a, b]))) for b in range(n)] for a in range(n)]
        Gk = [[[mpc(mpfr(float(R3[a, b, k]))) for b in range(n)] for a in range(n)] for k in range(n)]
        Gkl = [[[[mpc(mpfr(float(R4[a, b, k, l]))) for b in range(n)] for a in range(n)]
                for l in range(n)] for k in range(n)]
        for nu, i1, i2, i3 in zip(normals, inv1, inv2, inv3):
            nu = [int(v) for v in nu]
            for a in range(n):
                for b in range(n):
                    w = nu[a] * nu[b]
                    if not w:
                        continue
                    G[a][b] += half * w * i1
                    for k in range(n):
                        if nu[k]:
                            Gk[k][a][b] -= half * (w * nu[k]) * i2
                            for l in range(n):
                                if nu[l]:
                                    Gkl[k][l][a][b] += (w * nu[k] * nu[l]) * i3
        Z = _inverse(G, n)
        cols = [[Z[r][j] for r in range(n)] for j in range(n)]
        # t1 = (Σ_i Z[i,:] G_i Z) · (Σ_j G_j Z[:, j])
        rsum = [mpc(0)] * n
        csum = [mpc(0)] * n
        for i in range(n):
            r = _vecmat(_vecmat(Z[i], Gk[i]), Z)
            rsum = [a + b for a, b in zip(rsum, r)]
            c = _matvec(Gk[i], cols[i])
            csum = [a + b for a, b in zip(csum, c)]
        t1 = _dot(rsum, csum)
        t2 = mpc(0)
        t3 = mpc(0)
        GZc = [[_matvec(Gk[i], cols[j]) for j in range(n)] for i in range(n)]
        for i in range(n):
            for j in range(n):
                row = _vecmat(_vecmat(Z[i], Gk[j]), Z)
                t2 += _dot(row, GZc[i][j])
                t3 += _dot(_vecmat(Z[i], Gkl[i][j]), cols[j])
        k = -(t1 + t2 - t3)
        return complex(float(k.real), float(k.imag))
