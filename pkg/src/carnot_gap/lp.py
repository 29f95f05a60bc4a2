"""Dense simplex over exact rationals for small packing LPs.

Solves ``max c.y  s.t.  M y <= b, y >= 0`` with ``b >= 0`` (the origin is
feasible, so no phase one is needed).  Bland's rule guarantees termination.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .errors import NumericFailure
from .polynomial import as_fraction


@dataclass
class LPResult:
    value: Fraction
    y: list  # primal solution of the packing LP
    duals: list  # one price per row of M; these solve the covering dual


def solve_packing_lp(c, M, b, max_pivots=10_000) -> LPResult:
    c = [as_fraction(v) for v in c]
    b = [as_fraction(v) for v in b]
    rows = len(b)
    cols = len(c)
    if any(v < 0 for v in b):
        raise ValueError("right-hand side must be nonnegative")
    # tableau rows: [M | I | b]; objective row holds reduced costs -c
    T = [[as_fraction(v) for v in M[i]] + [Fraction(int(i == j)) for j in range(rows)] + [b[i]]
         for i in range(rows)]
    obj = [-v for v in c] + [Fraction(0)] * rows + [Fraction(0)]
    basis = [cols + i for i in range(rows)]
    width = cols + rows

    for _ in range(max_pivots):
        enter = next((j for j in range(width) if obj[j] < 0), None)
        if enter is None:
            break
        best = None
        for i in range(rows):
            a = T[i][enter]
            if a > 0:
                ratio = T[i][-1] / a
                if best is None or ratio < best[0] or (ratio == best[0] and basis[i] < basis[best[1]]):
                    best = (ratio, i)
        if best is None:
            raise NumericFailure("packing LP is unbounded (covering dual infeasible)")
        r = best[1]
        piv = T[r][enter]
        T[r] = [v / piv for v in T[r]]
        for i in range(rows):
            if i != r and T[i][enter] != 0:
                f = T[i][enter]
                T[i] = [u - f * v for u, v in zip(T[i], T[r])]
        if obj[enter] != 0:
            f = obj[enter]
            obj = [u - f * v for u, v in zip(obj, T[r])]
        basis[r] = enter
    else:
        raise NumericFailure(f"simplex did not terminate in {max_pivots} pivots")

    y = [Fraction(0)] * cols
    for i, j in enumerate(basis):
        if j < cols:
            y[j] = T[i][-1]
    return LPResult(value=obj[-1], y=y, duals=obj[cols:width])


def min_cover_two(G, Mass, L):
    """Exact ``min A + B  s.t.  A G_f + B M_f >= L_f,  A, B >= 0``.

    Solved through its packing dual; returns ``(A, B, value)`` as Fractions.
    """
    res = solve_packing_lp(L, [G, Mass], [1, 1])
    A, B = res.duals
    return A, B, res.value
