"""Sparse multivariate polynomials with exact rational coefficients.

Coefficients are :class:`fractions.Fraction`; exponent vectors are tuples of
non-negative ints.  Structural questions (homogeneity, G-degree, exact
evaluation at rational points) are answered exactly, while ``__call__``
evaluates in double precision on arrays of points of shape ``(..., n)``.
"""

from __future__ import annotations

from fractions import Fraction
from functools import cached_property
from numbers import Rational

import numpy as np


def as_fraction(value) -> Fraction:
    """Parse ints, Fractions, floats (exactly) and ``"p/q"`` strings."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        return Fraction(value.strip())
    if isinstance(value, (int, Rational)):
        return Fraction(value)
    if isinstance(value, (float, np.floating)):
        if not np.isfinite(value):
            raise ValueError(f"non-finite coefficient {value!r}")
        return Fraction(float(value))
    if isinstance(value, np.integer):
        return Fraction(int(value))
    raise TypeError(f"cannot convert {type(value).__name__} to Fraction")


class SparsePoly:
    def __init__(self, n: int, terms=None):
        self.n = int(n)
        clean = {}
        for exps, coeff in (terms or {}).items():
            exps = tuple(int(e) for e in exps)
            if len(exps) != self.n:
                raise ValueError(f"exponent {exps} has length {len(exps)}, expected {self.n}")
            if any(e < 0 for e in exps):
                raise ValueError(f"negative exponent in {exps}")
            c = clean.get(exps, Fraction(0)) + as_fraction(coeff)
            if c:
                clean[exps] = c
            else:
                clean.pop(exps, None)
        self._terms = clean

    # -- constructors -------------------------------------------------
    @classmethod
    def zero(cls, n):
        return cls(n)

    @classmethod
    def constant(cls, n, c):
        return cls(n, {(0,) * n: c})

    @classmethod
    def variable(cls, n, k):
        exps = [0] * n
        exps[k] = 1
        return cls(n, {tuple(exps): 1})

    @classmethod
    def monomial(cls, exps, coeff=1):
        return cls(len(exps), {tuple(exps): coeff})

    # -- basic protocol ----------------------------------------------
    @property
    def terms(self):
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def __len__(self):
        return len(self._terms)

    def is_zero(self):
        return not self._terms

    def __bool__(self):
        return bool(self._terms)

    def __eq__(self, other):
        if isinstance(other, SparsePoly):
            return self.n == other.n and self._terms == other._terms
        if isinstance(other, (int, Fraction)):
            return self == SparsePoly.constant(self.n, other)
        return NotImplemented

    def __hash__(self):
        return hash((self.n, frozenset(self._terms.items())))

    def __repr__(self):
        if not self._terms:
            return "0"
        parts = []
        for exps, c in sorted(self._terms.items(), reverse=True):
            mono = "*".join(
                f"x{k + 1}" if e == 1 else f"x{k + 1}^{e}" for k, e in enumerate(exps) if e
            )
            if not mono:
                parts.append(str(c))
            elif c == 1:
                parts.append(mono)
            elif c == -1:
                parts.append("-" + mono)
            else:
                parts.append(f"{c}*{mono}")
        return " + ".join(parts).replace("+ -", "- ")

    # -- arithmetic --------------------------------------------------
    def _coerce(self, other):
        if isinstance(other, SparsePoly):
            if other.n != self.n:
                raise ValueError(f"dimension mismatch {self.n} vs {other.n}")
            return other
        return SparsePoly.constant(self.n, as_fraction(other))

    def __add__(self, other):
        other = self._coerce(other)
        out = dict(self._terms)
        for e, c in other._terms.items():
            out[e] = out.get(e, Fraction(0)) + c
        return SparsePoly(self.n, out)

    __radd__ = __add__

    def __neg__(self):
        return SparsePoly(self.n, {e: -c for e, c in self._terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, SparsePoly):
            c = as_fraction(other)
            return SparsePoly(self.n, {e: c * v for e, v in self._terms.items()})
        other = self._coerce(other)
        out: dict = {}
        for e1, c1 in self._terms.items():
            for e2, c2 in other._terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, Fraction(0)) + c1 * c2
        return SparsePoly(self.n, out)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            raise ValueError("only non-negative integer powers")
        result = SparsePoly.constant(self.n, 1)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def diff(self, k: int) -> "SparsePoly":
        out = {}
        for e, c in self._terms.items():
            if e[k]:
                e2 = list(e)
                e2[k] -= 1
                out[tuple(e2)] = c * e[k]
        return SparsePoly(self.n, out)

    # -- homogeneity -------------------------------------------------
    def weighted_degrees(self, weights):
        return {e: sum(a * s for a, s in zip(e, weights)) for e in self._terms}

    def g_degree(self, weights):
        """Max of <alpha, sigma> over stored monomials; ``None`` for the zero polynomial."""
        degs = self.weighted_degrees(weights).values()
        return max(degs) if degs else None

    def homogeneity_witness(self, weights, degree):
        """First monomial (exps, coeff) whose weighted degree differs from ``degree``."""
        for e, c in sorted(self._terms.items()):
            if sum(a * s for a, s in zip(e, weights)) != degree:
                return e, c
        return None

    def dilate(self, weights, lam) -> "SparsePoly":
        """The polynomial x -> p(delta_lam x), exact for rational lam."""
        lam = as_fraction(lam)
        return SparsePoly(
            self.n,
            {e: c * lam ** sum(a * s for a, s in zip(e, weights)) for e, c in self._terms.items()},
        )

    # -- evaluation --------------------------------------------------
    def eval_exact(self, point):
        point = [as_fraction(v) for v in point]
        if len(point) != self.n:
            raise ValueError("dimension mismatch")
        total = Fraction(0)
        for e, c in self._terms.items():
            term = c
            for v, a in zip(point, e):
                if a:
                    term *= v**a
            total += term
        return total

    @cached_property
    def _compiled(self):
        if not self._terms:
            return np.zeros((0, self.n), dtype=np.int64), np.zeros(0)
        exps = np.array(list(self._terms.keys()), dtype=np.int64)
        coeffs = np.array([float(c) for c in self._terms.values()])
        return exps, coeffs

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n:
            raise ValueError(f"points have {x.shape[-1]} coordinates, expected {self.n}")
        exps, coeffs = self._compiled
        if coeffs.size == 0:
            return np.zeros(x.shape[:-1])
        if exps.max() == 0:
            return np.full(x.shape[:-1], coeffs.sum())
        # power tables by repeated multiplication, then one gather per coordinate
        monos = None
        for k in range(self.n):
            col = exps[:, k]
            top = int(col.max())
            if top == 0:
                continue
            xk = x[..., k]
            table = [np.ones_like(xk), xk]
            for _ in range(top - 1):
                table.append(table[-1] * xk)
            table = np.stack(table, axis=-1)
            g = table[..., col]
            monos = g if monos is None else monos * g
        return monos @ coeffs

    def to_json(self):
        return [
            {"exponents": list(e), "coeff": str(c)} for e, c in sorted(self._terms.items())
        ]

    @classmethod
    def from_json(cls, n, monomials):
        terms: dict = {}
        for m in monomials:
            e = tuple(int(v) for v in m["exponents"])
            terms[e] = terms.get(e, Fraction(0)) + as_fraction(m["coeff"])
        return cls(n, terms)
