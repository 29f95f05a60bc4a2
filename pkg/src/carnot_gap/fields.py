"""Scalar fields with closed-form first and second partials.

Every field works on arrays of points of shape ``(..., n)``: ``value`` returns
``(...)``, ``gradient`` returns ``(..., n)`` and ``hessian`` ``(..., n, n)``.
Coordinate indices are 0-based.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, InvalidArgument
from .polynomial import SparsePoly


class ScalarField:
    n: int
    singular_at_origin = False
    smooth_away_from_origin = True

    def value(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def hessian(self, x):
        raise NotImplementedError

    def __call__(self, x):
        return self.value(x)

    def partial(self, k, x):
        return self.gradient(x)[..., k]

    def second_partial(self, i, j, x):
        return self.hessian(x)[..., i, j]

    def _points(self, x, derivative=False):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n:
            raise InvalidArgument(f"points have {x.shape[-1]} coordinates, expected {self.n}")
        if derivative and self.singular_at_origin and np.any(np.all(x == 0.0, axis=-1)):
            raise DomainError(f"{type(self).__name__} is not differentiable at the origin")
        return x


class PolyField(ScalarField):
    """A polynomial viewed as a scalar field; derivatives are exact polynomials."""

    def __init__(self, poly: SparsePoly):
        self.poly = poly
        self.n = poly.n
        self._grad = [poly.diff(k) for k in range(self.n)]
        self._hess = [[g.diff(l) for l in range(self.n)] for g in self._grad]

    def value(self, x):
        return self.poly(self._points(x))

    def gradient(self, x):
        x = self._points(x)
        return np.stack([g(x) for g in self._grad], axis=-1)

    def hessian(self, x):
        x = self._points(x)
        rows = [np.stack([h(x) for h in row], axis=-1) for row in self._hess]
        return np.stack(rows, axis=-2)

    def __repr__(self):
        return f"PolyField({self.poly!r})"


class NormPowerField(ScalarField):
    """``coef * N(x)**power`` for a quasi-norm field ``N``; used for perturbation potentials."""

    def __init__(self, norm: ScalarField, coef=1.0, power=1.0):
        self.norm = norm
        self.n = norm.n
        self.coef = float(coef)
        self.power = float(power)
        self.singular_at_origin = self.power < 2

    def value(self, x):
        x = self._points(x)
        return self.coef * self.norm.value(x) ** self.power

    def gradient(self, x):
        x = self._points(x, derivative=True)
        nv = self.norm.value(x)
        if self.power == 1:
            scale = np.full_like(nv, self.coef)
        else:
            scale = self.coef * self.power * np.where(nv > 0, nv, 1.0) ** (self.power - 1)
            scale = np.where(nv > 0, scale, 0.0)
        safe = np.where(np.all(x == 0, axis=-1)[..., None], 1.0, x)
        g = self.norm.gradient(safe)
        return np.where(nv[..., None] > 0, scale[..., None] * g, 0.0)

    def hessian(self, x):
        x = self._points(x, derivative=True)
        nv = self.norm.value(x)
        g = self.norm.gradient(x)
        h = self.norm.hessian(x)
        k = self.power
        return self.coef * (
            k * (k - 1) * nv[..., None, None] ** (k - 2) * g[..., :, None] * g[..., None, :]
            + k * nv[..., None, None] ** (k - 1) * h
        )


class DampedField(ScalarField):
    """``f(x) * exp(-eps * N(x)**p)``.  Only value and gradient are provided."""

    def __init__(self, base: ScalarField, norm: ScalarField, eps: float, p: float):
        self.base, self.norm = base, norm
        self.n = base.n
        self.eps, self.p = float(eps), float(p)

    def value(self, x):
        x = self._points(x)
        return self.base.value(x) * np.exp(-self.eps * self.norm.value(x) ** self.p)

    def gradient(self, x):
        x = self._points(x)
        nv = self.norm.value(x)
        damp = np.exp(-self.eps * nv**self.p)
        at0 = np.all(x == 0, axis=-1)
        gn = self.norm.gradient(np.where(at0[..., None], 1.0, x))
        coef = np.where(at0, 0.0, self.eps * self.p * np.where(at0, 1.0, nv) ** (self.p - 1))
        f = self.base.value(x)
        return damp[..., None] * (self.base.gradient(x) - (coef * f)[..., None] * gn)
