"""Homogeneous quasi-norms smooth away from the origin.

Three families are roots of positive homogeneous polynomials, ``N = P**(1/d)``:

* :class:`PowerSum`    ``(sum_j a_j x_j^(2 beta_j))^(1/gamma)`` with ``2 sigma_j beta_j = gamma``
* :class:`Composite`   power sums on disjoint coordinate blocks glued by a common exponent
* :class:`Step2Alpha`  ``(|x|^(4 alpha) + sum_k c_k t_k^(2 alpha))^(1/(4 alpha))`` on step-2 groups

so their partials come from exact polynomial derivatives of ``P``.  The fourth,
:class:`AnisoHeisenberg`, is a nested-radical formula differentiated by hand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce
from typing import Optional

import numpy as np

from .errors import DomainError, InvalidArgument
from .fields import ScalarField
from .groups import CarnotGroup, dilate
from .polynomial import SparsePoly, as_fraction


class RootPolyNorm(ScalarField):
    """``N(x) = P(x)**(1/degree)`` for a positive homogeneous polynomial ``P``."""

    singular_at_origin = True

    def __init__(self, poly: SparsePoly, degree: int, definite: bool = True):
        self.poly = poly
        self.degree = int(degree)
        self.n = poly.n
        self.definite = definite
        self._dP = [poly.diff(k) for k in range(self.n)]
        self._d2P = [[self._dP[k].diff(l) for l in range(self.n)] for k in range(self.n)]

    def _root(self, P):
        # sqrt is correctly rounded, so |x| comes out exact for the degree-2 case
        return np.sqrt(P) if self.degree == 2 else P ** (1.0 / self.degree)

    def value(self, x):
        x = self._points(x)
        return self._root(np.maximum(self.poly(x), 0.0))

    def _inner(self, x):
        P = self.poly(x)
        if np.any(P <= 0):
            raise DomainError("norm derivative requested where the norm vanishes")
        return P

    def gradient(self, x):
        x = self._points(x, derivative=True)
        P = self._inner(x)
        dP = np.stack([d(x) for d in self._dP], axis=-1)
        return dP / (self.degree * self._root(P) ** (self.degree - 1))[..., None]

    def hessian(self, x):
        x = self._points(x, derivative=True)
        P = self._inner(x)
        d = self.degree
        dP = np.stack([g(x) for g in self._dP], axis=-1)
        d2P = np.stack([np.stack([h(x) for h in row], axis=-1) for row in self._d2P], axis=-2)
        c1 = (P ** (1.0 / d - 1.0) / d)[..., None, None]
        c2 = ((1.0 / d) * (1.0 / d - 1.0) * P ** (1.0 / d - 2.0))[..., None, None]
        return c1 * d2P + c2 * dP[..., :, None] * dP[..., None, :]


# -- specs -----------------------------------------------------------------

class QuasiNormSpec:
    variant = "?"

    def validate(self, group: CarnotGroup) -> None:
        raise NotImplementedError

    def build(self, group: CarnotGroup) -> ScalarField:
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError


def _power_sum_poly(n, coords, a, beta):
    terms = {}
    for k, ak, bk in zip(coords, a, beta):
        e = [0] * n
        e[k] = 2 * bk
        terms[tuple(e)] = ak
    return SparsePoly(n, terms)


def _check_power_block(weights, coords, a, beta, gamma, label):
    if not (len(coords) == len(a) == len(beta)):
        raise InvalidArgument(f"{label}: a, beta and coordinates must have equal length")
    for k, ak, bk in zip(coords, a, beta):
        if ak <= 0:
            raise InvalidArgument(f"{label}: a_{k + 1} = {ak} must be positive")
        if int(bk) != bk or bk < 1:
            raise InvalidArgument(f"{label}: beta_{k + 1} = {bk} must be a positive integer")
        if 2 * weights[k] * bk != gamma:
            raise InvalidArgument(
                f"{label}: 2*sigma_{k + 1}*beta_{k + 1} = {2 * weights[k] * bk} != gamma = {gamma}"
            )
    top = max(weights[k] for k in coords)
    if gamma < 2 * top:
        raise InvalidArgument(f"{label}: gamma = {gamma} < 2*sigma_max = {2 * top}")


@dataclass(frozen=True)
class PowerSum(QuasiNormSpec):
    beta: tuple
    gamma: int
    a: Optional[tuple] = None
    variant = "PowerSum"

    def coefficients(self):
        return tuple(as_fraction(v) for v in (self.a or (1,) * len(self.beta)))

    def validate(self, group):
        if len(self.beta) != group.n:
            raise InvalidArgument(f"PowerSum needs {group.n} exponents, got {len(self.beta)}")
        _check_power_block(
            group.weights, range(group.n), self.coefficients(), self.beta, self.gamma, "PowerSum"
        )

    def build(self, group):
        self.validate(group)
        P = _power_sum_poly(group.n, range(group.n), self.coefficients(), self.beta)
        return RootPolyNorm(P, self.gamma)

    def to_json(self):
        return {
            "variant": self.variant,
            "params": {
                "beta": list(self.beta),
                "gamma": self.gamma,
                "a": [str(v) for v in self.coefficients()],
            },
        }

    @classmethod
    def for_group(cls, group, gamma=None, a=None):
        """Power sum with ``beta_j = gamma / (2 sigma_j)``; default ``gamma = 2 * sigma_n!``."""
        if gamma is None:
            gamma = 2 * math.factorial(group.weights[-1])
        beta = []
        for s in group.weights:
            if gamma % (2 * s):
                raise InvalidArgument(f"gamma = {gamma} is not divisible by 2*sigma = {2 * s}")
            beta.append(gamma // (2 * s))
        return cls(tuple(beta), int(gamma), None if a is None else tuple(a))


@dataclass(frozen=True)
class Block:
    coords: tuple  # 0-based coordinate indices
    beta: tuple
    gamma: int
    a: Optional[tuple] = None

    def coefficients(self):
        return tuple(as_fraction(v) for v in (self.a or (1,) * len(self.beta)))


@dataclass(frozen=True)
class Composite(QuasiNormSpec):
    """``(sum_j N_j^alpha_j)^(1/alpha)`` with power-sum block norms ``N_j``.

    Homogeneity forces ``alpha_j = alpha`` and smoothness forces ``gamma_j | alpha``
    (so that ``N_j^alpha`` is the polynomial ``S_j^(alpha/gamma_j)``).
    """

    blocks: tuple
    alpha: int
    exponents: Optional[tuple] = None
    variant = "Composite"

    def validate(self, group):
        seen = set()
        exps = self.exponents or (self.alpha,) * len(self.blocks)
        if len(exps) != len(self.blocks):
            raise InvalidArgument("one exponent per block required")
        for j, (blk, aj) in enumerate(zip(self.blocks, exps)):
            label = f"Composite block {j + 1}"
            for k in blk.coords:
                if not 0 <= k < group.n:
                    raise InvalidArgument(f"{label}: coordinate {k + 1} out of range")
                if k in seen:
                    raise InvalidArgument(f"{label}: coordinate {k + 1} appears in two blocks")
                seen.add(k)
            _check_power_block(group.weights, blk.coords, blk.coefficients(), blk.beta, blk.gamma, label)
            if aj != self.alpha:
                raise InvalidArgument(
                    f"{label}: exponent {aj} != alpha = {self.alpha}; the glued norm would not be "
                    "homogeneous of degree 1"
                )
            if self.alpha % blk.gamma:
                raise InvalidArgument(
                    f"{label}: alpha = {self.alpha} is not a multiple of gamma_j = {blk.gamma}; "
                    "N_j^alpha would not be smooth"
                )

    def build(self, group):
        self.validate(group)
        P = SparsePoly.zero(group.n)
        for blk in self.blocks:
            S = _power_sum_poly(group.n, blk.coords, blk.coefficients(), blk.beta)
            P = P + S ** (self.alpha // blk.gamma)
        covered = {k for blk in self.blocks for k in blk.coords}
        return RootPolyNorm(P, self.alpha, definite=len(covered) == group.n)

    def block_of(self, k):
        for blk in self.blocks:
            if k in blk.coords:
                return blk
        return None

    def to_json(self):
        return {
            "variant": self.variant,
            "params": {
                "alpha": self.alpha,
                "blocks": [
                    {
                        "coords": [k + 1 for k in b.coords],
                        "beta": list(b.beta),
                        "gamma": b.gamma,
                        "a": [str(v) for v in b.coefficients()],
                    }
                    for b in self.blocks
                ],
            },
        }


@dataclass(frozen=True)
class Step2Alpha(QuasiNormSpec):
    alpha: int = 1
    c: Optional[tuple] = None
    variant = "Step2Alpha"

    def constants(self, group):
        m = group.n - group.n1
        if self.c is None:
            return (Fraction(1),) * m
        if len(self.c) == 1 and m > 1:
            return (as_fraction(self.c[0]),) * m
        return tuple(as_fraction(v) for v in self.c)

    def validate(self, group):
        if group.step != 2:
            raise InvalidArgument(f"Step2Alpha needs a step-2 group, {group.name} has step {group.step}")
        if int(self.alpha) != self.alpha or self.alpha < 1:
            raise InvalidArgument(f"alpha = {self.alpha} must be a positive integer")
        c = self.constants(group)
        if len(c) != group.n - group.n1:
            raise InvalidArgument(f"need {group.n - group.n1} constants c_k, got {len(c)}")
        if any(v <= 0 for v in c):
            raise InvalidArgument("constants c_k must be positive")

    def build(self, group):
        self.validate(group)
        n, n1 = group.n, group.n1
        sq = sum((SparsePoly.variable(n, i) ** 2 for i in range(n1)), SparsePoly.zero(n))
        P = sq ** (2 * self.alpha)
        for k, ck in enumerate(self.constants(group)):
            P = P + SparsePoly.variable(n, n1 + k) ** (2 * self.alpha) * ck
        return RootPolyNorm(P, 4 * self.alpha)

    def to_json(self):
        params = {"alpha": self.alpha}
        if self.c is not None:
            params["c"] = [str(as_fraction(v)) for v in self.c]
        return {"variant": self.variant, "params": params}


@dataclass(frozen=True)
class AnisoHeisenberg(QuasiNormSpec):
    n: int = 1
    variant = "AnisoHeisenberg"

    def validate(self, group):
        if group.n1 != 2 * self.n or group.n != 2 * self.n + 1:
            raise InvalidArgument(
                f"AnisoHeisenberg(n={self.n}) needs 2n = {2 * self.n} generators and one central "
                f"coordinate; {group.name} has n1 = {group.n1}, n = {group.n}"
            )

    def build(self, group):
        self.validate(group)
        return AnisoHeisenbergNorm(self.n)

    def to_json(self):
        return {"variant": self.variant, "params": {"n": self.n}}


class AnisoHeisenbergNorm(ScalarField):
    """Fundamental-solution norm on the anisotropic Heisenberg group, formulas as printed.

    With ``A = x_1^2/2 + x_{n+1}^2/2 + 1/2 sum_{j != n+1} x_j^2`` and
    ``B = x_1^2/4 + x_{n+1}^2/4 + 1/2 sum_{j != n+1} x_j^2`` (the sums run over
    ``j = 1..2n`` and include ``j = 1``)::

        N = (B^2+t^2)^(1/4n) (AB + t^2 + A sqrt(A^2+B^2))^(1/2 - 1/4n) / (B + sqrt(B^2+t^2))^(1/2)
    """

    singular_at_origin = True
    guard = 1e-14

    def __init__(self, half: int):
        self.half = int(half)
        self.n = 2 * self.half + 1
        m = 2 * self.half
        a = np.full(m, 0.5)
        b = np.full(m, 0.5)
        a[0] += 0.5
        b[0] += 0.25
        a[self.half] = 0.5
        b[self.half] = 0.25
        self.acoef = np.concatenate([a, [0.0]])
        self.bcoef = np.concatenate([b, [0.0]])

    def _parts(self, z):
        A = np.sum(self.acoef * z**2, axis=-1)
        B = np.sum(self.bcoef * z**2, axis=-1)
        t = z[..., -1]
        return A, B, t

    def value(self, x):
        z = self._points(x)
        A, B, t = self._parts(z)
        u = B**2 + t**2
        v = A * B + t**2 + A * np.sqrt(A**2 + B**2)
        w = B + np.sqrt(u)
        e = 0.5 - 1.0 / (4 * self.half)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = u ** (1.0 / (4 * self.half)) * v**e / np.sqrt(w)
        return np.where(w > 0, out, 0.0)

    def _log_derivs(self, z, want_hessian):
        n = self.n
        A, B, t = self._parts(z)
        gA = 2 * self.acoef * z
        gB = 2 * self.bcoef * z
        HA = np.diag(2 * self.acoef)
        HB = np.diag(2 * self.bcoef)
        et = np.zeros(n)
        et[-1] = 1.0
        Ett = np.outer(et, et)
        outer = lambda p, q: p[..., :, None] * q[..., None, :]
        col = lambda s: s[..., None]
        mat = lambda s: s[..., None, None]

        u = B**2 + t**2
        gu = 2 * col(B) * gB + 2 * col(t) * et
        ok = B > self.guard
        s = np.sqrt(A**2 + B**2)
        s_safe = np.where(ok, s, 1.0)
        gs = (col(A) * gA + col(B) * gB) / col(s_safe)
        As = np.where(ok, A * s, 0.0)
        gAs = np.where(col(ok), col(s) * gA + col(A) * gs, 0.0)
        v = A * B + t**2 + As
        gv = col(B) * gA + col(A) * gB + 2 * col(t) * et + gAs
        r = np.sqrt(u)
        gr = gu / (2 * col(r))
        w = B + r
        gw = gB + gr
        k1, k2 = 1.0 / (4 * self.half), 0.5 - 1.0 / (4 * self.half)
        gL = k1 * gu / col(u) + k2 * gv / col(v) - 0.5 * gw / col(w)
        N = u**k1 * v**k2 / np.sqrt(w)
        if not want_hessian:
            return N, gL, None
        Hu = 2 * outer(gB, gB) + 2 * mat(B) * HB + 2 * Ett
        Hs = (outer(gA, gA) + mat(A) * HA + outer(gB, gB) + mat(B) * HB) / mat(s_safe) - outer(
            gs, gs
        ) / mat(s_safe)
        HAs = mat(s) * HA + outer(gA, gs) + outer(gs, gA) + mat(A) * Hs
        HAs = np.where(mat(ok), HAs, 0.0)
        Hv = outer(gA, gB) + outer(gB, gA) + mat(B) * HA + mat(A) * HB + 2 * Ett + HAs
        Hr = Hu / (2 * mat(r)) - outer(gr, gr) / mat(r)
        Hw = HB + Hr
        hlog = lambda H, g, f: H / mat(f) - outer(g, g) / mat(f**2)
        HL = k1 * hlog(Hu, gu, u) + k2 * hlog(Hv, gv, v) - 0.5 * hlog(Hw, gw, w)
        return N, gL, HL

    def gradient(self, x):
        z = self._points(x, derivative=True)
        N, gL, _ = self._log_derivs(z, False)
        return N[..., None] * gL

    def hessian(self, x):
        z = self._points(x, derivative=True)
        N, gL, HL = self._log_derivs(z, True)
        return N[..., None, None] * (gL[..., :, None] * gL[..., None, :] + HL)


# -- public operations -----------------------------------------------------

def norm_as_scalar_field(spec: QuasiNormSpec, group: CarnotGroup) -> ScalarField:
    try:
        return spec.build(group)
    except InvalidArgument:
        raise
    except (ValueError, TypeError) as err:
        raise InvalidArgument(str(err)) from None


def eval_norm(spec, group, x):
    field = spec if isinstance(spec, ScalarField) else norm_as_scalar_field(spec, group)
    return field.value(x)


def project_to_unit_sphere(spec, group, x):
    """``delta_{1/N(x)} x``; raises :class:`DomainError` at the origin."""
    field = spec if isinstance(spec, ScalarField) else norm_as_scalar_field(spec, group)
    x = np.asarray(x, dtype=float)
    nv = field.value(x)
    if np.any(nv <= 0):
        raise DomainError("cannot project the origin (or a zero of the norm) to the unit sphere")
    return _shrink(group, nv, x)


def _shrink(group, nv, x):
    """``delta_{1/nv} x`` computed by division, so ``x / |x|`` is exact in one dimension."""
    return x / nv[..., None] ** np.asarray(group.weights, dtype=float)


def sample_sphere(field: ScalarField, group: CarnotGroup, count: int, rng, min_radius=1e-6):
    """Gaussian draws in R^n, tiny ones rejected, projected to ``{N = 1}`` by dilation."""
    out = []
    have = 0
    while have < count:
        z = rng.standard_normal((count - have, group.n))
        z = z[np.linalg.norm(z, axis=1) >= min_radius]
        nv = field.value(z)
        z = z[nv > 0]
        if len(z):
            out.append(_shrink(group, field.value(z), z))
            have += len(z)
    return np.concatenate(out)[:count]


# -- presets ---------------------------------------------------------------

PRESET_NAMES = (
    "kaplan",
    "kaplan-printed",
    "step2-alpha1",
    "step2-alpha2",
    "powersum-default",
    "composite-strata",
    "aniso-heisenberg",
)


def preset(name: str, group: CarnotGroup, gamma: Optional[int] = None) -> QuasiNormSpec:
    """Named norm presets.

    ``kaplan`` is the Kaplan gauge normalised to this package's group law, so that
    ``|grad_G N| = |x| / N`` on H-type groups (c_k = 16); ``kaplan-printed`` keeps
    the constant c_k = 1/16.
    """
    m = group.n - group.n1
    if name == "kaplan":
        return Step2Alpha(1, (Fraction(16),) * m)
    if name == "kaplan-printed":
        return Step2Alpha(1, (Fraction(1, 16),) * m)
    if name == "step2-alpha1":
        return Step2Alpha(1)
    if name == "step2-alpha2":
        return Step2Alpha(2)
    if name == "powersum-default":
        return PowerSum.for_group(group, gamma)
    if name == "composite-strata":
        return composite_by_strata(group)
    if name == "aniso-heisenberg":
        return AnisoHeisenberg(group.n1 // 2)
    raise InvalidArgument(f"unknown norm preset {name!r}; known: {', '.join(PRESET_NAMES)}")


def composite_by_strata(group):
    """One Euclidean-type block per stratum, glued with ``alpha = lcm(2 sigma_j)``."""
    blocks = []
    start = 0
    for j, d in enumerate(group.strat.stratum_dims):
        coords = tuple(range(start, start + d))
        blocks.append(Block(coords, (1,) * d, 2 * (j + 1)))
        start += d
    alpha = reduce(math.lcm, (b.gamma for b in blocks))
    return Composite(tuple(blocks), alpha)


def spec_from_json(obj, group: CarnotGroup) -> QuasiNormSpec:
    """Preset name string or ``{"variant": ..., "params": {...}}`` (coordinates 1-based)."""
    if isinstance(obj, str):
        return preset(obj, group)
    variant = obj.get("variant")
    params = obj.get("params", {})
    if "preset" in obj:
        return preset(obj["preset"], group, params.get("gamma"))
    if variant == "PowerSum":
        if "beta" not in params:
            return PowerSum.for_group(group, params.get("gamma"), params.get("a"))
        a = params.get("a")
        return PowerSum(tuple(params["beta"]), int(params["gamma"]), None if a is None else tuple(a))
    if variant == "Composite":
        blocks = tuple(
            Block(
                tuple(int(k) - 1 for k in b["coords"]),
                tuple(b["beta"]),
                int(b["gamma"]),
                None if b.get("a") is None else tuple(b["a"]),
            )
            for b in params["blocks"]
        )
        exps = params.get("exponents")
        return Composite(blocks, int(params["alpha"]), None if exps is None else tuple(exps))
    if variant == "Step2Alpha":
        c = params.get("c")
        return Step2Alpha(int(params.get("alpha", 1)), None if c is None else tuple(c))
    if variant == "AnisoHeisenberg":
        return AnisoHeisenberg(int(params.get("n", group.n1 // 2)))
    raise InvalidArgument(f"unknown norm variant {variant!r}")
