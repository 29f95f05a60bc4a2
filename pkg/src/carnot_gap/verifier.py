"""Numerical checks of the gradient lower-bound condition and the exact identities behind it."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .diffops import gradient_length, horizontal_gradient
from .errors import InvalidArgument, NumericFailure, PreconditionFailed
from .fields import ScalarField
from .groups import CarnotGroup
from .lp import min_cover_two
from .quasinorms import (Composite, PowerSum, QuasiNormSpec, Step2Alpha, _shrink, norm_as_scalar_field,
                         sample_sphere)

log = logging.getLogger(__name__)

EPSILON_HOLD = 1e-8
KERNEL_TOL = 1e-9
POLISH_COUNT = 32
CHUNK = 8192
SEARCH_POINTS = 50_000


def default_threads():
    try:
        return max(1, int(os.environ.get("CARNOT_GAP_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class ConditionReport:
    j0: int  # 0-based
    gamma: int
    infimumEstimate: float
    argmin: Optional[list]
    samplesUsed: int
    refinementIterations: int
    verdict: str
    excludedKernelPoints: int = 0
    sphereResidual: float = 0.0
    epsilonHold: float = EPSILON_HOLD
    normGamma: Optional[int] = None
    seed: Optional[int] = None

    def to_json(self):
        d = asdict(self)
        d["j0"] = self.j0 + 1
        return d


def _as_field(norm, group):
    return norm if isinstance(norm, ScalarField) else norm_as_scalar_field(norm, group)


def _project(field, group, x):
    return _shrink(group, field.value(x), x)


def _minimize_on_sphere(group, field, ratio_fn, kernel_fn, budget, seed, threads=None):
    """Sample ``{N = 1}``, drop kernel points, polish the lowest ones by coordinate descent.

    ``ratio_fn(x)`` gives the ratio off the kernel; ``kernel_fn(x)`` marks excluded points.
    Chunks use spawned sub-seeds so the result does not depend on ``threads``.
    """
    if budget < 1:
        raise InvalidArgument("budget must be at least 1")
    sizes = [CHUNK] * (budget // CHUNK) + ([budget % CHUNK] if budget % CHUNK else [])
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))

    def run(k):
        rng = np.random.default_rng(seeds[k])
        x = sample_sphere(field, group, sizes[k], rng)
        ker = kernel_fn(x)
        r = np.full(len(x), np.inf)
        r[~ker] = ratio_fn(x[~ker])
        return x, r, int(ker.sum())

    threads = threads or default_threads()
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(run, range(len(sizes))))
    else:
        parts = [run(k) for k in range(len(sizes))]
    X = np.concatenate([p[0] for p in parts])
    R = np.concatenate([p[1] for p in parts])
    excluded = sum(p[2] for p in parts)
    if not np.isfinite(R).any():
        return None, None, budget, 0, excluded
    if np.isnan(R).any():
        raise NumericFailure("ratio is NaN at a sampled point", X[np.isnan(R)][0].tolist())

    order = np.argsort(R, kind="stable")[:POLISH_COUNT]
    order = order[np.isfinite(R[order])]
    P, V = X[order].copy(), R[order].copy()
    iters = 0
    h = np.full(len(P), 0.05)
    while np.any(h > 1e-9) and iters < 400:
        iters += 1
        improved = np.zeros(len(P), bool)
        for k in range(group.n):
            for sgn in (1.0, -1.0):
                Q = P.copy()
                Q[:, k] += sgn * h
                Q = _project(field, group, Q)
                ker = kernel_fn(Q)
                rq = np.full(len(Q), np.inf)
                if (~ker).any():
                    rq[~ker] = ratio_fn(Q[~ker])
                better = rq < V
                P[better], V[better] = Q[better], rq[better]
                improved |= better
        h = np.where(improved, h, h / 2)
    best = int(np.argmin(V))
    return float(V[best]), P[best], budget, iters, excluded


def _verdict(inf):
    if inf is None:
        return "inconclusive"
    return "holds" if inf > EPSILON_HOLD else "fails"


def estimate_condition_constant(group: CarnotGroup, norm, j0: int, gamma: int, budget=100_000,
                                seed=0, threads=None) -> ConditionReport:
    """Empirical ``inf_{N=1} |grad_G N| / |x_j0|^(gamma-1)``."""
    if gamma < 2 or int(gamma) != gamma:
        raise InvalidArgument(f"gamma = {gamma} must be an integer >= 2")
    if not 0 <= j0 < group.n1:
        raise InvalidArgument(f"j0 = {j0 + 1} is not a generator index (1..{group.n1})")
    field = _as_field(norm, group)
    g1 = gamma - 1

    def ratio(x):
        return gradient_length(group, field, x) * field.value(x) ** g1 / np.abs(x[:, j0]) ** g1

    def kernel(x):
        return np.abs(x[:, j0]) < KERNEL_TOL

    inf, arg, used, iters, excl = _minimize_on_sphere(group, field, ratio, kernel, budget, seed, threads)
    return ConditionReport(
        j0=j0,
        gamma=int(gamma),
        infimumEstimate=float("nan") if inf is None else inf,
        argmin=None if arg is None else arg.tolist(),
        samplesUsed=used,
        refinementIterations=iters,
        verdict=_verdict(inf),
        excludedKernelPoints=excl,
        sphereResidual=0.0 if arg is None else float(abs(field.value(arg) - 1)),
        normGamma=getattr(norm, "gamma", None),
        seed=seed,
    )


def check_step2_proposition(group: CarnotGroup, norm: Step2Alpha, budget=100_000, seed=0,
                            threads=None) -> ConditionReport:
    """Empirical ``inf_{N=1} |grad_G N_alpha| / |x_h|^(4 alpha - 1)``, ``x_h`` the horizontal part."""
    if not isinstance(norm, Step2Alpha):
        raise InvalidArgument("check_step2_proposition needs a Step2Alpha norm")
    norm.validate(group)
    field = norm.build(group)
    e = 4 * norm.alpha - 1
    n1 = group.n1

    def ratio(x):
        h = np.linalg.norm(x[:, :n1], axis=1)
        return gradient_length(group, field, x) * field.value(x) ** e / h ** e

    def kernel(x):
        return np.linalg.norm(x[:, :n1], axis=1) < KERNEL_TOL

    inf, arg, used, iters, excl = _minimize_on_sphere(group, field, ratio, kernel, budget, seed, threads)
    return ConditionReport(
        j0=0,
        gamma=4 * norm.alpha,
        infimumEstimate=float("nan") if inf is None else inf,
        argmin=None if arg is None else arg.tolist(),
        samplesUsed=used,
        refinementIterations=iters,
        verdict=_verdict(inf),
        excludedKernelPoints=excl,
        sphereResidual=0.0 if arg is None else float(abs(field.value(arg) - 1)),
        seed=seed,
    )


# -- pure generator identity ----------------------------------------------

@dataclass
class IdentityVerdict:
    passed: bool
    maxDeviation: float
    constant: float
    points: int


def pure_generator_obstruction(group: CarnotGroup, j0: int):
    """``None`` if ``X_j0 = d/dx_j0`` exactly, else a description of the first extra term."""
    X = group.horizontal[j0]
    for k, c in enumerate(X.coeffs):
        want = 1 if k == j0 else 0
        if c != want:
            extra = c - want if k == j0 else c
            return f"X{j0 + 1} has the extra term ({extra!r})*d{k + 1}"
    return None


def check_pure_generator_identity(group: CarnotGroup, norm: QuasiNormSpec, j0: int, points=10_000,
                                  seed=0, tol=1e-10) -> IdentityVerdict:
    """Compare ``|X_j0 N|`` with its closed form at random points.

    PowerSum: ``(2 beta a / gamma) |x_j0|^(gamma-1) / N^(gamma-1)``.
    Composite: ``(2 beta a / gamma_j) |x_j0|^(gamma_j-1) N_j^(alpha-gamma_j) / N^(alpha-1)``
    with ``N_j`` the block containing ``j0``.
    """
    why = pure_generator_obstruction(group, j0)
    if why is not None:
        raise PreconditionFailed(why)
    field = norm_as_scalar_field(norm, group)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((points, group.n))
    xj = np.abs(x[:, j0])
    lhs = np.abs(field.gradient(x)[:, j0])
    nv = field.value(x)
    if isinstance(norm, PowerSum):
        beta, gam = norm.beta[j0], norm.gamma
        a = norm.coefficients()[j0]
        C = Fraction(2 * beta) * a / gam
        rhs = float(C) * xj ** (gam - 1) / nv ** (gam - 1)
    elif isinstance(norm, Composite):
        blk = norm.block_of(j0)
        if blk is None:
            raise PreconditionFailed(f"coordinate {j0 + 1} is not in any block")
        i = blk.coords.index(j0)
        a = blk.coefficients()
        C = Fraction(2 * blk.beta[i]) * a[i] / blk.gamma
        Sj = sum(float(a[m]) * x[:, k] ** (2 * blk.beta[m]) for m, k in enumerate(blk.coords))
        Nj = Sj ** (1.0 / blk.gamma)
        rhs = float(C) * xj ** (blk.gamma - 1) * Nj ** (norm.alpha - blk.gamma) / nv ** (norm.alpha - 1)
    else:
        raise InvalidArgument("identity is stated for PowerSum and Composite norms")
    dev = float(np.max(np.abs(lhs - rhs) / rhs))
    return IdentityVerdict(dev < tol, dev, float(C), points)


# -- U-bound --------------------------------------------------------------

@dataclass
class UBoundFit:
    A: float
    B: float
    q: float
    p: float
    gamma: int
    trainSize: int
    holdoutSize: int
    worstHoldoutMargin: float
    termScale: float
    skipped: int = 0
    passed: bool = False
    tolerance: float = 1e-8
    A_exact: Optional[str] = None
    B_exact: Optional[str] = None
    worstHoldoutIndex: Optional[int] = None
    cuttingPlanes: int = 0
    margins: list = field(default_factory=list, repr=False)

    def to_json(self):
        d = asdict(self)
        d.pop("margins")
        return d


def _values_and_gradients(group, fns, points):
    """Values ``(m, k)`` and horizontal gradients ``(n1, m, k)`` of each function."""
    F = np.stack([f.value(points) for f in fns], axis=1)
    DF = np.stack([horizontal_gradient(group, f, points) for f in fns], axis=2)
    return F, np.ascontiguousarray(np.moveaxis(DF, 1, 0))


def _terms_from_values(F, DF, weight, q):
    g = np.sqrt((DF**2).sum(axis=0))
    fq = np.abs(F) ** q
    return np.column_stack([weight @ fq / len(F), (g**q).mean(axis=0), fq.mean(axis=0)])


def _ubound_weight(norm_field, points, j0, gamma, p):
    nv = norm_field.value(points)
    return nv ** (p - 2 * gamma) * np.abs(points[:, j0]) ** (2 * gamma)


def ubound_terms(group, norm_field, j0, gamma, p, q, fns, points):
    """Monte Carlo ``(L_f, G_f, M_f)`` for each function on a common batch."""
    points = np.asarray(points, dtype=float)
    if not len(fns):
        return np.zeros((0, 3))
    F, DF = _values_and_gradients(group, fns, points)
    return _terms_from_values(F, DF, _ubound_weight(norm_field, points, j0, gamma, p), q)


class _SpanTerms:
    """``(L, G, M)`` and their coefficient gradients for ``f = sum_i c_i f_i`` over a fixed batch."""

    def __init__(self, F, DF, weight, q, V):
        self.q = q
        self.weight = weight
        self.F = F @ V
        self.DF = np.stack([G @ V for G in DF])

    @staticmethod
    def basis(F, DF, probe=5000):
        """Orthonormal coefficient basis of the span, found on an evenly strided subsample."""
        step = max(1, len(F) // probe)
        stacked = np.concatenate([F[::step]] + [G[::step] for G in DF], axis=0)
        _, s, Vt = np.linalg.svd(stacked, full_matrices=False)
        return Vt[s > 1e-10 * s[0]].T

    def __call__(self, c):
        q = self.q
        u = self.F @ c
        du = np.stack([G @ c for G in self.DF])  # (n1, m)
        g = np.sqrt((du**2).sum(axis=0))
        au = np.abs(u)
        L = np.mean(au**q * self.weight)
        M = np.mean(au**q)
        G = np.mean(g**q)
        su = np.sign(u) * au ** (q - 1)
        dL = q * (su * self.weight) @ self.F / len(u)
        dM = q * su @ self.F / len(u)
        gq2 = np.where(g > 0, np.where(g > 0, g, 1.0) ** (q - 2), 0.0)
        dG = q * sum((gq2 * d) @ D for d, D in zip(du, self.DF)) / len(u)
        return (L, G, M), (dL, dG, dM)


def _worst_direction(span, A, B, starts, maxiter=200):
    """Maximise ``L / (A G + B M)`` over coefficient directions by L-BFGS from several starts."""

    def obj(c):
        (L, G, M), (dL, dG, dM) = span(c)
        R = A * G + B * M
        if L <= 0 or R <= 0:
            return 0.0, np.zeros_like(c)
        val = np.log(L) - np.log(R)
        grad = dL / L - (A * dG + B * dM) / R
        return -val, -grad

    best_val, best_c = -np.inf, None
    for c0 in starts:
        res = minimize(obj, c0 / np.linalg.norm(c0), jac=True, method="L-BFGS-B",
                       options={"maxiter": maxiter})
        if np.isfinite(res.fun) and -res.fun > best_val:
            best_val, best_c = -res.fun, res.x / np.linalg.norm(res.x)
    return best_val, best_c


def fit_u_bound_constants(group, norm, j0, gamma, p, q, train_fns, holdout_fns, points,
                          tolerance=1e-8, span_rounds=30, seed=0) -> UBoundFit:
    """Tightest ``(A, B)`` (minimising ``A + B``) with ``L_f <= A G_f + B M_f`` on the training set.

    With ``span_rounds > 0`` the training rows are augmented by cutting planes: after each LP
    solve the most violating direction in the linear span of the training functions is found by
    local optimisation and added as a row, until no direction violates by more than ``tolerance``.
    The holdout functions are never consulted while fitting.
    """
    if p < 2 * gamma:
        raise InvalidArgument(f"p = {p} < 2*gamma = {2 * gamma}")
    if abs(1 / p + 1 / q - 1) > 1e-12:
        raise InvalidArgument(f"q = {q} is not the conjugate exponent of p = {p}")
    field_ = _as_field(norm, group)
    points = np.asarray(points, dtype=float)
    weight = _ubound_weight(field_, points, j0, gamma, p)
    Ftr, DFtr = _values_and_gradients(group, train_fns, points)
    T = _terms_from_values(Ftr, DFtr, weight, q)
    H = ubound_terms(group, field_, j0, gamma, p, q, holdout_fns, points)
    if not (np.isfinite(T).all() and np.isfinite(H).all()):
        raise NumericFailure("non-finite Monte Carlo term in the U-bound fit")
    keep = (T[:, 1] > 0) | (T[:, 2] > 0)
    skipped = int((~keep).sum())
    if skipped:
        log.warning("skipping %d training functions with G_f = M_f = 0", skipped)
    T = T[keep]
    A, B, _ = min_cover_two(T[:, 1].tolist(), T[:, 2].tolist(), T[:, 0].tolist())

    added = 0
    if span_rounds > 0 and len(train_fns):
        V = _SpanTerms.basis(Ftr, DFtr)
        full = _SpanTerms(Ftr, DFtr, weight, q, V)
        # directions are searched on a strided subsample; each accepted row uses the full batch
        step = max(1, len(points) // SEARCH_POINTS)
        span = _SpanTerms(Ftr[::step], DFtr[:, ::step], weight[::step], q, V)
        del Ftr, DFtr
        rng = np.random.default_rng(seed)
        rows = [tuple(r) for r in T]
        kept = keep.nonzero()[0]
        for _ in range(span_rounds):
            Af, Bf = float(A), float(B)
            starts = list(rng.standard_normal((4, V.shape[1])))
            # the tightest training functions, expressed in span coordinates
            rho = T[:, 0] / np.maximum(Af * T[:, 1] + Bf * T[:, 2], 1e-300)
            for i in np.argsort(-rho[:len(kept)])[:4]:
                starts.append(V[kept[i]])
            val, c = _worst_direction(span, Af, Bf, starts)
            if c is None:
                break
            val, c = _worst_direction(full, Af, Bf, [c], maxiter=30)
            if c is None or val <= np.log1p(tolerance):
                break
            (L, G, M), _ = full(c)
            rows.append((L, G, M))
            T = np.array(rows)
            A, B, _ = min_cover_two(T[:, 1].tolist(), T[:, 2].tolist(), T[:, 0].tolist())
            added += 1

    Af, Bf = float(A), float(B)
    margins = Af * H[:, 1] + Bf * H[:, 2] - H[:, 0]
    scale = np.maximum.reduce([Af * H[:, 1], Bf * H[:, 2], H[:, 0]])
    rel = margins / np.where(scale > 0, scale, 1.0)
    worst = int(np.argmin(rel)) if len(rel) else None
    return UBoundFit(
        A=Af,
        B=Bf,
        q=float(q),
        p=float(p),
        gamma=int(gamma),
        trainSize=len(T) - added,
        holdoutSize=len(H),
        worstHoldoutMargin=float(margins[worst]) if worst is not None else 0.0,
        termScale=float(scale[worst]) if worst is not None else 0.0,
        skipped=skipped,
        passed=bool(Af > 0 and Bf >= 0 and (worst is None or rel[worst] >= -tolerance)),
        tolerance=tolerance,
        A_exact=str(A),
        B_exact=str(B),
        worstHoldoutIndex=worst,
        cuttingPlanes=added,
        margins=margins.tolist(),
    )


def ubound_function_sets(group: CarnotGroup, max_degree=2, train_size=200, holdout_size=200, seed=0):
    """Training set: constant, weighted monomials, then random combinations; holdout: fresh combinations.

    Combinations have standard normal coefficients (constant term included) and are drawn
    from independent streams for training and holdout.
    """
    from .fields import PolyField
    from .polynomial import SparsePoly
    from .spectral import weighted_exponents

    monos = [SparsePoly.monomial(e) for e in weighted_exponents(group.weights, max_degree)]
    base = [SparsePoly.constant(group.n, 1)] + monos
    if train_size < len(base):
        raise InvalidArgument(f"train_size must be at least {len(base)} (constant plus monomials)")
    train_rng, hold_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))

    def combos(rng, count):
        out = []
        for _ in range(count):
            c = rng.standard_normal(len(base))
            P = SparsePoly.zero(group.n)
            for ci, m in zip(c, base):
                P = P + m * float(ci)
            out.append(PolyField(P))
        return out

    train = [PolyField(m) for m in base] + combos(train_rng, train_size - len(base))
    return train, combos(hold_rng, holdout_size)
