"""Spectral gap of the Dirichlet form ``E(f, f) = mu(|grad_G f|^2)``.

Three estimators:

* ``ritz_gap_estimate``: Rayleigh-Ritz on a polynomial dictionary with Monte Carlo Gram matrices.
* ``grid_gap_oracle``: tensor-grid discretisation of the Dirichlet form (n <= 3).
* ``empirical_poincare_ratio``: lower bound on the q-Poincare constant from trial functions.
"""

from __future__ import annotations

import itertools
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .diffops import horizontal_gradient
from .errors import DictionaryDegenerate, InvalidArgument, NumericFailure
from .fields import DampedField, PolyField, ScalarField
from .measure import MeasureSpec, SampleBatch, log_density_unnormalized
from .polynomial import SparsePoly
from .quasinorms import sample_sphere

log = logging.getLogger(__name__)

DENSITY_CUTOFF = 1e-12
BOUNDARY_LIMIT = 1e-6
ACTIVE_CUTOFF = 1e-16


# -- dictionary -------------------------------------------------------------

@dataclass
class Dictionary:
    functions: list
    maxWeightedDegree: int
    damping: float = 0.0
    labels: list = field(default_factory=list)

    def __len__(self):
        return len(self.functions)


def weighted_exponents(weights, max_degree):
    """All exponent tuples with ``0 < <alpha, sigma> <= max_degree``, in graded order."""
    ranges = [range(max_degree // w + 1) for w in weights]
    out = [e for e in itertools.product(*ranges) if 0 < sum(a * w for a, w in zip(e, weights)) <= max_degree]
    out.sort(key=lambda e: (sum(a * w for a, w in zip(e, weights)), tuple(-a for a in e)))
    return out


def build_dictionary(spec: MeasureSpec, max_degree: int = 6, damping: float = 0.0) -> Dictionary:
    """Weighted monomials ``x^alpha`` (constant excluded), optionally times ``exp(-eps N^p)``."""
    if max_degree < 1:
        raise InvalidArgument("max_degree must be >= 1")
    if damping < 0:
        raise InvalidArgument("damping must be >= 0")
    n = spec.group.n
    fns, labels = [], []
    for e in weighted_exponents(spec.group.weights, max_degree):
        f = PolyField(SparsePoly.monomial(e))
        if damping > 0:
            f = DampedField(f, spec.norm_field, damping, spec.p)
        fns.append(f)
        labels.append("*".join(f"x{k + 1}^{a}" if a > 1 else f"x{k + 1}" for k, a in enumerate(e) if a))
    assert len(labels) == len(fns) and all(f.n == n for f in fns)
    return Dictionary(fns, max_degree, damping, labels)


# -- results ----------------------------------------------------------------

@dataclass
class GapEstimate:
    lambda1: float
    method: str
    sizeParams: dict
    mcStderr: float = 0.0
    seed: Optional[int] = None
    diagnostics: dict = field(default_factory=dict)

    def to_json(self):
        return asdict(self)


def _evaluate(spec, fns, points):
    """Values ``(m, k)`` and horizontal gradients ``(n1, m, k)`` (generator-major, contiguous)."""
    vals = np.stack([f.value(points) for f in fns], axis=1)
    grads = np.stack([horizontal_gradient(spec.group, f, points) for f in fns], axis=-1)
    grads = np.ascontiguousarray(np.moveaxis(grads, -2, 0))
    return vals, grads


def _ritz_min(F, DF, rel_tol=1e-10):
    """Smallest generalized eigenvalue of (A, B) after projecting out null directions of B."""
    k = F.shape[1]
    A = sum(G.T @ G for G in DF) / len(F)
    Fc = F - F.mean(axis=0)
    B = Fc.T @ Fc / len(F)
    d = np.sqrt(np.diag(B))
    d = np.where(d > 0, d, 1.0)
    A = A / np.outer(d, d)
    B = B / np.outer(d, d)
    w, V = np.linalg.eigh(B)
    keep = w > rel_tol * np.trace(B) / k
    if not keep.any():
        raise DictionaryDegenerate("covariance matrix has no usable directions", range(k))
    Vk = V[:, keep] / np.sqrt(w[keep])
    C = Vk.T @ A @ Vk
    lam, U = scipy.linalg.eigh((C + C.T) / 2)
    coef = (Vk @ U[:, 0]) / d
    return float(lam[0]), int((~keep).sum()), coef


def ritz_gap_estimate(spec: MeasureSpec, dictionary: Dictionary, batch, bootstrap: int = 20,
                      seed: int = 0) -> GapEstimate:
    """Rayleigh-Ritz estimate of ``lambda_1``; converges from above as the dictionary grows."""
    if len(dictionary) == 0:
        raise InvalidArgument("dictionary is empty")
    points = batch.points if isinstance(batch, SampleBatch) else np.asarray(batch, dtype=float)
    F, DF = _evaluate(spec, dictionary.functions, points)
    if not (np.isfinite(F).all() and np.isfinite(DF).all()):
        raise NumericFailure("non-finite dictionary values on the batch")
    lam, removed, coef = _ritz_min(F, DF)
    rng = np.random.default_rng(seed)
    boots = []
    for _ in range(bootstrap):
        idx = rng.integers(0, len(F), len(F))
        try:
            boots.append(_ritz_min(F[idx], DF[:, idx])[0])
        except DictionaryDegenerate:
            continue
    stderr = float(np.std(boots, ddof=1)) if len(boots) > 1 else float("nan")
    if not lam > 0:
        raise NumericFailure(f"Ritz eigenvalue {lam} is not positive")
    return GapEstimate(
        lambda1=lam,
        method="ritz",
        sizeParams={"dictionarySize": len(dictionary), "maxWeightedDegree": dictionary.maxWeightedDegree,
                    "damping": dictionary.damping, "batchSize": len(points)},
        mcStderr=stderr,
        seed=seed,
        diagnostics={"removedDirections": removed, "bootstrapResamples": len(boots),
                     "eigenfunctionCoefficients": coef.tolist()},
    )


# -- grid oracle ------------------------------------------------------------

class BoxTooSmall(InvalidArgument):
    def __init__(self, message, suggested):
        super().__init__(message)
        self.suggested = suggested


def default_box(spec: MeasureSpec, samples: int = 200_000, seed: int = 0):
    """Per-coordinate half-widths ``R^sigma_i * sup_{N=1} |x_i|`` with ``a R^p = ln(1/cutoff)``."""
    R = (math.log(1 / DENSITY_CUTOFF) / spec.a) ** (1.0 / spec.p)
    pts = sample_sphere(spec.norm_field, spec.group, samples, np.random.default_rng(seed))
    ext = np.abs(pts).max(axis=0) * 1.02
    return [float(R ** w * e) for w, e in zip(spec.group.weights, ext)]


def _diff_1d(P, h, forward):
    """One-sided difference matrix; rows without a neighbour are zero."""
    main = np.full(P, -1.0 / h) if forward else np.full(P, 1.0 / h)
    off = np.full(P - 1, 1.0 / h) if forward else np.full(P - 1, -1.0 / h)
    if forward:
        main[-1] = 0.0
        D = sp.diags([main, off], [0, 1], shape=(P, P))
    else:
        main[0] = 0.0
        D = sp.diags([off, main], [-1, 0], shape=(P, P))
    return D.tocsr()


def _kron_axis(mats_1d, axis, sizes):
    out = None
    for k, P in enumerate(sizes):
        m = mats_1d if k == axis else sp.identity(P, format="csr")
        out = m if out is None else sp.kron(out, m, format="csr")
    return out


def assemble_dirichlet_form(axes, coeff_values, weight, active=None):
    """Symmetrised one-sided discretisation of ``sum_j int |X_j f|^2 w``.

    ``axes``: 1D coordinate arrays (uniform spacing). ``coeff_values``: list over generators of
    arrays ``(nodes, n)`` with the field coefficients at each node. ``weight``: node weights.
    Returns ``(K, mass)`` with ``K`` symmetric PSD and ``K 1 = 0``.
    """
    sizes = [len(a) for a in axes]
    hs = [a[1] - a[0] for a in axes]
    n = len(axes)
    N = int(np.prod(sizes))
    if active is None:
        active = np.ones(N, bool)
    vol = float(np.prod(hs))
    # trapezoid mass, full-volume stiffness weights
    trap = np.ones(N)
    for k, P in enumerate(sizes):
        edge = np.ones(P)
        edge[0] = edge[-1] = 0.5
        shape = [1] * n
        shape[k] = P
        trap = (trap.reshape(sizes) * edge.reshape(shape)).ravel()
    mass = weight * vol * trap * active
    idx = np.arange(N).reshape(sizes)
    K = sp.csr_matrix((N, N))
    for forward in (True, False):
        S = [_kron_axis(_diff_1d(P, h, forward), k, sizes) for k, (P, h) in enumerate(zip(sizes, hs))]
        for C in coeff_values:
            support = [k for k in range(n) if np.any(C[:, k] != 0)]
            ok = active.copy()
            for k in support:
                # neighbour along k must exist and be active
                sl = [slice(None)] * n
                nb = np.zeros(sizes, bool)
                if forward:
                    sl[k] = slice(0, sizes[k] - 1)
                    src = [slice(None)] * n
                    src[k] = slice(1, None)
                else:
                    sl[k] = slice(1, None)
                    src = [slice(None)] * n
                    src[k] = slice(0, sizes[k] - 1)
                nb[tuple(sl)] = active.reshape(sizes)[tuple(src)]
                ok &= nb.ravel()
            D = sp.csr_matrix((N, N))
            for k in support:
                D = D + sp.diags(C[:, k]) @ S[k]
            wrow = np.where(ok, weight * vol, 0.0)
            K = K + D.T @ sp.diags(wrow) @ D
    K = (K + K.T) * 0.25
    del idx
    return K.tocsr(), mass


def _smallest_pair(K, mass, tol=1e-9, seed=0):
    """Two smallest eigenvalues of ``K v = lam diag(mass) v`` and the null-vector residual."""
    N = K.shape[0]
    s = 1.0 / np.sqrt(mass)
    S = (sp.diags(s) @ K @ sp.diags(s)).tocsr()
    S = (S + S.T) * 0.5
    y0 = np.sqrt(mass)
    y0 /= np.linalg.norm(y0)
    null_residual = float(np.linalg.norm(S @ y0))
    scale = float(abs(S.diagonal()).max())
    if N <= 20_000:
        vals = spla.eigsh(S, k=2, sigma=-1e-6 * scale, which="LM", return_eigenvectors=False, tol=tol)
        vals = np.sort(vals)
        return float(vals[0]), float(vals[1]), null_residual, "shift-invert"
    import pyamg

    ml = pyamg.smoothed_aggregation_solver(S + sp.identity(N) * (1e-8 * scale), symmetry="hermitian")
    Mpre = ml.aspreconditioner()
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((N, 2))
    vals, _ = spla.lobpcg(S, X, M=Mpre, Y=y0[:, None], tol=tol ** 0.5, maxiter=500, largest=False)
    vals = np.sort(vals)
    return 0.0, float(vals[0]), null_residual, "lobpcg+amg"


def grid_gap_oracle(spec: MeasureSpec, box=None, points_per_axis: int = 101, seed: int = 0) -> GapEstimate:
    """Smallest nonzero eigenvalue of the discretised Dirichlet form on a tensor grid."""
    group = spec.group
    if group.n > 3:
        raise InvalidArgument(f"grid oracle supports n <= 3, group has n = {group.n}")
    if points_per_axis % 2 == 0 or points_per_axis < 3:
        raise InvalidArgument("points_per_axis must be odd and >= 3")
    t0 = time.perf_counter()
    if box is None:
        box = default_box(spec)
    box = [float(b) for b in (box if np.ndim(box) else [box] * group.n)]
    axes = [np.linspace(-b, b, points_per_axis) for b in box]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, group.n)
    logw = log_density_unnormalized(spec, grid)
    logw -= logw.max()
    w = np.exp(logw)
    on_face = np.zeros(len(grid), bool)
    for k, b in enumerate(box):
        on_face |= np.isclose(np.abs(grid[:, k]), b)
    edge = float(w[on_face].max())
    if edge > BOUNDARY_LIMIT:
        grow = (math.log(1 / DENSITY_CUTOFF) / max(-math.log(edge), 1e-3))
        suggested = [b * max(grow, 1.5) for b in box]
        raise BoxTooSmall(
            f"boundary weight {edge:.3g} exceeds {BOUNDARY_LIMIT:g} of the maximum; enlarge the box",
            suggested,
        )
    active = w >= ACTIVE_CUTOFF
    coeffs = [X.coefficient_values(grid) for X in group.horizontal]
    K, mass = assemble_dirichlet_form(axes, coeffs, w, active)
    ids = np.flatnonzero(active)
    K = K[ids][:, ids]
    mass = mass[ids]
    lam0, lam1, null_res, solver = _smallest_pair(K, mass, seed=seed)
    return GapEstimate(
        lambda1=lam1,
        method="grid",
        sizeParams={"pointsPerAxis": points_per_axis, "box": box, "activeNodes": int(active.sum()),
                    "spacing": [float(a[1] - a[0]) for a in axes]},
        seed=seed,
        diagnostics={"lambda0": lam0, "nullResidual": null_res, "solver": solver,
                     "boundaryWeight": edge, "seconds": time.perf_counter() - t0},
    )


def neumann_self_test(points: int = 2001) -> GapEstimate:
    """Uniform weight on ``[0, 1]`` with ``d/dx``: the exact gap is ``pi^2``."""
    x = np.linspace(0.0, 1.0, points)
    coeffs = [np.ones((points, 1))]
    K, mass = assemble_dirichlet_form([x], coeffs, np.ones(points))
    lam0, lam1, null_res, solver = _smallest_pair(K, mass)
    return GapEstimate(
        lambda1=lam1,
        method="grid",
        sizeParams={"pointsPerAxis": points, "box": [[0.0, 1.0]]},
        diagnostics={"lambda0": lam0, "nullResidual": null_res, "solver": solver, "exact": math.pi ** 2},
    )


# -- empirical q-Poincare ratio ---------------------------------------------

@dataclass
class PoincareRatio:
    ratio: float
    q: float
    argmax: dict
    functionsTried: int
    skipped: int
    theoremMode: bool
    flags: list = field(default_factory=list)

    def to_json(self):
        return asdict(self)


def empirical_poincare_ratio(spec: MeasureSpec, q: float, dictionary: Dictionary, batch, seed: int = 0,
                             theorem_mode: bool = True, combos_factor: int = 10) -> PoincareRatio:
    """``max_f mu(|f - mean f|^q) / mu(|grad_G f|^q)`` over the dictionary and random combinations."""
    if not q > 1:
        raise InvalidArgument(f"q = {q} must exceed 1")
    flags = []
    conj = abs(1 / q + 1 / spec.p - 1) <= 1e-12
    if theorem_mode and not conj:
        raise InvalidArgument(f"theorem mode needs 1/q + 1/p = 1; got q = {q}, p = {spec.p}")
    if not conj:
        flags.append("exploration: q is not conjugate to p")
    points = batch.points if isinstance(batch, SampleBatch) else np.asarray(batch, dtype=float)
    F, DF = _evaluate(spec, dictionary.functions, points)
    k = F.shape[1]
    # normalise columns so random combinations mix comparable functions
    sd = F.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    rng = np.random.default_rng(seed)
    coefs = np.vstack([np.eye(k), rng.standard_normal((combos_factor * k, k))]) / sd
    best, arg, skipped = -np.inf, None, 0
    for i, c in enumerate(coefs):
        f = F @ c
        g = np.sqrt(sum((G @ c) ** 2 for G in DF))
        den = np.mean(g ** q)
        if not den > 0:
            skipped += 1
            continue
        num = np.mean(np.abs(f - f.mean()) ** q)
        r = num / den
        if r > best:
            best, arg = r, i
    if arg is None:
        raise NumericFailure("every trial function has zero gradient mass")
    if skipped:
        log.warning("skipped %d trial functions with zero gradient mass", skipped)
    c = coefs[arg]
    argmax = {"index": int(arg), "kind": "dictionary" if arg < k else "combination",
              "coefficients": {dictionary.labels[j] if dictionary.labels else str(j): float(c[j])
                               for j in range(k) if c[j] != 0}}
    return PoincareRatio(float(best), float(q), argmax, len(coefs), skipped, theorem_mode, flags)
