"""Horizontal gradient, its length, and the sub-Laplacian."""

from __future__ import annotations

from enum import Enum

import numpy as np

from .errors import DomainError, InvalidArgument
from .fields import ScalarField
from .groups import CarnotGroup


class Ratio(Enum):
    FINITE = "finite"
    INFINITE = "infinite"
    INDETERMINATE = "indeterminate"


def _coeff_matrix(group: CarnotGroup, x):
    """``C[..., j, k]``: coefficient of ``d_k`` in ``X_j`` at ``x``."""
    return np.stack([X.coefficient_values(x) for X in group.horizontal], axis=-2)


def horizontal_gradient(group: CarnotGroup, f: ScalarField, x):
    """``(X_1 f, ..., X_{n1} f)`` at points ``x`` of shape ``(..., n)``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != group.n:
        raise InvalidArgument(f"point has {x.shape[-1]} coordinates, group dimension is {group.n}")
    grad = f.gradient(x)
    return np.einsum("...jk,...k->...j", _coeff_matrix(group, x), grad)


def gradient_length(group, f, x):
    return np.linalg.norm(horizontal_gradient(group, f, x), axis=-1)


def sub_laplacian(group: CarnotGroup, f: ScalarField, x):
    """``sum_j X_j(X_j f)``, expanded as ``c_j^T H c_j + c_j^T (Dc_j) grad f``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != group.n:
        raise InvalidArgument(f"point has {x.shape[-1]} coordinates, group dimension is {group.n}")
    grad = f.gradient(x)
    hess = f.hessian(x)
    total = np.zeros(x.shape[:-1])
    for X in group.horizontal:
        c = X.coefficient_values(x)
        Dc = X.coefficient_jacobian(x)  # d c_l / d x_k at [..., l, k]
        total = total + np.einsum("...k,...kl,...l->...", c, hess, c)
        total = total + np.einsum("...k,...lk,...l->...", c, Dc, grad)
    return total


def gradient_norm_ratio(group, norm: ScalarField, j0: int, gamma: int, x, zero_tol=0.0):
    """``|grad_G N| N^(gamma-1) / |x_j0|^(gamma-1)`` with an explicit status per point.

    Returns ``(values, status)``; ``values`` is ``+inf`` where ``x_j0 = 0`` and the
    gradient is positive, and ``nan`` where both vanish (status INDETERMINATE).
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 1
    x = np.atleast_2d(x)
    if np.any(np.all(x == 0, axis=-1)):
        raise DomainError("gradient ratio is undefined at the origin")
    if not 0 <= j0 < group.n1:
        raise InvalidArgument(f"j0 = {j0} is not a generator index (0..{group.n1 - 1})")
    glen = gradient_length(group, norm, x)
    nv = norm.value(x)
    xj = np.abs(x[:, j0])
    on_kernel = xj <= zero_tol
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = glen * nv ** (gamma - 1) / xj ** (gamma - 1)
    status = np.full(len(x), Ratio.FINITE, dtype=object)
    vals = np.where(on_kernel, np.where(glen > 0, np.inf, np.nan), vals)
    status[on_kernel & (glen > 0)] = Ratio.INFINITE
    status[on_kernel & ~(glen > 0)] = Ratio.INDETERMINATE
    if scalar:
        return float(vals[0]), status[0]
    return vals, status


def sphere_suprema(group, norm: ScalarField, count=100_000, seed=0):
    """Empirical sup over ``{N = 1}`` of ``|grad_G N|`` and ``|Delta_G N|``."""
    from .quasinorms import sample_sphere

    rng = np.random.default_rng(seed)
    pts = sample_sphere(norm, group, count, rng)
    g = gradient_length(group, norm, pts)
    lap = np.abs(sub_laplacian(group, norm, pts))
    return {
        "gradSup": float(g.max()),
        "gradSupPoint": pts[int(g.argmax())].tolist(),
        "laplacianSup": float(lap.max()),
        "laplacianSupPoint": pts[int(lap.argmax())].tolist(),
        "samples": int(count),
    }
