"""Measures ``exp(-a N^p - W) dx`` and a seeded random-walk Metropolis sampler."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from .diffops import gradient_length
from .errors import InvalidArgument, NumericFailure
from .fields import ScalarField
from .groups import CarnotGroup
from .quasinorms import QuasiNormSpec, norm_as_scalar_field

TARGET_ACCEPT = 0.3
ACCEPT_BAND = (0.25, 0.40)


@dataclass(frozen=True)
class MeasureSpec:
    group: CarnotGroup
    norm: QuasiNormSpec
    a: float = 1.0
    p: float = 2.0
    perturbation: Optional[ScalarField] = None
    gamma: Optional[int] = None  # only used to flag p < 2 gamma

    def __post_init__(self):
        if not self.a > 0:
            raise InvalidArgument(f"a = {self.a} must be positive")
        if not self.p >= 1:
            raise InvalidArgument(f"p = {self.p} must be >= 1")

    @cached_property
    def norm_field(self) -> ScalarField:
        if isinstance(self.norm, ScalarField):
            return self.norm
        return norm_as_scalar_field(self.norm, self.group)

    @property
    def q(self):
        return self.p / (self.p - 1) if self.p > 1 else math.inf

    def flags(self):
        out = []
        if self.gamma is not None and self.p < 2 * self.gamma:
            out.append(f"p = {self.p} < 2*gamma = {2 * self.gamma}: outside the theorem's range")
        return out

    @property
    def radius_scale(self):
        """Norm radius where ``a N^p = 1``."""
        return self.a ** (-1.0 / self.p)

    def to_json(self):
        spec = self.norm.to_json() if hasattr(self.norm, "to_json") else repr(self.norm)
        return {
            "group": self.group.name,
            "norm": spec,
            "a": self.a,
            "p": self.p,
            "perturbation": None if self.perturbation is None else repr(self.perturbation),
        }


def log_density_unnormalized(spec: MeasureSpec, x):
    """``-a N(x)^p - W(x)``; ``N(0)^p = 0`` exactly."""
    x = np.asarray(x, dtype=float)
    nv = spec.norm_field.value(x)
    out = -spec.a * np.where(nv > 0, nv, 0.0) ** spec.p
    if spec.perturbation is not None:
        out = out - spec.perturbation.value(x)
    return out


def metropolis_accept(logp_current, logp_proposed, u):
    """Accept iff ``log u < logp_proposed - logp_current`` (symmetric proposals)."""
    return np.log(u) < (np.asarray(logp_proposed) - np.asarray(logp_current))


@dataclass
class SampleBatch:
    points: np.ndarray
    seed: Optional[int]
    chainCount: int
    burnIn: int
    acceptanceRate: float
    essEstimate: np.ndarray
    logWeights: Optional[np.ndarray] = None
    proposalScales: Optional[np.ndarray] = None
    flags: list = field(default_factory=list)

    def __len__(self):
        return len(self.points)

    def metadata(self):
        return {
            "count": len(self.points),
            "seed": self.seed,
            "chainCount": self.chainCount,
            "burnIn": self.burnIn,
            "acceptanceRate": self.acceptanceRate,
            "essEstimate": [float(v) for v in self.essEstimate],
            "flags": list(self.flags),
        }


def _autocorr(x):
    """Normalised autocorrelation of a 1D series via FFT."""
    m = len(x)
    y = x - x.mean()
    size = 1 << (2 * m - 1).bit_length()
    f = np.fft.rfft(y, size)
    ac = np.fft.irfft(f * np.conj(f), size)[:m]
    return ac / ac[0] if ac[0] > 0 else np.zeros(m)


def effective_sample_size(chains):
    """Geyer initial-positive-sequence ESS summed over chains.

    ``chains`` has shape ``(chains, draws)``; the result is clipped to the total count.
    """
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    total = 0.0
    for x in chains:
        m = len(x)
        if m < 4 or np.var(x) == 0:
            total += m
            continue
        rho = _autocorr(x)
        tau = -1.0
        for k in range(0, m - 1, 2):
            pair = rho[k] + rho[k + 1]
            if pair <= 0:
                break
            tau += 2 * pair
        total += m / max(tau, 1e-12)
    return float(min(total, chains.size))


def _initial_scales(spec):
    s = spec.radius_scale
    w = np.asarray(spec.group.weights, dtype=float)
    return s ** w * 2.38 / math.sqrt(spec.group.n)


def mcmc_sample(spec: MeasureSpec, count: int, chain_count: int = 4, seed: int = 0,
                adapt_every: int = 100) -> SampleBatch:
    """Random-walk Metropolis; all chains advance together, each with its own stream."""
    if count < 1:
        raise InvalidArgument("count must be >= 1")
    if chain_count < 1:
        raise InvalidArgument("chain_count must be >= 1")
    n = spec.group.n
    per = -(-count // chain_count)
    burn = max(1, int(round(0.2 * per)))
    steps = burn + per
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(chain_count)]
    normals = np.stack([r.standard_normal((steps, n)) for r in rngs], axis=1)
    uniforms = np.stack([r.random(steps) for r in rngs], axis=1)

    base = _initial_scales(spec)
    scales = np.tile(base, (chain_count, 1))
    factor = np.ones(chain_count)
    x = np.zeros((chain_count, n))
    lp = log_density_unnormalized(spec, x)
    out = np.empty((per, chain_count, n))
    window_acc = np.zeros(chain_count)
    kept_acc = np.zeros(chain_count)
    # running moments for adaptation
    s1 = np.zeros((chain_count, n))
    s2 = np.zeros((chain_count, n))

    for t in range(steps):
        prop = x + factor[:, None] * scales * normals[t]
        lq = log_density_unnormalized(spec, prop)
        if not np.all(np.isfinite(lq)):
            bad = prop[~np.isfinite(lq)][0]
            raise NumericFailure("non-finite log density", bad.tolist())
        acc = metropolis_accept(lp, lq, uniforms[t])
        x = np.where(acc[:, None], prop, x)
        lp = np.where(acc, lq, lp)
        if t < burn:
            window_acc += acc
            s1 += x
            s2 += x * x
            if (t + 1) % adapt_every == 0:
                rate = window_acc / adapt_every
                factor *= np.exp(rate - TARGET_ACCEPT)
                window_acc[:] = 0
                k = t + 1
                if k >= 2 * adapt_every:
                    sd = np.sqrt(np.maximum(s2 / k - (s1 / k) ** 2, 0))
                    ok = sd > 0
                    new = sd * 2.38 / math.sqrt(n)
                    scales = np.where(ok, new, scales)
        else:
            kept_acc += acc
            out[t - burn] = x

    draws = np.transpose(out, (1, 0, 2))  # chain, draw, coord
    ess = np.array([effective_sample_size(draws[:, :, k]) for k in range(n)])
    points = draws.reshape(-1, n)[:count]
    rate = float(kept_acc.sum() / (per * chain_count))
    flags = spec.flags()
    if not ACCEPT_BAND[0] <= rate <= ACCEPT_BAND[1]:
        flags.append(f"acceptance rate {rate:.3f} outside [{ACCEPT_BAND[0]}, {ACCEPT_BAND[1]}]")
    return SampleBatch(
        points=points,
        seed=seed,
        chainCount=chain_count,
        burnIn=burn,
        acceptanceRate=rate,
        essEstimate=ess,
        proposalScales=factor[:, None] * scales,
        flags=flags,
    )


def estimate_normalization(spec: MeasureSpec, count=100_000, seed=0, scales=None):
    """Importance-sampling estimate of ``Z`` with a Student-t proposal.

    Returns ``(Z, relative standard error)``; reporting only, never used for sampling.
    """
    n = spec.group.n
    rng = np.random.default_rng(seed)
    sc = np.asarray(scales if scales is not None else _initial_scales(spec) * math.sqrt(n) / 2.38 * 1.5)
    dof = 3.0
    z = rng.standard_t(dof, size=(count, n))
    x = z * sc
    from scipy.stats import t as student

    logq = student.logpdf(z, dof).sum(axis=1) - np.log(sc).sum()
    lw = log_density_unnormalized(spec, x) - logq
    m = lw.max()
    w = np.exp(lw - m)
    Z = w.mean() * math.exp(m)
    rel = w.std(ddof=1) / (w.mean() * math.sqrt(count))
    return float(Z), float(rel)


@dataclass
class PerturbationVerdict:
    holds: bool
    worstMargin: float
    worstPoint: Optional[list]
    growthConstant: float  # empirical sup W / N
    q: float


def check_perturbation(spec: MeasureSpec, gamma: int, j0: int, delta: float, gamma_delta: float,
                       points) -> PerturbationVerdict:
    """Pointwise ``|grad_G W|^q <= delta N^(p-2 gamma) |x_j0|^(2 gamma) + gamma_delta`` on the batch."""
    pts = np.asarray(points.points if isinstance(points, SampleBatch) else points, dtype=float)
    q = spec.q
    W = spec.perturbation
    nv = spec.norm_field.value(pts)
    rhs = delta * nv ** (spec.p - 2 * gamma) * np.abs(pts[:, j0]) ** (2 * gamma) + gamma_delta
    if W is None:
        lhs = np.zeros(len(pts))
        growth = 0.0
    else:
        lhs = gradient_length(spec.group, W, pts) ** q
        pos = nv > 0
        growth = float(np.max(W.value(pts[pos]) / nv[pos])) if pos.any() else 0.0
    margin = rhs - lhs
    i = int(np.argmin(margin)) if len(margin) else None
    worst = float(margin[i]) if i is not None else 0.0
    return PerturbationVerdict(
        holds=bool(worst >= 0),
        worstMargin=worst,
        worstPoint=None if i is None else pts[i].tolist(),
        growthConstant=growth,
        q=q,
    )
