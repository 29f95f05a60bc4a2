"""Acceptance criteria, each checked at its stated tolerance.

Every test records one PASS/FAIL line; the lines are collected in the
"acceptance criteria" section of the pytest summary.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from carnot_gap.catalog import catalog_pairs, get_entry, list_entries
from carnot_gap.diffops import gradient_length, sub_laplacian
from carnot_gap.groups import compose_exact, dilate, dilate_exact
from carnot_gap.measure import MeasureSpec, mcmc_sample
from carnot_gap.quasinorms import PowerSum, norm_as_scalar_field
from carnot_gap.spectral import (
    build_dictionary,
    empirical_poincare_ratio,
    grid_gap_oracle,
    neumann_self_test,
    ritz_gap_estimate,
)
from carnot_gap.verifier import (
    check_pure_generator_identity,
    estimate_condition_constant,
    fit_u_bound_constants,
    ubound_function_sets,
)

E1 = get_entry("euclidean-1d")
H1 = get_entry("heisenberg-h1")


def gaussian(a, p=2.0):
    return MeasureSpec(E1.group, E1.norm(), a=a, p=p)


def test_criterion_01_gaussian_gap(record_criterion):
    t0 = time.perf_counter()
    spec = gaussian(0.5)
    grid = grid_gap_oracle(spec, box=8.0, points_per_axis=2001).lambda1
    batch = mcmc_sample(spec, 100_000, seed=0)
    ritz = ritz_gap_estimate(spec, build_dictionary(spec, 3), batch).lambda1
    elapsed = time.perf_counter() - t0
    lam = {a: grid_gap_oracle(gaussian(a), points_per_axis=2001).lambda1 for a in (0.5, 1.0, 2.0)}
    ratios = [lam[a] / lam[b] / (a / b) for a, b in ((0.5, 1.0), (1.0, 2.0), (0.5, 2.0))]
    ok = (abs(grid - 1) < 0.05 and abs(ritz - 1) < 0.05 and elapsed < 10
          and all(abs(r - 1) < 0.05 for r in ratios))
    record_criterion(1, "Gaussian gap oracle and scale law", ok,
                     f"grid {grid:.5f}, ritz {ritz:.5f}, {elapsed:.1f}s, scale ratios {np.round(ratios, 5).tolist()}")
    assert ok


def test_criterion_02_neumann(record_criterion):
    lam = neumann_self_test().lambda1
    ok = abs(lam / math.pi**2 - 1) < 0.01
    record_criterion(2, "Neumann self-test", ok, f"lambda1 {lam:.6f} vs pi^2 {math.pi**2:.6f}")
    assert ok


def test_criterion_03_kaplan_identity(record_criterion):
    f = norm_as_scalar_field(H1.norm("kaplan"), H1.group)
    x = np.random.default_rng(0).standard_normal((10_000, 3)) * [1, 1, 2]
    expected = np.linalg.norm(x[:, :2], axis=1) / f.value(x)
    err = float(np.max(np.abs(gradient_length(H1.group, f, x) - expected) / expected))
    ok = err < 1e-9
    record_criterion(3, "Kaplan gradient identity", ok, f"max relative error {err:.2e}")
    assert ok


def test_criterion_04_condition_verdicts(record_criterion):
    cases = [("euclidean-1d", E1.norm(), 2), ("heisenberg-h1", H1.norm("kaplan"), 4),
             ("engel", PowerSum.for_group(get_entry("engel").group, 12), 12)]
    details, ok = [], True
    for name, norm, gamma in cases:
        group = get_entry(name).group
        vals = []
        for seed in (0, 1):
            t0 = time.perf_counter()
            r = estimate_condition_constant(group, norm, 0, gamma, budget=100_000, seed=seed)
            dt = time.perf_counter() - t0
            vals.append(r.infimumEstimate)
            ok &= r.verdict == "holds" and 0.95 <= r.infimumEstimate <= 1.05 and dt < 30
        ok &= f"{vals[0]:.3g}" == f"{vals[1]:.3g}"
        details.append(f"{name} {vals[0]:.6f}/{vals[1]:.6f}")
    record_criterion(4, "condition verdicts", ok, "; ".join(details))
    assert ok


def test_criterion_05_pure_generator_identity(record_criterion):
    devs = {}
    for name in ("engel", "kolmogorov-type"):
        e = get_entry(name)
        for preset_name, spec in e.norm_presets.items():
            v = check_pure_generator_identity(e.group, spec, e.pure_generator_index)
            devs[f"{name}/{preset_name}"] = v.maxDeviation
    worst = max(devs.values())
    ok = worst < 1e-10
    record_criterion(5, "pure generator identity", ok, f"max deviation {worst:.2e} over {len(devs)} norms")
    assert ok


def _random_rational(rng):
    return Fraction(int(rng.integers(-50, 51)), int(rng.integers(1, 20)))


def test_criterion_06_structural_exactness(record_criterion):
    rng = np.random.default_rng(0)
    entries = [e for e in list_entries(True) if e.group.step2_matrices is not None]
    count, ok = 10_000, True
    for e in entries:
        g = e.group
        n, n1 = g.n, g.n1
        for _ in range(count):
            x = [_random_rational(rng) for _ in range(n)]
            y = [_random_rational(rng) for _ in range(n)]
            z = [_random_rational(rng) for _ in range(n)]
            lam = Fraction(int(rng.integers(1, 30)), int(rng.integers(1, 30)))
            for B in g.step2_matrices:
                if sum(B[i][j] * x[i] * x[j] for i in range(n1) for j in range(n1)) != 0:
                    ok = False
            if dilate_exact(g, lam, compose_exact(g, x, y)) != compose_exact(
                    g, dilate_exact(g, lam, x), dilate_exact(g, lam, y)):
                ok = False
            if compose_exact(g, compose_exact(g, x, y), z) != compose_exact(g, x, compose_exact(g, y, z)):
                ok = False
    record_criterion(6, "structural exactness", ok,
                     f"{count} rational triples on {', '.join(e.name for e in entries)}")
    assert ok


def test_criterion_07_homogeneity(record_criterion):
    rng = np.random.default_rng(1)
    worst = {"norm": 0.0, "grad": 0.0, "lap": 0.0, "lap_plain": 0.0}
    for entry, name in catalog_pairs(experimental=True):
        g = entry.group
        f = norm_as_scalar_field(entry.norm(name), g)
        x = rng.standard_normal((10_000, g.n))
        lam = rng.uniform(0.1, 10, 10_000)
        y = dilate(g, lam, x)
        N, Ny = f.value(x), f.value(y)
        worst["norm"] = max(worst["norm"], float(np.max(np.abs(Ny - lam * N) / (lam * N))))
        G, Gy = gradient_length(g, f, x), gradient_length(g, f, y)
        worst["grad"] = max(worst["grad"], float(np.max(np.abs(Gy - G) / G)))
        L, Ly = sub_laplacian(g, f, x), sub_laplacian(g, f, y)
        dev = np.abs(lam * Ly - L)
        # Delta N may vanish identically (R^1) or cross zero; measure against its natural size 1/N
        worst["lap"] = max(worst["lap"], float(np.max(dev / np.maximum(np.abs(L), 1 / N))))
        nz = np.abs(L) > 1e-3 / N
        if nz.any():
            worst["lap_plain"] = max(worst["lap_plain"], float(np.max(dev[nz] / np.abs(L[nz]))))
    ok = worst["norm"] < 1e-10 and worst["grad"] < 1e-8 and worst["lap"] < 1e-8
    record_criterion(7, "homogeneity suite", ok,
                     f"norm {worst['norm']:.1e}, grad {worst['grad']:.1e}, laplacian {worst['lap']:.1e} "
                     f"(plain relative where |lap N| > 1e-3/N: {worst['lap_plain']:.1e})")
    assert ok


def test_criterion_08_ubound(record_criterion):
    spec = MeasureSpec(H1.group, H1.norm("kaplan"), a=1.0, p=8.0)
    fits = []
    for seed in (0, 1):
        batch = mcmc_sample(spec, 200_000, seed=seed)
        train, hold = ubound_function_sets(spec.group, 2, 200, 200, seed=seed)
        fits.append(fit_u_bound_constants(spec.group, spec.norm, 0, 4, 8.0, 8 / 7, train, hold,
                                          batch.points, seed=seed))
    ok = all(f.A > 0 and f.B >= 0 and f.trainSize == 200 and f.holdoutSize == 200
             and f.worstHoldoutMargin >= -1e-8 * f.termScale for f in fits)
    dA = abs(fits[0].A - fits[1].A) / max(fits[0].A, fits[1].A)
    dB = abs(fits[0].B - fits[1].B) / max(fits[0].B, fits[1].B)
    ok = ok and dA < 0.15 and dB < 0.15
    record_criterion(8, "U-bound fit", ok,
                     "; ".join(f"A {f.A:.4f} B {f.B:.4f} margin/scale {f.worstHoldoutMargin / f.termScale:.2e}"
                               for f in fits) + f"; spread A {dA:.1%} B {dB:.1%}")
    assert ok


def test_criterion_09_ratio_duality(record_criterion):
    details, ok = [], True
    for a, p in ((0.5, 2.0), (1.0, 2.0), (2.0, 2.0), (1.0, 4.0)):
        spec = gaussian(a, p)
        batch = mcmc_sample(spec, 100_000, seed=0)
        r = empirical_poincare_ratio(spec, 2.0, build_dictionary(spec, 4), batch, theorem_mode=False).ratio
        lam = grid_gap_oracle(spec, points_per_axis=2001).lambda1
        ok &= r <= 1.05 / lam
        details.append(f"a={a} p={p:g}: {r:.4f} vs {1 / lam:.4f}")
    record_criterion(9, "ratio/gap duality", ok, "; ".join(details))
    assert ok


@pytest.mark.slow
def test_criterion_10_cross_method(record_criterion):
    spec = MeasureSpec(H1.group, H1.norm("kaplan"), a=1.0, p=8.0)
    t0 = time.perf_counter()
    grid = grid_gap_oracle(spec, points_per_axis=101)
    t_grid = time.perf_counter() - t0
    batch = mcmc_sample(spec, 100_000, seed=0)
    ritz = ritz_gap_estimate(spec, build_dictionary(spec, 6), batch)
    rel = abs(ritz.lambda1 - grid.lambda1) / grid.lambda1
    ok = rel < 0.15 and t_grid < 300
    record_criterion(10, "Ritz vs grid on heisenberg-h1", ok,
                     f"grid {grid.lambda1:.4f} ({t_grid:.0f}s, {grid.diagnostics['solver']}), "
                     f"ritz {ritz.lambda1:.4f} +- {ritz.mcStderr:.4f}, difference {rel:.1%}")
    assert ok
