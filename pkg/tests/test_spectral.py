import math

import numpy as np
import pytest

from carnot_gap.catalog import get_entry
from carnot_gap.errors import DictionaryDegenerate, InvalidArgument
from carnot_gap.fields import PolyField
from carnot_gap.measure import MeasureSpec, mcmc_sample
from carnot_gap.polynomial import SparsePoly
from carnot_gap.spectral import (
    BoxTooSmall,
    Dictionary,
    build_dictionary,
    default_box,
    empirical_poincare_ratio,
    grid_gap_oracle,
    neumann_self_test,
    ritz_gap_estimate,
    weighted_exponents,
)

E1 = get_entry("euclidean-1d")
H1 = get_entry("heisenberg-h1")


def gaussian(a):
    return MeasureSpec(E1.group, E1.norm(), a=a, p=2.0)


@pytest.fixture(scope="module")
def batches():
    return {a: mcmc_sample(gaussian(a), 100_000, seed=0) for a in (0.5, 1.0)}


def test_weighted_exponents():
    assert weighted_exponents((1,), 3) == [(1,), (2,), (3,)]
    ex = weighted_exponents((1, 1, 2), 2)
    assert ex == [(1, 0, 0), (0, 1, 0), (2, 0, 0), (1, 1, 0), (0, 2, 0), (0, 0, 1)]
    assert (0, 0, 0) not in weighted_exponents((1, 1, 2), 6)


def test_ritz_single_function(batches):
    spec = gaussian(0.5)
    est = ritz_gap_estimate(spec, build_dictionary(spec, 1), batches[0.5])
    x = batches[0.5].points[:, 0]
    # with f = x the Rayleigh quotient is 1 / Var(x)
    assert est.lambda1 == pytest.approx(1 / x.var(), rel=1e-12)
    assert est.lambda1 == pytest.approx(1.0, abs=0.02)


@pytest.mark.parametrize("a,target,tol", [(0.5, 1.0, 0.02), (1.0, 2.0, 0.05)])
def test_ritz_gaussian(batches, a, target, tol):
    spec = gaussian(a)
    est = ritz_gap_estimate(spec, build_dictionary(spec, 3), batches[a])
    assert est.method == "ritz" and est.sizeParams["dictionarySize"] == 3
    assert est.lambda1 == pytest.approx(target, abs=tol)
    assert 0 < est.mcStderr < 0.05


def test_grid_gaussian():
    est = grid_gap_oracle(gaussian(0.5), box=8.0, points_per_axis=2001)
    assert est.lambda1 == pytest.approx(1.0, rel=0.005)
    # deflation: the constant mode sits at zero
    assert abs(est.diagnostics["lambda0"]) < 1e-10
    assert est.diagnostics["nullResidual"] < 1e-8


@pytest.mark.parametrize("a,b", [(0.5, 1.0), (1.0, 2.0)])
def test_grid_scale_law(a, b):
    la = grid_gap_oracle(gaussian(a), points_per_axis=2001).lambda1
    lb = grid_gap_oracle(gaussian(b), points_per_axis=2001).lambda1
    assert la / lb == pytest.approx(a / b, rel=0.05)


def test_neumann_self_test():
    est = neumann_self_test()
    assert est.lambda1 == pytest.approx(math.pi**2, rel=0.01)


def test_box_too_small_suggests_larger():
    with pytest.raises(BoxTooSmall) as info:
        grid_gap_oracle(gaussian(0.5), box=3.0, points_per_axis=201)
    assert info.value.suggested[0] > 3.0
    grid_gap_oracle(gaussian(0.5), box=info.value.suggested, points_per_axis=201)


def test_grid_preconditions():
    e = get_entry("engel")
    with pytest.raises(InvalidArgument):
        grid_gap_oracle(MeasureSpec(e.group, e.norm("powersum-default"), p=24.0))
    with pytest.raises(InvalidArgument):
        grid_gap_oracle(gaussian(0.5), points_per_axis=100)


def test_default_box_scales_with_weights():
    spec = MeasureSpec(H1.group, H1.norm("kaplan"), a=1.0, p=8.0)
    box = default_box(spec)
    R = (math.log(1e12)) ** (1 / 8)
    # sup |x_i| = 1 and sup |t| = 1/4 on the Kaplan sphere
    assert box[0] == pytest.approx(R * 1.02, rel=1e-3)
    assert box[2] == pytest.approx(R**2 * 0.25 * 1.02, rel=1e-3)


def test_ritz_monotone_in_dictionary():
    spec = MeasureSpec(H1.group, H1.norm("kaplan"), a=1.0, p=8.0)
    batch = mcmc_sample(spec, 40_000, seed=1)
    prev = None
    for d in (2, 4, 6):
        est = ritz_gap_estimate(spec, build_dictionary(spec, d), batch, bootstrap=5)
        if prev is not None:
            assert est.lambda1 <= prev.lambda1 + 2 * max(est.mcStderr, prev.mcStderr)
        prev = est


def test_ritz_degenerate_dictionary():
    spec = gaussian(0.5)
    with pytest.raises(DictionaryDegenerate):
        ritz_gap_estimate(spec, build_dictionary(spec, 2), np.zeros((100, 1)))
    with pytest.raises(InvalidArgument):
        ritz_gap_estimate(spec, Dictionary([], 0), np.zeros((10, 1)))


def test_ritz_drops_duplicate_directions(batches):
    spec = gaussian(0.5)
    x = PolyField(SparsePoly.variable(1, 0))
    d = Dictionary([x, PolyField(SparsePoly.variable(1, 0) * 2)], 1)
    est = ritz_gap_estimate(spec, d, batches[0.5], bootstrap=2)
    assert est.diagnostics["removedDirections"] == 1


def test_poincare_ratio_linear(batches):
    spec = gaussian(0.5)
    r = empirical_poincare_ratio(spec, 2.0, build_dictionary(spec, 1), batches[0.5], combos_factor=0)
    assert r.ratio == pytest.approx(batches[0.5].points.var(), rel=1e-12)
    assert r.ratio == pytest.approx(1.0, abs=0.02)


def test_poincare_ratio_scale_invariant(batches):
    spec = gaussian(0.5)
    x = SparsePoly.variable(1, 0)
    f = x**3 - x
    r1 = empirical_poincare_ratio(spec, 2.0, Dictionary([PolyField(f)], 3), batches[0.5], combos_factor=0)
    r2 = empirical_poincare_ratio(spec, 2.0, Dictionary([PolyField(f * 7)], 3), batches[0.5], combos_factor=0)
    assert r1.ratio == pytest.approx(r2.ratio, rel=1e-12)


@pytest.mark.parametrize("a", [0.5, 1.0])
def test_ratio_gap_duality(batches, a):
    spec = gaussian(a)
    dic = build_dictionary(spec, 4)
    r = empirical_poincare_ratio(spec, 2.0, dic, batches[a])
    grid = grid_gap_oracle(spec, points_per_axis=2001).lambda1
    ritz = ritz_gap_estimate(spec, dic, batches[a])
    assert r.ratio <= 1 / ritz.lambda1 * (1 + 1e-9)
    assert r.ratio <= 1 / grid * (1 + 3 * ritz.mcStderr / ritz.lambda1)


def test_poincare_ratio_modes():
    spec = MeasureSpec(H1.group, H1.norm("kaplan"), a=1.0, p=8.0)
    batch = mcmc_sample(spec, 5_000, seed=0)
    dic = build_dictionary(spec, 2)
    with pytest.raises(InvalidArgument):
        empirical_poincare_ratio(spec, 2.0, dic, batch)
    r = empirical_poincare_ratio(spec, 2.0, dic, batch, theorem_mode=False)
    assert r.flags and np.isfinite(r.ratio)
    with pytest.raises(InvalidArgument):
        empirical_poincare_ratio(spec, 1.0, dic, batch, theorem_mode=False)


def test_poincare_ratio_heisenberg_two_seeds():
    spec = MeasureSpec(H1.group, H1.norm("kaplan"), a=1.0, p=8.0)
    dic = build_dictionary(spec, 4)
    vals = []
    for seed in (0, 1):
        batch = mcmc_sample(spec, 100_000, seed=seed)
        vals.append(empirical_poincare_ratio(spec, 8 / 7, dic, batch, seed=seed).ratio)
    assert all(np.isfinite(vals))
    assert abs(vals[0] - vals[1]) / max(vals) < 0.10
