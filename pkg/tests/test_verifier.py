from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from carnot_gap.catalog import get_entry, list_entries
from carnot_gap.errors import InvalidArgument, PreconditionFailed
from carnot_gap.groups import build_step2_group
from carnot_gap.lp import min_cover_two, solve_packing_lp
from carnot_gap.measure import MeasureSpec, mcmc_sample
from carnot_gap.quasinorms import PowerSum, Step2Alpha, norm_as_scalar_field, preset
from carnot_gap.verifier import (
    EPSILON_HOLD,
    check_pure_generator_identity,
    check_step2_proposition,
    estimate_condition_constant,
    fit_u_bound_constants,
    ubound_function_sets,
    ubound_terms,
)

H1 = get_entry("heisenberg-h1")
E1 = get_entry("euclidean-1d")
ENGEL = get_entry("engel")


def test_condition_examples():
    r = estimate_condition_constant(E1.group, E1.norm(), 0, 2, budget=2_000)
    assert r.infimumEstimate == 1.0 and r.verdict == "holds"
    r = estimate_condition_constant(H1.group, H1.norm("kaplan"), 0, 4, budget=20_000)
    assert r.infimumEstimate == pytest.approx(1.0, abs=1e-6)
    assert abs(r.argmin[2]) < 1e-3 and abs(abs(r.argmin[0]) - 1) < 1e-3
    e = estimate_condition_constant(ENGEL.group, PowerSum.for_group(ENGEL.group, 12), 0, 12, budget=20_000)
    assert e.infimumEstimate == pytest.approx(1.0, abs=1e-6)
    assert abs(abs(e.argmin[0]) - 1) < 1e-3


def test_condition_report_invariants_and_determinism():
    spec = H1.norm("kaplan")
    a = estimate_condition_constant(H1.group, spec, 0, 4, budget=5_000, seed=11)
    b = estimate_condition_constant(H1.group, spec, 0, 4, budget=5_000, seed=11)
    assert a.to_json() == b.to_json()
    assert a.sphereResidual <= 1e-10
    assert (a.verdict == "holds") == (a.infimumEstimate > EPSILON_HOLD)
    assert a.to_json()["j0"] == 1


def test_condition_threads_do_not_change_result():
    spec = H1.norm("kaplan")
    a = estimate_condition_constant(H1.group, spec, 1, 4, budget=20_000, seed=3, threads=1)
    b = estimate_condition_constant(H1.group, spec, 1, 4, budget=20_000, seed=3, threads=3)
    assert a.to_json() == b.to_json()


def test_verdict_thresholds():
    from carnot_gap.verifier import _verdict

    assert _verdict(None) == "inconclusive"
    assert _verdict(EPSILON_HOLD) == "fails"
    assert _verdict(2 * EPSILON_HOLD) == "holds"
    assert _verdict(0.0) == "fails"


def test_second_generator_on_engel_fails():
    # X2 = d2 + x1 d3 + x1^2/2 d4: near x1 = 0 its terms cancel and grad N degenerates
    r = estimate_condition_constant(ENGEL.group, PowerSum.for_group(ENGEL.group, 12), 1, 12, budget=20_000)
    assert r.verdict == "fails" and r.infimumEstimate < 1e-12
    assert abs(r.argmin[0]) < 0.05


def test_condition_bad_arguments():
    with pytest.raises(InvalidArgument):
        estimate_condition_constant(H1.group, H1.norm("kaplan"), 0, 1)
    with pytest.raises(InvalidArgument):
        estimate_condition_constant(H1.group, H1.norm("kaplan"), 2, 4)


def test_monotonicity_in_gamma():
    # on {N = 1} these norms have |x_1| <= 1, so the ratio grows with gamma
    for entry, spec in [(H1, H1.norm("kaplan")), (E1, E1.norm()),
                        (ENGEL, PowerSum.for_group(ENGEL.group, 12))]:
        prev = -np.inf
        for g in (2, 4, 6, 12):
            r = estimate_condition_constant(entry.group, spec, 0, g, budget=5_000, seed=2)
            assert r.infimumEstimate >= prev * (1 - 1e-6)
            prev = r.infimumEstimate


def test_pure_generator_identity_examples():
    v = check_pure_generator_identity(ENGEL.group, PowerSum.for_group(ENGEL.group, 12), 0)
    assert v.constant == 1.0 and v.maxDeviation < 1e-10 and v.passed
    v = check_pure_generator_identity(E1.group, E1.norm(), 0)
    assert v.constant == 1.0 and v.maxDeviation == 0.0
    with pytest.raises(PreconditionFailed, match=r"x2"):
        check_pure_generator_identity(H1.group, H1.norm("kaplan"), 0)


# values frozen from a closed-form oracle: on N^4 = |x|^4 + c t^2 in H^1 one has
# |grad N^4|^2 = 16|x|^6 + c^2 t^2 |x|^2, giving the ratio sqrt(1 + c^2 t^2 / (16 |x|^4)) >= 1
# with equality at t = 0; dense sampling of 10^6 sphere points gave 1.0000000000 for c = 16 and c = 1.
@pytest.mark.parametrize("c", [16, 1])
def test_step2_proposition_heisenberg(c):
    r = check_step2_proposition(H1.group, Step2Alpha(1, (c,)), budget=20_000)
    assert r.verdict == "holds"
    assert r.infimumEstimate == pytest.approx(1.0, abs=1e-6)


def test_step2_proposition_abelian():
    g = build_step2_group(2, [[[0, 0], [0, 0]]], "abelian")
    r = check_step2_proposition(g, Step2Alpha(1), budget=20_000)
    assert r.infimumEstimate == pytest.approx(1.0, abs=1e-12)


def test_step2_proposition_wrong_norm():
    with pytest.raises(InvalidArgument):
        check_step2_proposition(H1.group, PowerSum.for_group(H1.group))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20), st.integers(0, 20), st.integers(0, 20)), min_size=1, max_size=12))
def test_min_cover_matches_linprog(rows):
    rows = [r for r in rows if r[0] or r[1]]
    if not rows:
        return
    G, M, L = zip(*rows)
    A, B, val = min_cover_two(G, M, L)
    assert all(A * g + B * m >= l for g, m, l in rows)
    assert A >= 0 and B >= 0 and val == A + B
    ref = linprog([1, 1], A_ub=-np.array([G, M], dtype=float).T, b_ub=-np.array(L, dtype=float),
                  bounds=[(0, None)] * 2, method="highs")
    assert float(val) == pytest.approx(ref.fun, abs=1e-9)


def test_packing_lp_small():
    res = solve_packing_lp([3, 2], [[1, 1], [1, 3]], [4, 6])
    assert res.value == 12 and res.y == [4, 0]
    assert res.duals == [Fraction(3), Fraction(0)]


@pytest.fixture(scope="module")
def gaussian_batch():
    spec = MeasureSpec(E1.group, E1.norm(), a=1.0, p=4.0)
    return spec, mcmc_sample(spec, 20_000, seed=5)


def test_constant_function_forces_b(gaussian_batch):
    spec, batch = gaussian_batch
    train, hold = ubound_function_sets(spec.group, 3, 20, 20, seed=1)
    fit = fit_u_bound_constants(spec.group, spec.norm, 0, 2, 4.0, 4 / 3, train, hold, batch.points)
    L, G, M = ubound_terms(spec.group, spec.norm_field, 0, 2, 4.0, 4 / 3, train[:1], batch.points)[0]
    assert G == 0.0
    assert Fraction(fit.B_exact) * Fraction(M) >= Fraction(L)
    assert fit.A > 0 and fit.B >= 0 and fit.passed


def test_ubound_fit_rejects_bad_exponents(gaussian_batch):
    spec, batch = gaussian_batch
    train, hold = ubound_function_sets(spec.group, 2, 10, 5)
    with pytest.raises(InvalidArgument):
        fit_u_bound_constants(spec.group, spec.norm, 0, 4, 4.0, 4 / 3, train, hold, batch.points)
    with pytest.raises(InvalidArgument):
        fit_u_bound_constants(spec.group, spec.norm, 0, 2, 4.0, 1.5, train, hold, batch.points)


def test_ubound_gaussian_two_seeds():
    fits = []
    for seed in (0, 1):
        spec = MeasureSpec(E1.group, E1.norm(), a=0.5, p=4.0)
        batch = mcmc_sample(spec, 50_000, seed=seed)
        train, hold = ubound_function_sets(spec.group, 4, 200, 200, seed=seed)
        fit = fit_u_bound_constants(spec.group, spec.norm, 0, 2, 4.0, 4 / 3, train, hold, batch.points)
        assert fit.passed and np.isfinite(fit.A) and np.isfinite(fit.B)
        fits.append(fit)
    s = fits[0].A + fits[0].B
    assert abs(fits[1].A + fits[1].B - s) / s < 0.15


def test_function_sets_are_deterministic_and_distinct():
    a_tr, a_ho = ubound_function_sets(H1.group, 2, 30, 10, seed=4)
    b_tr, b_ho = ubound_function_sets(H1.group, 2, 30, 10, seed=4)
    assert [f.poly for f in a_tr] == [f.poly for f in b_tr]
    assert [f.poly for f in a_ho] == [f.poly for f in b_ho]
    assert not set(f.poly for f in a_ho) & set(f.poly for f in a_tr)
