import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from configlab.counting import count_rectangle, make_relative_weights
from configlab.errors import (BudgetExhausted, ResolutionError, ScaleError, ScalesExhausted,
                              UsageError)
from configlab.grid import (Box, Full, GridFunction, RandomSet, Union, balanced_part,
                            make_grid_function, product_function)
from configlab.increment import (CountCertificate, IncrementWitness, PipelineConfig,
                                 dichotomy_step, energy, extract_witness, initial_partition,
                                 inverse_search, j_alpha, refine_nonuniform, regularize,
                                 run_pipeline)

SCALES = [1.0, 0.25, 1 / 16, 1 / 64]
HALF = Box((0.0, 0.0), (0.5, 1.0))
BLOCKS = Union((Box((0, 0), (0.25, 0.25)), Box((0.5, 0), (1, 0.5)),
                Box((0, 0.625), (0.375, 1)), Box((0.75, 0.75), (0.875, 0.875))))


def closed_form(lam):
    return 1 - 4 * lam / np.pi + lam**2 / np.pi


def grid(spec, n=256, d=2):
    return make_grid_function(spec, d, n)


def product_indicator(values, split=2):
    return GridFunction(values, split=split, kind="indicator")


def quadrant_set(n=16):
    A = np.zeros((n,) * 4)
    A[: n // 2, : n // 2, : n // 2, : n // 2] = 1.0
    return product_indicator(A)


def test_energy_single_cell():
    B1, B2 = grid(HALF), grid(RandomSet(0.3, 1 / 64, 1))
    part = initial_partition(B1, B2, SCALES, 0.2)
    b1, b2 = B1.integral(), B2.integral()
    assert abs(part.energy_value - 0.5 * (b1**2 + b2**2)) < 1e-12
    assert abs(energy(B1, B2, part) - part.energy_value) < 1e-12


def test_energy_full_cubes_is_one():
    one = grid(Full())
    part = regularize(one, one, SCALES, 0.2)
    assert abs(energy(one, one, part) - 1.0) < 1e-12


def test_refine_without_nonuniform_cells_is_identity():
    one = grid(Full())
    part = initial_partition(one, one, SCALES, 0.2)
    assert part.mass("N") == 0.0
    out = refine_nonuniform(part, one, one, 0.2)
    assert [c.to_dict() for c in out.cells] == [c.to_dict() for c in part.cells]
    assert out.energy_value == part.energy_value


def test_refine_left_half():
    B1, one = grid(HALF), grid(Full())
    part = initial_partition(B1, one, SCALES, 0.2)
    (root,) = part.cells
    assert root.kind == "N" and root.defects[0] > 0.2
    out = refine_nonuniform(part, B1, one, 0.2)
    (split,) = out.rounds[-1]["splits"]
    assert split["identity_residual"] <= 1e-12
    assert split["capture"] >= 0.2**2 / 4
    assert split["gain"] >= 0.2**4 / 128 * root.volume
    assert out.energy_value >= part.energy_value + 0.2**4 / 128 * root.volume - 1e-12
    assert abs(energy(B1, one, out) - out.energy_value) < 1e-12


def test_refinement_identity_direct():
    B1, one = grid(HALF), grid(Full())
    part = initial_partition(B1, one, SCALES, 0.2)
    out = refine_nonuniform(part, B1, one, 0.2)
    # energy increase equals half the density variance over the children
    (root,) = part.cells
    var = sum(((c.delta1 - root.delta1) ** 2 + (c.delta2 - root.delta2) ** 2) * c.volume
              for c in out.cells)
    assert abs(out.energy_value - part.energy_value - 0.5 * var) <= 1e-12


def test_non_lacunary_scales_rejected():
    one = grid(Full())
    with pytest.raises(ScaleError, match="L_"):
        regularize(one, one, [1.0, 0.25, 1 / 16, 1 / 32], 0.2)


def test_strict_ratio_is_enforced():
    B1, one = grid(HALF), grid(Full())
    part = initial_partition(B1, one, SCALES, 0.2)
    with pytest.raises(ScaleError):
        refine_nonuniform(part, B1, one, 0.2, strict=True)
    assert refine_nonuniform(part, B1, one, 0.2).rounds[-1]["ratio_ok"] is False


def test_random_sets_terminate_early():
    B1, B2 = grid(RandomSet(0.5, 1 / 64, 1)), grid(RandomSet(0.5, 1 / 64, 2))
    part = regularize(B1, B2, SCALES, 0.25)
    assert part.status == "terminated" and part.level <= 2


def test_density_blocks_audit():
    B1, one = grid(BLOCKS), grid(Full())
    part = regularize(B1, one, SCALES, 0.2)
    assert part.status == "terminated"
    assert part.mass("N") <= 0.2 / 2
    assert all(max(c.defects) <= 0.2 for c in part.cells if c.kind == "U")
    trace = part.energy_trace
    assert all(b >= a - 1e-15 for a, b in zip(trace, trace[1:]))
    assert trace[-1] <= 1.0
    for r in part.rounds:
        for s in r["splits"]:
            assert s["rect_mass"] <= s["rect_bound"] + 1e-15


def test_scales_exhausted_carries_trace():
    B1, one = grid(HALF), grid(Full())
    with pytest.raises(ScalesExhausted) as info:
        regularize(B1, one, [1.0, 0.25], 0.2)
    assert info.value.trace is not None


def test_inverse_search_zero():
    one = make_grid_function(Full(), 2, 16)
    z = GridFunction(np.zeros((16,) * 4), split=2)
    assert inverse_search(z, one, one, 0.25) is None


def test_inverse_search_quadrant_window_scan():
    A = quadrant_set()
    one = make_grid_function(Full(), 2, 16)
    f = balanced_part(A)
    w = inverse_search(f, one, one, 0.25, alpha=A.integral())
    assert isinstance(w, IncrementWitness)
    eta = w.info["box_norm"]
    assert w.delta >= 2.0**-16 * eta**8
    # exhaustive scan over all whole-cell windows of side 4
    n, ell = 16, 4
    best = max(f.values[a:a + ell, b:b + ell, c:c + ell, e:e + ell].mean()
               for a in range(n - ell + 1) for b in range(n - ell + 1)
               for c in range(n - ell + 1) for e in range(n - ell + 1))
    assert w.delta <= best + 1e-12


@settings(max_examples=3, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_inverse_search_sign_split_identity(seed):
    n = 16
    one = make_grid_function(Full(), 2, n)
    noise = make_grid_function(RandomSet(0.5, 1 / 8, seed % 10**6), 4, n).values
    A = product_indicator(np.maximum(quadrant_set(n).values, noise * (seed % 2)))
    f = balanced_part(A)
    w = inverse_search(f, one, one, 0.25, allow_window=False)
    assert w is not None and w.route == "level-sets"
    I = w.split_integrals
    assert abs(sum(I.values()) - w.info["I_window"]) <= 1e-12
    assert w.identity_residual <= 1e-12
    # the window total is the plain mean of f over the chosen window
    (p1, ell), (p2, _) = w.q1, w.q2
    box = tuple(slice(a, a + ell) for a in tuple(p1) + tuple(p2))
    assert abs(w.info["I_window"] - f.values[box].mean()) <= 1e-12


def test_inverse_search_rejects_unbalanced():
    one = make_grid_function(Full(), 2, 16)
    with pytest.raises(UsageError):
        inverse_search(quadrant_set(), one, one, 0.25)


def test_dichotomy_full_set_certificate():
    one = make_grid_function(Full(), 2, 32)
    A = product_indicator(np.ones((32,) * 4))
    out = dichotomy_step(A, one, one, 0.25, 1.0)
    assert isinstance(out, CountCertificate)
    assert abs(out.value - closed_form(0.25) ** 2) < 1e-9
    assert out.value >= 0.5 - 4 * 0.25 / np.pi * 0.5


def test_dichotomy_random_set_unresolvable_at_quarter_scales():
    one = make_grid_function(Full(), 2, 64)
    A = product_indicator(make_grid_function(RandomSet(0.5, 1 / 16, 3), 4, 64).values)
    with pytest.raises(ResolutionError):
        dichotomy_step(A, one, one, 0.25, 0.25)


def test_dichotomy_quadrant_witness():
    one = make_grid_function(Full(), 2, 16)
    A = quadrant_set()
    out = dichotomy_step(A, one, one, 0.25, 1.0)
    assert isinstance(out, IncrementWitness)
    assert out.density > out.alpha


def test_j_alpha():
    assert j_alpha(1.0, 2.0**-40) == 1
    assert j_alpha(0.5, 1.0) == 1 + math.ceil(0.5 / 0.5**32)


def test_pipeline_full_cube_certificate():
    A = product_indicator(np.ones((32,) * 4))
    rep = run_pipeline(A, [0.25], 1.0, PipelineConfig(eps=1.0))
    assert rep.status == "certificate"
    assert len(rep.log) == 1
    assert rep.quadruple["found"]


def test_pipeline_two_blocks_monotone_trace():
    n = 32
    A = np.zeros((n,) * 4)
    A[:16, :16, :16, :16] = 1.0
    A[16:24, 16:24, 16:24, 16:24] = 1.0
    rep = run_pipeline(product_indicator(A), [0.25, 0.25, 0.25], 1.0, PipelineConfig(eps=1.0))
    assert rep.status == "certificate"
    branches = [e["branch"] for e in rep.log]
    assert "witness" in branches[:-1] and branches[-1] == "certificate"
    assert all(b > a for a, b in zip(rep.alpha_trace, rep.alpha_trace[1:]))
    assert rep.alpha_trace[-1] <= 1.0


def test_extract_full_cube_fast():
    A = product_indicator(np.ones((16,) * 4))
    q = extract_witness(A, 0.25, 1.0, budget=10, seed=0)
    assert q["found"] and q["draws"] <= 10


def random_product(seed=1):
    a = product_function(make_grid_function(RandomSet(0.5, 1 / 8, seed), 2, 16),
                         make_grid_function(RandomSet(0.5, 1 / 8, seed + 1), 2, 16))
    return product_indicator(a.values)


def test_extract_random_within_expectation():
    A = random_product()
    v = count_rectangle(A, A, A, A, 0.25, 1.0).value
    draws = [extract_witness(A, 0.25, 1.0, seed=s)["draws"] for s in range(10)]
    assert np.mean(draws) <= 3 / v


def test_extract_success_rate_matches_count():
    A = random_product()
    v = count_rectangle(A, A, A, A, 0.25, 1.0).value
    draws = [extract_witness(A, 0.25, 1.0, seed=s)["draws"] for s in range(20)]
    rate = len(draws) / sum(draws)
    # 20 geometric waiting times: the rate estimate has relative sd near 0.22
    assert 0.4 * v <= rate <= 2.5 * v


def test_extract_budget_exhausted():
    A = product_indicator(np.zeros((16,) * 4))
    with pytest.raises(BudgetExhausted):
        extract_witness(A, 0.25, 1.0, budget=100)


def test_unaligned_box_hits_resolution_floor():
    # the edge needs cubes finer than eight cells per axis at n = 256
    B1, one = grid(Box((0.1, 0.2), (0.6, 0.9))), grid(Full())
    with pytest.raises(ResolutionError):
        regularize(B1, one, SCALES, 0.2)


@settings(max_examples=6, deadline=None)
@given(st.sampled_from([0.3, 0.2]), st.integers(0, 2))
def test_regularize_round_cap(eta, which):
    specs = [HALF, BLOCKS, RandomSet(0.5, 1 / 16, which)]
    B1, one = grid(specs[which]), grid(Full())
    part = regularize(B1, one, SCALES, eta)
    if part.status == "terminated":
        assert len(part.rounds) <= 256 * eta**-5
    for r in part.rounds:
        assert r["energy_after"] >= r["energy_before"] - 1e-15
        assert r["max_identity_residual"] <= 1e-12
