import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from configlab import kernels

compiled = pytest.mark.skipif(kernels.BACKEND != "compiled", reason="extension not built")


def shifted_sum_oracle(slots, offsets):
    n = slots[0].shape
    total = 0.0
    for idx in np.ndindex(*n):
        prod = 1.0
        for s, o in zip(slots, offsets):
            j = np.add(idx, o)
            if np.any(j < 0) or np.any(j >= n):
                prod = 0.0
                break
            prod *= s[tuple(j)]
        total += prod
    return total


def test_fallback_matches_loop_oracle():
    rng = np.random.default_rng(0)
    slots = [rng.random((6, 6)) for _ in range(3)]
    offs = np.array([[0, 0], [1, -2], [-3, 1]])
    assert abs(kernels.shifted_product_sums(slots, offs, backend="python")
               - shifted_sum_oracle(slots, offs)) < 1e-12


@compiled
@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 3), st.integers(2, 4))
def test_backends_agree_on_shifted_sums(seed, d, m):
    rng = np.random.default_rng(seed)
    n = 5
    slots = [rng.uniform(-1, 1, (n,) * d) for _ in range(m)]
    offs = rng.integers(-n, n + 1, size=(7, m, d))
    a = kernels.shifted_product_sums(slots, offs, backend="python")
    b = kernels.shifted_product_sums(slots, offs, backend="compiled")
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


@compiled
@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 2))
def test_backends_agree_on_correlation(seed, d):
    rng = np.random.default_rng(seed)
    f, g = rng.random((6,) * d), rng.random((6,) * d)
    a = kernels.brute_correlation(f, g, backend="python")
    b = kernels.brute_correlation(f, g, backend="compiled")
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.brute_correlation(np.ones(3), np.ones(3), backend="gpu")
