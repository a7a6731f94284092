import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from uosrkit.errors import EmptyInput, LengthMismatch, ValidationError
from uosrkit.fusion import (
    FusionParams,
    RefStats,
    additive_fuse,
    fsknns_fuse,
    gate_weight,
    multiplicative_fuse,
    ref_stats,
    select_lambda,
)


@pytest.mark.parametrize("u,mean,std", [([1, 1, 1], 1, 0), ([0, 2], 1, 1), ([5], 5, 0)])
def test_ref_stats(u, mean, std):
    s = ref_stats(np.array(u, dtype=float))
    assert (s.mean, s.std, s.n) == (mean, std, len(u))


def test_ref_stats_empty():
    with pytest.raises(EmptyInput):
        ref_stats(np.array([]))


@pytest.mark.parametrize("mean,std,beta,expected", [(1, 0.2, 1, 0.8), (1.3, 0.7, 0, 1.3), (1, 2, -0.5, 2.0)])
def test_select_lambda(mean, std, beta, expected):
    assert select_lambda(RefStats(mean, std, 3), beta) == pytest.approx(expected, abs=1e-15)


def test_lambda_monotone_in_beta():
    s = RefStats(1.0, 0.3, 5)
    lams = [select_lambda(s, b) for b in (-0.5, 0, 0.5, 1, 1.5)]
    assert all(a > b for a, b in zip(lams, lams[1:]))


class TestFsknns:
    def test_at_threshold(self):
        out = fsknns_fuse([0.3], [0.7], FusionParams(lam=0.7)).scores[0]
        assert out == pytest.approx(0.3 + 0.5 * 0.7, abs=1e-15)

    def test_zero_u1(self):
        assert fsknns_fuse([0.2], [0.0], FusionParams(alpha=50, lam=0.5)).scores[0] == 0.2

    def test_scalar_oracle(self):
        expected = 0.2 + 1.0 / (1.0 + math.exp(-50 * (1.0 - 0.5))) * 1.0
        got = fsknns_fuse([0.2], [1.0], FusionParams(alpha=50, lam=0.5)).scores[0]
        assert got == pytest.approx(expected, abs=1e-15)
        assert got == pytest.approx(1.2, abs=1e-10)

    def test_limits(self):
        lam, alpha = 0.5, 50.0
        below = lam - 50 / alpha
        above = lam + 50 / alpha
        assert fsknns_fuse([0.3], [below], FusionParams(alpha=alpha, lam=lam)).scores[0] == pytest.approx(0.3, abs=1e-20)
        assert fsknns_fuse([0.3], [above], FusionParams(alpha=alpha, lam=lam)).scores[0] == pytest.approx(0.3 + above, abs=1e-20)

    def test_no_overflow(self):
        w = gate_weight(np.array([-1e3, 1e3]), 0.0, 10.0)
        assert np.array_equal(w, [0.0, 1.0])

    def test_requires_lambda(self):
        with pytest.raises(ValidationError):
            fsknns_fuse([0.1], [0.1], FusionParams())

    def test_alpha_positive(self):
        with pytest.raises(ValidationError):
            FusionParams(alpha=0)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            fsknns_fuse([0.1, 0.2], [0.1], FusionParams(lam=0))

    @given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-1, 3), st.floats(-1, 3))
    def test_monotone_in_u0(self, a, b, u1, lam):
        lo, hi = min(a, b), max(a, b)
        p = FusionParams(lam=lam)
        assert fsknns_fuse([lo], [u1], p).scores[0] <= fsknns_fuse([hi], [u1], p).scores[0]

    def test_low_u1_ordering_follows_u0(self, rng):
        # both u1 at least 5/alpha below lambda: order set by u0 up to sigmoid(-5) * max|u1| leakage
        alpha, lam = 50.0, 1.0
        u1 = rng.uniform(0, lam - 5 / alpha, size=500)
        u0 = rng.uniform(0, 1, size=500)
        fused = fsknns_fuse(u0, u1, FusionParams(alpha=alpha, lam=lam)).scores
        leak = 1 / (1 + math.exp(5)) * np.abs(u1).max()
        i, j = np.triu_indices(500, 1)
        clear = np.abs(u0[i] - u0[j]) > leak
        assert np.all(np.sign(fused[i] - fused[j])[clear] == np.sign(u0[i] - u0[j])[clear])


class TestBaselines:
    def test_additive(self):
        np.testing.assert_array_equal(additive_fuse([0.1, 0.5], [0.0, 0.0]).scores, [0.1, 0.5])
        assert additive_fuse([0.3], [0.4]).scores[0] == pytest.approx(0.7, abs=1e-15)
        a, b = np.array([0.1, 0.9]), np.array([0.4, 0.2])
        np.testing.assert_array_equal(additive_fuse(a, b).scores, additive_fuse(b, a).scores)

    def test_multiplicative(self):
        np.testing.assert_array_equal(multiplicative_fuse([0.1, 0.5], [1.0, 1.0]).scores, [0.1, 0.5])
        assert multiplicative_fuse([0.5], [0.4]).scores[0] == pytest.approx(0.2, abs=1e-15)
        assert multiplicative_fuse([0.7], [0.0]).scores[0] == 0.0

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            additive_fuse([0.1], [0.1, 0.2])
        with pytest.raises(LengthMismatch):
            multiplicative_fuse([0.1], [0.1, 0.2])
