import numpy as np
import pytest

from app.rng import PURPOSES, RngStream


class TestRngStream:
    def test_same_key_same_draws(self):
        a = RngStream(42, 7).uniform(100)
        b = RngStream(42, 7).uniform(100)
        np.testing.assert_array_equal(a, b)

    def test_index_changes_draws(self):
        assert not np.array_equal(RngStream(42, 0).uniform(10), RngStream(42, 1).uniform(10))

    def test_purposes_are_disjoint(self):
        draws = {p: RngStream(1, 0, purpose=p).uniform(8) for p in PURPOSES}
        values = list(draws.values())
        for i in range(len(values)):
            for j in range(i + 1, len(values)):
                assert not np.array_equal(values[i], values[j])

    def test_unknown_purpose(self):
        with pytest.raises(ValueError):
            RngStream(0, 0, purpose="dropout")

    def test_uniform_range(self):
        u = RngStream(3).uniform(10000, low=-2.0, high=2.0)
        assert u.min() >= -2.0 and u.max() < 2.0
        assert abs(u.mean()) < 0.1

    def test_scalar_uniform(self):
        assert RngStream(3).uniform().shape == ()

    def test_normal_moments(self):
        z = RngStream(5).normal((200, 100))
        assert z.shape == (200, 100)
        assert abs(z.mean()) < 0.02
        assert z.std() == pytest.approx(1.0, abs=0.02)
        assert np.all(np.isfinite(z))

    def test_odd_normal_count(self):
        assert RngStream(5).normal(7).shape == (7,)

    def test_integers_inclusive(self):
        k = RngStream(11).integers(1, 5, size=5000)
        assert set(np.unique(k)) == {1, 2, 3, 4, 5}

    def test_permutation(self):
        p = RngStream(0, 3, purpose="shuffle").permutation(50)
        assert sorted(p.tolist()) == list(range(50))
        np.testing.assert_array_equal(p, RngStream(0, 3, purpose="shuffle").permutation(50))

    def test_large_seed_wraps(self):
        s = RngStream(2 ** 64 - 1, 2 ** 63)
        assert s.uniform(3).shape == (3,)
