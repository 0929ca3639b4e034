import math

import numpy as np
import pytest

from adeptheq import dp
from adeptheq.errors import ConfigurationError, InputError


def test_laplace_moments():
    rng = dp.stream_rng(0, dp.STREAM_DP, 0, 0)
    scale = 0.3
    x = dp.laplace_sample(scale, rng, size=100_000)
    assert abs(x.mean()) <= 0.01 * scale
    # Laplace variance is 2 * scale**2
    assert abs(x.std() / (scale * math.sqrt(2)) - 1) <= 0.05


def test_laplace_reproducible_and_validated():
    a = dp.laplace_sample(1.0, dp.stream_rng(5, 1, 2, 3), size=10)
    b = dp.laplace_sample(1.0, dp.stream_rng(5, 1, 2, 3), size=10)
    np.testing.assert_array_equal(a, b)
    c = dp.laplace_sample(1.0, dp.stream_rng(5, 1, 2, 4), size=10)
    assert not np.array_equal(a, c)
    with pytest.raises(InputError):
        dp.laplace_sample(0.0, dp.stream_rng(0, 1))


def test_laplace_inverse_cdf_formula():
    class Fixed:
        def __init__(self, u):
            self.u = u

        def random(self, size=None):
            return self.u + 0.5

    # u = 0.25 -> -s * ln(1 - 0.5) = s ln 2
    assert dp.laplace_sample(2.0, Fixed(0.25)) == pytest.approx(2 * math.log(2))
    assert dp.laplace_sample(2.0, Fixed(-0.25)) == pytest.approx(-2 * math.log(2))


def test_privatize_huge_epsilon_is_transparent():
    rng = dp.stream_rng(1, 1)
    out = dp.privatize_accuracy(0.42, 50, 1e9, rng, client_id=3, round=2)
    assert out.value == pytest.approx(0.42, abs=1e-6)
    assert out.sensitivity == 1 / 50 and out.client_id == 3 and out.round == 2


def test_privatize_clamps_at_one():
    rng = dp.stream_rng(2, 1)
    for _ in range(200):
        out = dp.privatize_accuracy(1.0, 3, 1.0, rng)
        assert 0.0 <= out.value <= 1.0


def test_privatize_rejects_bad_accuracy():
    with pytest.raises(InputError):
        dp.privatize_accuracy(1.2, 10, 1.0, dp.stream_rng(0, 1))


def test_privatize_noise_std():
    rng = dp.stream_rng(3, 1)
    diffs = np.array([dp.privatize_accuracy(0.5, 100, 1.0, rng).value - 0.5 for _ in range(100_000)])
    # scale 0.01; clamping is negligible 50 scales from the borders
    assert abs(diffs.std() / (0.01 * math.sqrt(2)) - 1) <= 0.05


def test_clamping_never_widens_noise():
    rng = dp.stream_rng(4, 1)
    for a in np.linspace(0, 1, 11):
        for _ in range(200):
            state = rng.bit_generator.state
            out = dp.privatize_accuracy(a, 4, 0.5, rng).value
            rng2 = np.random.Generator(np.random.Philox())
            rng2.bit_generator.state = state
            noise = dp.laplace_sample(1 / (4 * 0.5), rng2)
            assert abs(out - a) <= abs(noise) + 1e-15


def test_statistical_dp_ratio():
    """Histogram log-ratio of neighboring releases (pre-clamp) stays within eps + 0.1."""
    eps, m = 1.0, 10
    scale = 1 / (m * eps)
    rng = dp.stream_rng(5, 1)
    a1, a2 = 0.5, 0.5 + 1 / m
    x1 = a1 + dp.laplace_sample(scale, rng, size=1_000_000)
    x2 = a2 + dp.laplace_sample(scale, rng, size=1_000_000)
    bins = np.linspace(0.2, 0.9, 36)
    h1, _ = np.histogram(x1, bins)
    h2, _ = np.histogram(x2, bins)
    ok = (h1 > 2000) & (h2 > 2000)
    assert ok.sum() >= 10
    ratio = np.abs(np.log(h1[ok] / h2[ok]))
    assert ratio.max() <= eps + 0.1


def test_compose_privacy_values():
    v = dp.compose_privacy(dp.PrivacySpec(1.0, 1e-5, 20))
    expected = math.sqrt(40 * math.log(1e5)) + 20 * (math.e - 1)
    assert v == pytest.approx(expected, rel=1e-12)
    assert v == pytest.approx(55.826, abs=1e-3)
    assert dp.compose_privacy(dp.PrivacySpec(1e-12, 1e-5, 1)) < 1e-10
    vals = [dp.compose_privacy(dp.PrivacySpec(0.5, 1e-5, t)) for t in range(1, 30)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_privacy_spec_validation():
    with pytest.raises(ConfigurationError):
        dp.PrivacySpec(0.0, 1e-5, 1)
    with pytest.raises(ConfigurationError):
        dp.PrivacySpec(1.0, 1.0, 1)


def test_compose_privacy_overflow_is_infinite():
    assert dp.compose_privacy(dp.PrivacySpec(1e9, 1e-5, 1)) == math.inf
