import numpy as np
import pytest

from caelab.errors import ChannelError, SignalError
from caelab.mimo_channel import (
    apply_channel,
    complex_noise,
    complexify,
    draw_channel,
    hermitian_apply,
    matched_features,
    noise_variance,
    propagate,
    realify,
    realify_matrix,
)
from caelab.models import ChannelProfile, ChannelRealization


def test_awgn_profile_is_scaled_identity(rng):
    chan = draw_channel(rng, 8, 3, 3, ChannelProfile("awgn"))
    assert chan.h.shape == (8, 3, 3)
    assert np.allclose(chan.h, np.eye(3) / np.sqrt(3))


def test_awgn_profile_needs_square_system(rng):
    with pytest.raises(ChannelError):
        draw_channel(rng, 8, 2, 4, ChannelProfile("awgn"))


def _mean_frobenius_gain(rng, profile, draws):
    gains = [np.mean(np.sum(np.abs(draw_channel(rng, 16, 2, 2, profile).h) ** 2, axis=(1, 2)))
             for _ in range(draws)]
    return float(np.mean(gains))


def test_multipath_unit_average_frobenius_gain(rng):
    # per-draw gain variance is at most 1/4, so 2000 draws give sigma <= 0.011
    assert _mean_frobenius_gain(rng, ChannelProfile("multipath", taps=5), 2000) == pytest.approx(1.0, abs=0.05)


@pytest.mark.slow
def test_multipath_frobenius_gain_over_many_draws(rng):
    profile = ChannelProfile("multipath", taps=13, decay=0.5)
    assert _mean_frobenius_gain(rng, profile, 100_000) == pytest.approx(1.0, abs=0.01)


def test_multipath_is_frequency_selective(rng):
    chan = draw_channel(rng, 32, 2, 2, ChannelProfile("multipath", taps=8))
    assert np.std(np.abs(chan.h[:, 0, 0])) > 0


def test_single_tap_channel_is_flat(rng):
    chan = draw_channel(rng, 16, 2, 2, ChannelProfile("multipath", taps=1))
    assert np.allclose(chan.h, chan.h[0])


def test_tap_profile_is_normalized_exponential():
    profile = ChannelProfile("multipath", taps=13)
    powers = profile.tap_powers()
    assert powers.sum() == pytest.approx(1.0)
    assert powers[-1] / powers[0] == pytest.approx(0.01)
    assert np.all(np.diff(powers) < 0)


def test_channel_profile_validation(rng):
    with pytest.raises(ChannelError):
        ChannelProfile("rayleigh")
    with pytest.raises(ChannelError):
        draw_channel(rng, 4, 2, 2, ChannelProfile("multipath", taps=8))
    with pytest.raises(ChannelError):
        ChannelRealization(h=np.ones((2, 2)), sigma_w2=0.0)
    with pytest.raises(ChannelError):
        ChannelRealization(h=np.ones((2, 2, 2)), sigma_w2=-1.0)


def test_noiseless_channel_is_matrix_product(rng):
    chan = draw_channel(rng, 6, 2, 3, ChannelProfile("multipath", taps=2))
    x = rng.standard_normal((6, 2)) + 1j * rng.standard_normal((6, 2))
    expected = np.stack([chan.h[k] @ x[k] for k in range(6)])
    assert np.allclose(apply_channel(x, chan, rng), expected)
    assert np.allclose(propagate(chan.h, x), expected)


def test_apply_channel_rejects_shape_mismatch(rng):
    chan = draw_channel(rng, 6, 2, 2, ChannelProfile("awgn"))
    with pytest.raises(ChannelError):
        apply_channel(np.ones((6, 3)), chan, rng)


def test_noise_variance_per_entry(rng):
    noise = complex_noise(rng, (200_000,), 0.3)
    assert np.mean(np.abs(noise) ** 2) == pytest.approx(0.3, rel=0.02)
    assert abs(np.mean(noise.real ** 2) - np.mean(noise.imag ** 2)) < 0.01
    assert not np.any(complex_noise(rng, (4,), 0.0))


def test_noise_variance_from_peak_snr():
    assert noise_variance(10.0) == pytest.approx(0.1)
    assert noise_variance(20.0, p_t=2.0) == pytest.approx(0.02)


def test_real_reparametrization_matches_complex_product(rng):
    h = rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2))
    x = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    assert np.allclose(realify_matrix(h) @ realify(x), realify(h @ x))
    assert np.allclose(complexify(realify(x)), x)
    with pytest.raises(SignalError):
        complexify(np.ones(3))


def test_matched_features(rng):
    chan = draw_channel(rng, 4, 2, 3, ChannelProfile("multipath", taps=2))
    y = rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3))
    x_hat = rng.standard_normal((4, 2)) + 1j * rng.standard_normal((4, 2))
    hh_y, hh_h_x = matched_features(chan, y, x_hat)
    for k in range(4):
        assert np.allclose(hh_y[k], chan.h[k].conj().T @ y[k])
        assert np.allclose(hh_h_x[k], chan.h[k].conj().T @ chan.h[k] @ x_hat[k])
    assert np.allclose(hermitian_apply(chan.h, y), hh_y)
    with pytest.raises(ChannelError):
        matched_features(chan, y[:, :2], x_hat)
