import numpy as np
import pytest

from caelab.baselines import clip_frame
from caelab.dsp_core import estimate_psd, idft_oversampled, inband_mask, random_grid
from caelab.errors import SignalError
from caelab.models import ClipConfig, RappParams, Stage
from caelab.rf_chain import (
    ACPR_RATIO_FLOOR,
    acpr,
    apply_ibo,
    band_masks,
    band_powers,
    bandpass_filter,
    bussgang_alpha,
    bussgang_alpha_samples,
    obo,
    rapp_amplify,
    rapp_gain,
    spectral_report,
)


@pytest.mark.parametrize("p", [1.0, 2.0, 10.0])
def test_rapp_gain_at_saturation_amplitude(p):
    params = RappParams(a0=0.7, v=1.0, p=p)
    assert abs(rapp_gain(0.7, params) - 0.7 * 2.0 ** (-1.0 / (2.0 * p))) < 1e-12


@pytest.mark.parametrize("p", [1.0, 2.0, 10.0])
def test_rapp_gain_monotone_and_saturating(p):
    params = RappParams(a0=0.5, v=1.0, p=p)
    amplitude = np.linspace(0.0, 50.0, 10_000)
    gain = rapp_gain(amplitude, params)
    assert np.all(np.diff(gain) >= 0)
    knee = amplitude <= 2 * params.a0
    assert np.all(np.diff(gain[knee]) > 0)
    assert np.all(gain <= amplitude + 1e-15)
    assert np.all(gain < params.a0)
    assert rapp_gain(1e6, params) == pytest.approx(params.a0, rel=1e-6)


def test_rapp_small_signal_gain_is_linear():
    params = RappParams(a0=1.0, v=2.0, p=2.0)
    assert rapp_gain(1e-4, params) == pytest.approx(2e-4, rel=1e-12)


def test_rapp_keeps_phase(rng):
    frame = apply_ibo(bandpass_filter(idft_oversampled(random_grid(rng, 2, 16, 4))), 0.0, RappParams(a0=0.5))
    out = rapp_amplify(frame, RappParams(a0=0.5))
    assert out.stage == Stage.AMPLIFIED
    assert np.allclose(np.angle(out.samples), np.angle(frame.samples), atol=1e-12)


def test_rapp_params_validated():
    with pytest.raises(SignalError):
        RappParams(a0=0.0)
    assert RappParams.from_budget(1.0, 4).a0 == pytest.approx(0.5)


def test_apply_ibo_sets_mean_power(rng):
    params = RappParams.from_budget(1.0, 2)
    frame = bandpass_filter(idft_oversampled(random_grid(rng, 2, 16, 16)))
    for ibo_db in (0.0, 3.0, 9.0):
        backed = apply_ibo(frame, ibo_db, params)
        assert backed.mean_power == pytest.approx(params.a0 ** 2 / 10 ** (ibo_db / 10), rel=1e-12)
        assert obo(backed, 1.0) == pytest.approx(ibo_db, abs=1e-9)


def test_apply_ibo_rejects_zero_frame(rng):
    frame = idft_oversampled(random_grid(rng, 1, 8, 4))
    zero = frame.advance(np.zeros_like(frame.samples))
    with pytest.raises(SignalError):
        apply_ibo(zero, 3.0, RappParams(a0=1.0))
    with pytest.raises(SignalError):
        obo(zero)


@pytest.mark.parametrize("ibo_db", [3.0, 6.0, 9.0])
def test_bussgang_alpha_is_least_squares_minimizer(rng, ibo_db):
    params = RappParams.from_budget(1.0, 2)
    frames = [apply_ibo(bandpass_filter(idft_oversampled(random_grid(rng, 2, 72, 16))), ibo_db, params)
              for _ in range(20)]
    x_f = np.stack([f.samples for f in frames])
    x_p = np.stack([rapp_amplify(f, params).samples for f in frames])
    alpha = bussgang_alpha_samples(x_f, x_p)

    def cost(a):
        return np.mean(np.abs(x_p - a * x_f) ** 2)

    offsets = np.arange(-10, 11) * 1e-3
    grid = alpha.real + offsets[:, None] + 1j * (alpha.imag + offsets[None, :])
    best = min(cost(a) for a in grid.reshape(-1))
    assert cost(alpha) <= best + 1e-15
    assert 0.0 < alpha.real < 1.0


def test_bussgang_alpha_of_linear_chain_is_one(rng):
    frame = bandpass_filter(idft_oversampled(random_grid(rng, 2, 16, 4)))
    assert bussgang_alpha(frame, frame).alpha == pytest.approx(1.0 + 0.0j)
    with pytest.raises(SignalError):
        bussgang_alpha_samples(np.zeros(4), np.ones(4))


def test_bandpass_removes_clipping_regrowth(rng):
    frame = idft_oversampled(random_grid(rng, 2, 72, 4), 4)
    clipped = clip_frame(frame, ClipConfig(0.0))
    filtered = bandpass_filter(clipped)
    psd = estimate_psd(filtered)
    assert psd.bin_power[~inband_mask(72, 4)].sum() < 1e-20 * psd.total_power
    assert estimate_psd(clipped).bin_power[~inband_mask(72, 4)].sum() > 1e-4 * psd.total_power


def test_bandpass_rejects_amplified_frames(rng):
    frame = idft_oversampled(random_grid(rng, 1, 8, 4)).advance(np.ones((1, 32)), Stage.AMPLIFIED)
    with pytest.raises(SignalError):
        bandpass_filter(frame)


def test_band_masks_partition_and_main_band_matches_data_bins():
    main, lower, upper = band_masks(288, 4)
    assert main.sum() == lower.sum() == upper.sum() == 72
    assert not np.any(main & lower) and not np.any(main & upper) and not np.any(lower & upper)
    assert np.array_equal(main, inband_mask(72, 4))


def test_band_powers_sum_to_total_when_adjacent_bands_cover_spectrum(rng):
    params = RappParams.from_budget(1.0, 2)
    frame = rapp_amplify(apply_ibo(bandpass_filter(idft_oversampled(random_grid(rng, 2, 32, 4), 3)), 0.0, params),
                         params)
    psd = estimate_psd(frame)
    assert sum(band_powers(psd, 3)) == pytest.approx(psd.total_power, rel=1e-12)


def test_acpr_of_band_limited_signal_hits_floor(rng):
    frame = bandpass_filter(idft_oversampled(random_grid(rng, 2, 16, 4)))
    assert acpr(estimate_psd(frame), 4) < 10 * np.log10(ACPR_RATIO_FLOOR) + 200


def test_acpr_requires_oversampling(rng):
    frame = idft_oversampled(random_grid(rng, 2, 16, 4), 1)
    with pytest.raises(SignalError):
        acpr(estimate_psd(frame), 1)


def test_clipped_unfiltered_acpr_worse_than_filtered(rng):
    params = RappParams.from_budget(1.0, 2)
    worse = 0
    for _ in range(10):
        clipped = clip_frame(idft_oversampled(random_grid(rng, 2, 72, 4)), ClipConfig())
        raw_acpr = acpr(estimate_psd(clipped), 4)
        filtered = bandpass_filter(clipped)
        amplified = rapp_amplify(apply_ibo(filtered, 6.0, params), params)
        worse += raw_acpr > acpr(estimate_psd(filtered), 4)
        assert acpr(estimate_psd(amplified), 4) > acpr(estimate_psd(filtered), 4)
    assert worse == 10


def test_acpr_improves_with_back_off(rng):
    params = RappParams.from_budget(1.0, 2)
    high, low = [], []
    for _ in range(20):
        filtered = bandpass_filter(idft_oversampled(random_grid(rng, 2, 72, 16)))
        high.append(acpr(estimate_psd(rapp_amplify(apply_ibo(filtered, 3.0, params), params)), 4))
        low.append(acpr(estimate_psd(rapp_amplify(apply_ibo(filtered, 9.0, params), params)), 4))
    assert np.mean(high) > np.mean(low)


def test_spectral_report_collects_both_metrics(rng):
    params = RappParams.from_budget(1.0, 2)
    backed = apply_ibo(bandpass_filter(idft_oversampled(random_grid(rng, 2, 16, 4))), 4.0, params)
    report = spectral_report(backed, rapp_amplify(backed, params))
    assert report.obo_db == pytest.approx(4.0)
    assert -80.0 < report.acpr_db < 0.0
    assert report.psd.n_bins == 64
