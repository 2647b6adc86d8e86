"""
Transmit RF front-end: band-pass filter, input back-off, RAPP amplifier,
Bussgang linearization and the ACPR / OBO spectral metrics.
"""

import logging
from typing import Optional

import numpy as np

from .dsp_core import estimate_psd, inband_mask
from .errors import SignalError
from .models import BussgangFactor, PsdEstimate, RappParams, SpectralReport, Stage, TimeFrame

logger = logging.getLogger("caelab.rf_chain")

# Adjacent/main power ratios are floored here so ACPR stays finite for ideally band-limited signals.
ACPR_RATIO_FLOOR = 1e-30


def bandpass_samples(samples: np.ndarray, k: int) -> np.ndarray:
    """Rectangular frequency mask over the K data bins, along the last axis."""
    n = samples.shape[-1]
    if n % k != 0:
        raise SignalError(f"frame length {n} is not divisible by K={k}")
    spectrum = np.fft.fft(samples, axis=-1)
    spectrum[..., ~inband_mask(k, n // k)] = 0.0
    return np.fft.ifft(spectrum, axis=-1)


def bandpass_filter(frame: TimeFrame) -> TimeFrame:
    """Zero all (L-1)*K out-of-band bins."""
    if frame.stage > Stage.ENCODED:
        raise SignalError(f"band-pass filter expects a Raw or Encoded frame, got {frame.stage.name}")
    return frame.advance(bandpass_samples(frame.samples, frame.k), Stage.FILTERED)


def ibo_scale(mean_power: float, ibo_db: float, params: RappParams) -> float:
    """Real gain bringing `mean_power` to A0^2 / 10^(ibo/10)."""
    if mean_power <= 0:
        raise SignalError("cannot back off an all-zero frame")
    target = params.a0 ** 2 / 10.0 ** (ibo_db / 10.0)
    return float(np.sqrt(target / mean_power))


def apply_ibo(frame: TimeFrame, ibo_db: float, params: RappParams) -> TimeFrame:
    """Global down-scaling to the requested input back-off."""
    gain = ibo_scale(frame.mean_power, ibo_db, params)
    return frame.advance(frame.samples * gain, Stage.BACKED_OFF)


def rapp_gain(amplitude: np.ndarray, params: RappParams) -> np.ndarray:
    """AM/AM curve G(A) = v A (1 + (v A / A0)^(2p))^(-1/(2p))."""
    amplitude = np.asarray(amplitude, dtype=np.float64)
    two_p = 2.0 * params.p
    return params.v * amplitude * (1.0 + (params.v * amplitude / params.a0) ** two_p) ** (-1.0 / two_p)


def rapp_samples(samples: np.ndarray, params: RappParams) -> np.ndarray:
    """Apply the AM/AM curve per sample, keeping the phase."""
    amplitude = np.abs(samples)
    out = np.zeros_like(samples, dtype=np.complex128)
    nz = amplitude > 0
    out[nz] = samples[nz] * (rapp_gain(amplitude[nz], params) / amplitude[nz])
    return out


def rapp_amplify(frame: TimeFrame, params: RappParams) -> TimeFrame:
    return frame.advance(rapp_samples(frame.samples, params), Stage.AMPLIFIED)


def bussgang_alpha_samples(filtered: np.ndarray, amplified: np.ndarray) -> complex:
    """Least-squares scale a minimizing E|x_P - a x_F|^2 (sample means over all entries)."""
    filtered = np.asarray(filtered)
    amplified = np.asarray(amplified)
    if filtered.shape != amplified.shape:
        raise SignalError(f"shape mismatch {filtered.shape} vs {amplified.shape}")
    denom = np.mean(np.abs(filtered) ** 2)
    if denom == 0:
        raise SignalError("Bussgang factor needs a filtered signal with nonzero power")
    return complex(np.mean(amplified * np.conj(filtered)) / denom)


def bussgang_alpha(filtered: TimeFrame, amplified: TimeFrame) -> BussgangFactor:
    return BussgangFactor(alpha=bussgang_alpha_samples(filtered.samples, amplified.samples))


def band_masks(n_bins: int, oversampling: int):
    """(main, lower, upper) boolean masks over FFT-order bins; bandwidth = 1/L in normalized units."""
    u = np.fft.fftfreq(n_bins) * oversampling + 1e-9
    main = (u >= -0.5) & (u < 0.5)
    upper = (u >= 0.5) & (u < 1.5)
    lower = (u >= -1.5) & (u < -0.5)
    return main, lower, upper


def band_powers(psd: PsdEstimate, oversampling: int):
    """(main, lower adjacent, upper adjacent) power."""
    main, lower, upper = band_masks(psd.n_bins, oversampling)
    return (float(psd.bin_power[main].sum()), float(psd.bin_power[lower].sum()),
            float(psd.bin_power[upper].sum()))


def acpr(psd: PsdEstimate, oversampling: int) -> float:
    """10 log10(max(upper, lower) / main), dB."""
    if oversampling < 2:
        raise SignalError(f"ACPR needs adjacent bands inside the sampled spectrum (L >= 2), got L={oversampling}")
    main, lower, upper = band_powers(psd, oversampling)
    if main <= 0:
        raise SignalError("ACPR is undefined without in-band power")
    return float(10.0 * np.log10(max(max(upper, lower) / main, ACPR_RATIO_FLOOR)))


def obo(backed_off: TimeFrame, p_t: float = 1.0) -> float:
    """10 log10(P_T / sum over antennas of mean input power), dB."""
    total = backed_off.n_t * backed_off.mean_power
    if total == 0:
        raise SignalError("OBO is undefined for a zero-power frame")
    return float(10.0 * np.log10(p_t / total))


def spectral_report(backed_off: TimeFrame, amplified: TimeFrame, p_t: float = 1.0,
                    segment: Optional[int] = None) -> SpectralReport:
    psd = estimate_psd(amplified, segment)
    return SpectralReport(
        acpr_db=acpr(psd, amplified.oversampling),
        obo_db=obo(backed_off, p_t),
        psd=psd,
    )
