"""
Complex-signal primitives shared by every other module.
Oversampled IDFT/DFT with central zero padding, power normalization,
PAPR and Welch PSD estimation.
"""

import logging
from typing import Optional

import numpy as np
from scipy import signal

from .errors import SignalError
from .models import Constellation, OfdmGrid, PsdEstimate, Stage, TimeFrame

logger = logging.getLogger("caelab.dsp_core")


def inband_bins(k: int, oversampling: int) -> np.ndarray:
    """FFT-order bin index of data subcarrier 0..K-1 (centered around DC)."""
    return (np.arange(k) - k // 2) % (oversampling * k)


def inband_mask(k: int, oversampling: int) -> np.ndarray:
    mask = np.zeros(oversampling * k, dtype=bool)
    mask[inband_bins(k, oversampling)] = True
    return mask


def pad_spectrum(symbols: np.ndarray, oversampling: int) -> np.ndarray:
    """Place K bins centrally into L*K bins (last axis), FFT order."""
    k = symbols.shape[-1]
    spectrum = np.zeros(symbols.shape[:-1] + (oversampling * k,), dtype=np.complex128)
    spectrum[..., inband_bins(k, oversampling)] = symbols
    return spectrum


def idft_matrix_apply(symbols: np.ndarray, oversampling: int) -> np.ndarray:
    """x[n] = 1/sqrt(K) * sum_k X(k) exp(j 2 pi f_k n / (L K)) along the last axis."""
    k = symbols.shape[-1]
    n = oversampling * k
    return np.fft.ifft(pad_spectrum(symbols, oversampling), axis=-1) * (n / np.sqrt(k))


def dft_matrix_apply(samples: np.ndarray, k: int) -> np.ndarray:
    """Forward FFT keeping the K in-band bins; exact inverse of idft_matrix_apply."""
    n = samples.shape[-1]
    if n % k != 0:
        raise SignalError(f"frame length {n} is not divisible by K={k}")
    oversampling = n // k
    return np.fft.fft(samples, axis=-1)[..., inband_bins(k, oversampling)] * (np.sqrt(k) / n)


def dft_adjoint_apply(symbols: np.ndarray, oversampling: int) -> np.ndarray:
    """Adjoint of dft_matrix_apply: K bins back to L*K time samples."""
    k = symbols.shape[-1]
    return np.fft.ifft(pad_spectrum(symbols, oversampling), axis=-1) * np.sqrt(k)


def idft_adjoint_apply(samples: np.ndarray, k: int) -> np.ndarray:
    """Adjoint of idft_matrix_apply."""
    n = samples.shape[-1]
    return np.fft.fft(samples, axis=-1)[..., inband_bins(k, n // k)] / np.sqrt(k)


def random_grid(rng: np.random.Generator, n_t: int, k: int, order: int) -> OfdmGrid:
    """Uniform random QAM grid."""
    const = Constellation(order)
    re_idx = rng.integers(0, const.levels_per_dim, size=(n_t, k))
    im_idx = rng.integers(0, const.levels_per_dim, size=(n_t, k))
    return OfdmGrid(symbols=const.symbols(re_idx, im_idx), constellation_order=order)


def idft_oversampled(grid: OfdmGrid, oversampling: int = 4) -> TimeFrame:
    """Zero-pad each antenna's spectrum centrally and inverse-FFT it."""
    if oversampling < 1:
        raise SignalError(f"oversampling factor must be >= 1, got {oversampling}")
    if grid.symbols.size == 0:
        raise SignalError("cannot transform an empty grid")
    samples = idft_matrix_apply(grid.symbols, oversampling)
    return TimeFrame(samples=samples, oversampling=oversampling, k=grid.k, stage=Stage.RAW)


def dft_unpad(frame: TimeFrame, k: Optional[int] = None) -> np.ndarray:
    """FFT and drop the out-of-band padding bins; returns an N_t x K matrix."""
    k = frame.k if k is None else k
    return dft_matrix_apply(frame.samples, k)


def papr(samples: np.ndarray) -> float:
    """Peak power over mean power, linear ratio."""
    samples = np.asarray(samples)
    if samples.size == 0:
        raise SignalError("PAPR of an empty signal is undefined")
    power = np.abs(samples.reshape(-1)) ** 2
    mean = power.mean()
    if mean == 0:
        raise SignalError("PAPR of an all-zero signal is undefined")
    return float(power.max() / mean)


def papr_mimo(frame: TimeFrame) -> float:
    """Maximum PAPR among all transmit antennas."""
    return max(papr(row) for row in frame.samples)


def papr_db(value: float) -> float:
    return float(10.0 * np.log10(value))


def normalize_power(frame: TimeFrame) -> TimeFrame:
    """Scale the frame so the mean |x|^2 over all antennas and samples is 1."""
    mean = frame.mean_power
    if mean == 0:
        raise SignalError("cannot normalize an all-zero frame")
    return frame.advance(frame.samples / np.sqrt(mean))


def estimate_psd(frame: TimeFrame, segment: Optional[int] = None) -> PsdEstimate:
    """
    Welch-averaged periodogram.

    Rectangular window, non-overlapping segments of `segment` samples (default
    one OFDM symbol, L*K), averaged over segments and antennas. Bin powers sum
    to the mean signal power.
    """
    segment = frame.length if segment is None else segment
    return estimate_psd_samples(frame.samples, segment)


def estimate_psd_samples(samples: np.ndarray, segment: int) -> PsdEstimate:
    """Welch PSD of an [..., N] complex array averaged over all leading axes."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.complex128))
    if segment < 1 or segment > samples.shape[-1]:
        raise SignalError(f"segment length {segment} exceeds frame length {samples.shape[-1]}")
    _, pxx = signal.welch(
        samples,
        fs=1.0,
        window="boxcar",
        nperseg=segment,
        noverlap=0,
        detrend=False,
        return_onesided=False,
        scaling="spectrum",
        axis=-1,
    )
    bin_power = pxx.reshape(-1, segment).mean(axis=0)
    return PsdEstimate(bin_power=bin_power, bin_spacing=1.0 / segment)
