"""
Per-subcarrier MIMO fading channels, AWGN injection, the real-valued
reparametrization and matched-filter features for the iterative decoder.
"""

import logging
from typing import Tuple

import numpy as np

from .errors import ChannelError, SignalError
from .models import ChannelProfile, ChannelRealization

logger = logging.getLogger("caelab.mimo_channel")


def draw_channel(rng: np.random.Generator, k: int, n_t: int, n_r: int,
                 profile: ChannelProfile, sigma_w2: float = 0.0) -> ChannelRealization:
    """
    Draw one block-constant channel realization.

    Awgn gives h[k] = I / sqrt(N_t) on every subcarrier. MultipathTaps draws iid
    complex Gaussian tap matrices weighted by the normalized exponential profile
    and FFTs them across taps, so E||H[k]||_F^2 = 1.
    """
    if k < 1 or n_t < 1 or n_r < 1:
        raise ChannelError(f"invalid dimensions K={k} N_t={n_t} N_r={n_r}")
    if profile.kind == "awgn":
        if n_r != n_t:
            raise ChannelError(f"AWGN profile needs N_r == N_t, got {n_r} != {n_t}")
        h = np.broadcast_to(np.eye(n_t, dtype=np.complex128) / np.sqrt(n_t), (k, n_r, n_t)).copy()
        return ChannelRealization(h=h, sigma_w2=sigma_w2, profile=profile)

    if profile.taps > k:
        raise ChannelError(f"tap count {profile.taps} exceeds subcarrier count {k}")
    tap_var = profile.tap_powers() / (n_r * n_t)
    shape = (profile.taps, n_r, n_t)
    taps = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.sqrt(tap_var / 2.0)[:, None, None]
    padded = np.zeros((k, n_r, n_t), dtype=np.complex128)
    padded[: profile.taps] = taps
    h = np.fft.fft(padded, axis=0)
    return ChannelRealization(h=h, sigma_w2=sigma_w2, profile=profile)


def complex_noise(rng: np.random.Generator, shape, sigma_w2: float) -> np.ndarray:
    """Circularly-symmetric Gaussian noise with per-entry variance sigma_w2."""
    if sigma_w2 == 0:
        return np.zeros(shape, dtype=np.complex128)
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.sqrt(sigma_w2 / 2.0)


def propagate(h: np.ndarray, x_freq: np.ndarray) -> np.ndarray:
    """Noiseless y[..., k, :] = h[..., k] @ x[..., k, :]."""
    return np.einsum("...krt,...kt->...kr", h, x_freq)


def apply_channel(x_freq: np.ndarray, chan: ChannelRealization, rng: np.random.Generator) -> np.ndarray:
    """y[k] = h[k] x[k] + n[k] for x of shape [K x N_t]."""
    x_freq = np.asarray(x_freq, dtype=np.complex128)
    if x_freq.shape != (chan.k, chan.n_t):
        raise ChannelError(f"signal shape {x_freq.shape} does not match channel K x N_t = {(chan.k, chan.n_t)}")
    y = propagate(chan.h, x_freq)
    return y + complex_noise(rng, y.shape, chan.sigma_w2)


def realify(z: np.ndarray) -> np.ndarray:
    """[Re; Im] concatenation along the last axis."""
    z = np.asarray(z)
    return np.concatenate([z.real, z.imag], axis=-1).astype(np.float64)


def complexify(r: np.ndarray) -> np.ndarray:
    """Inverse of realify."""
    r = np.asarray(r)
    n = r.shape[-1]
    if n % 2 != 0:
        raise SignalError(f"cannot complexify an odd-length ({n}) real signal")
    half = n // 2
    return r[..., :half] + 1j * r[..., half:]


def realify_matrix(h: np.ndarray) -> np.ndarray:
    """Block form [[Re, -Im], [Im, Re]] over the last two axes."""
    h = np.asarray(h)
    top = np.concatenate([h.real, -h.imag], axis=-1)
    bottom = np.concatenate([h.imag, h.real], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def matched_features(chan: ChannelRealization, y: np.ndarray, x_hat: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per subcarrier (h^H y, h^H h x_hat)."""
    y = np.asarray(y, dtype=np.complex128)
    x_hat = np.asarray(x_hat, dtype=np.complex128)
    if y.shape != (chan.k, chan.n_r) or x_hat.shape != (chan.k, chan.n_t):
        raise ChannelError(
            f"feature shapes y={y.shape}, x_hat={x_hat.shape} do not match channel "
            f"K={chan.k} N_r={chan.n_r} N_t={chan.n_t}"
        )
    hh_y = hermitian_apply(chan.h, y)
    hh_h_x = hermitian_apply(chan.h, propagate(chan.h, x_hat))
    return hh_y, hh_h_x


def hermitian_apply(h: np.ndarray, y: np.ndarray) -> np.ndarray:
    """h[..., k]^H @ y[..., k, :]."""
    return np.einsum("...krt,...kr->...kt", np.conj(h), y)


def noise_variance(p_snr_db: float, p_t: float = 1.0) -> float:
    """sigma_w^2 = P_T / P_SNR."""
    return float(p_t / 10.0 ** (p_snr_db / 10.0))
