"""
Classical comparison methods: clipping-and-filtering and selected mapping
for PAPR reduction, exhaustive maximum-likelihood and zero-forcing MIMO
detection.
"""

import logging
from typing import Tuple

import numpy as np

from .dsp_core import idft_matrix_apply
from .errors import ChannelError, DetectionError, SignalError
from .models import ChannelRealization, ClipConfig, Constellation, OfdmGrid, SlmCodebook, Stage, TimeFrame
from .rf_chain import bandpass_filter

logger = logging.getLogger("caelab.baselines")

MLE_MAX_CANDIDATES = 2 ** 20
MLE_CHUNK = 4096


class ClippingCalculator:
    """Hard envelope limiting relative to the frame's RMS amplitude."""

    @staticmethod
    def clip_level(samples: np.ndarray, clip_ratio_db: float) -> float:
        mean_power = float(np.mean(np.abs(samples) ** 2))
        if mean_power == 0:
            raise SignalError("cannot clip an all-zero frame")
        return float(np.sqrt(mean_power) * 10.0 ** (clip_ratio_db / 20.0))

    @staticmethod
    def clip(samples: np.ndarray, clip_ratio_db: float) -> np.ndarray:
        level = ClippingCalculator.clip_level(samples, clip_ratio_db)
        amplitude = np.abs(samples)
        scale = np.ones_like(amplitude)
        over = amplitude > level
        scale[over] = level / amplitude[over]
        return samples * scale


def clip_frame(frame: TimeFrame, cfg: ClipConfig) -> TimeFrame:
    """Clipping only; the output is not band-limited."""
    return frame.advance(ClippingCalculator.clip(frame.samples, cfg.clip_ratio_db), Stage.ENCODED)


def clip_and_filter(frame: TimeFrame, cfg: ClipConfig = ClipConfig()) -> TimeFrame:
    """Single clip pass at sqrt(mean power) * 10^(CR/20), then the band-pass filter."""
    return bandpass_filter(clip_frame(frame, cfg))


def slm_candidates(grid: OfdmGrid, book: SlmCodebook, oversampling: int) -> np.ndarray:
    """[U x N_t x L*K] time frames, one per phase sequence shared by all antennas."""
    if book.phases.shape[1] != grid.k:
        raise SignalError(f"codebook length {book.phases.shape[1]} != K={grid.k}")
    return idft_matrix_apply(grid.symbols[None, :, :] * book.phases[:, None, :], oversampling)


def slm_encode(grid: OfdmGrid, book: SlmCodebook, oversampling: int = 4) -> Tuple[TimeFrame, int]:
    """Pick the candidate with the smallest max-over-antennas PAPR (first on ties)."""
    candidates = slm_candidates(grid, book, oversampling)
    power = np.abs(candidates) ** 2
    papr = (power.max(axis=-1) / power.mean(axis=-1)).max(axis=-1)
    index = int(np.argmin(papr))
    frame = TimeFrame(samples=candidates[index], oversampling=oversampling, k=grid.k, stage=Stage.ENCODED)
    return frame, index


def slm_derotate(y_freq: np.ndarray, book: SlmCodebook, index: int) -> np.ndarray:
    """Undo the chosen phase sequence on a [K x N_r] observation (genie side information)."""
    return np.asarray(y_freq) * np.conj(book.phases[index])[:, None]


def candidate_vectors(constellation: Constellation, n_t: int) -> np.ndarray:
    """All |M|^N_t symbol vectors in lexicographic order, first antenna most significant."""
    points = constellation.points
    grids = np.indices((points.size,) * n_t).reshape(n_t, -1).T
    return points[grids]


def mle_detect(chan: ChannelRealization, y_freq: np.ndarray, constellation: Constellation) -> np.ndarray:
    """
    Exhaustive per-subcarrier minimization of ||y[k] - h[k] x||^2.

    Returns the [K x N_t] decision; ties go to the lexicographically first
    candidate.
    """
    y_freq = np.asarray(y_freq, dtype=np.complex128)
    if y_freq.shape != (chan.k, chan.n_r):
        raise ChannelError(f"observation shape {y_freq.shape} != K x N_r = {(chan.k, chan.n_r)}")
    n_candidates = constellation.order ** chan.n_t
    if n_candidates > MLE_MAX_CANDIDATES:
        raise DetectionError(
            f"MLE search over {constellation.order}^{chan.n_t} = {n_candidates} candidates exceeds the "
            f"limit of {MLE_MAX_CANDIDATES}"
        )
    candidates = candidate_vectors(constellation, chan.n_t)
    best_dist = np.full(chan.k, np.inf)
    best_index = np.zeros(chan.k, dtype=np.int64)
    for start in range(0, n_candidates, MLE_CHUNK):
        chunk = candidates[start:start + MLE_CHUNK]
        predicted = np.einsum("krt,ct->kcr", chan.h, chunk)
        dist = np.sum(np.abs(y_freq[:, None, :] - predicted) ** 2, axis=-1)
        local = np.argmin(dist, axis=1)
        local_dist = dist[np.arange(chan.k), local]
        better = local_dist < best_dist
        best_dist[better] = local_dist[better]
        best_index[better] = start + local[better]
    return candidates[best_index]


def zf_detect(chan: ChannelRealization, y_freq: np.ndarray, constellation: Constellation) -> np.ndarray:
    """Pseudo-inverse equalization followed by per-entry slicing; [K x N_t]."""
    y_freq = np.asarray(y_freq, dtype=np.complex128)
    if y_freq.shape != (chan.k, chan.n_r):
        raise ChannelError(f"observation shape {y_freq.shape} != K x N_r = {(chan.k, chan.n_r)}")
    ranks = np.linalg.matrix_rank(chan.h)
    if np.any(ranks < chan.n_t):
        raise ChannelError(f"channel is not left-invertible on subcarrier {int(np.argmax(ranks < chan.n_t))}")
    equalized = np.einsum("ktr,kr->kt", np.linalg.pinv(chan.h), y_freq)
    re_idx, im_idx = constellation.indices(equalized)
    return constellation.symbols(re_idx, im_idx)
