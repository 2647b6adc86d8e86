"""
Per-frame transmit and receive chain used by the Monte Carlo harness:
method -> BPF -> IBO -> HPA -> FFT/unpad -> channel -> alpha division -> detector.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .baselines import clip_frame, mle_detect, slm_derotate, slm_encode, zf_detect
from .cae_model import CaeModel, decoder_forward, encoder_forward, tensor_to_samples
from .config import ExperimentConfig
from .dsp_core import dft_unpad, idft_oversampled
from .errors import ConfigError
from .mimo_channel import apply_channel, realify
from .models import (
    ChannelRealization,
    ClipConfig,
    OfdmGrid,
    RappParams,
    SlmCodebook,
    Stage,
    TimeFrame,
)
from .rf_chain import apply_ibo, bandpass_filter, bussgang_alpha_samples, rapp_amplify

logger = logging.getLogger("caelab.transmit")


@dataclass
class TransmitResult:
    """Every stage of one transmitted frame"""
    grid: OfdmGrid
    raw: TimeFrame
    encoded: TimeFrame
    filtered: TimeFrame
    backed_off: TimeFrame
    amplified: TimeFrame
    freq: np.ndarray
    alpha: complex
    tx_gain: float
    slm_index: Optional[int] = None


class TransmitChain:
    """Method-specific transmitter and matching receiver for one experiment config."""

    def __init__(self, cfg: ExperimentConfig, model: Optional[CaeModel] = None):
        self.cfg = cfg
        self.method = cfg.method.name
        self.detector = cfg.detector
        self.oversampling = cfg.system.l
        self.rapp = RappParams.from_budget(cfg.rf.p_t, cfg.system.n_t, cfg.rf.v, cfg.rf.p)
        self.clip = ClipConfig(cfg.method.clip_ratio_db)
        self.codebook = None
        if self.method == "slm":
            self.codebook = SlmCodebook.generate(cfg.method.slm_candidates, cfg.system.k, cfg.method.slm_seed)
        if self.method == "cae" and model is None:
            raise ConfigError("method 'cae' needs a trained model")
        self.model = model
        if model is not None:
            model.eval()
            geometry = (model.n_t, model.n_r, model.k, model.oversampling, model.order)
            expected = (cfg.system.n_t, cfg.system.receive_antennas, cfg.system.k, cfg.system.l, cfg.system.order)
            if geometry != expected:
                raise ConfigError(f"checkpoint geometry {geometry} does not match config {expected}")

    def encode(self, raw: TimeFrame, grid: OfdmGrid):
        if self.method == "cf":
            return clip_frame(raw, self.clip), None
        if self.method == "slm":
            return slm_encode(grid, self.codebook, self.oversampling)
        if self.method == "cae":
            encoded = encoder_forward(self.model.encoder, ad.constant(realify(raw.samples)[None]))
            return raw.advance(tensor_to_samples(encoded)[0], Stage.ENCODED), None
        return raw.advance(raw.samples, Stage.ENCODED), None

    def transmit(self, grid: OfdmGrid, ibo_db: Optional[float] = None, hpa: Optional[bool] = None) -> TransmitResult:
        ibo_db = self.cfg.rf.ibo_db if ibo_db is None else ibo_db
        hpa = self.cfg.rf.hpa if hpa is None else hpa
        raw = idft_oversampled(grid, self.oversampling)
        encoded, slm_index = self.encode(raw, grid)
        filtered = bandpass_filter(encoded)
        backed_off = apply_ibo(filtered, ibo_db, self.rapp)
        tx_gain = float(np.sqrt(backed_off.mean_power / filtered.mean_power))
        if hpa:
            amplified = rapp_amplify(backed_off, self.rapp)
            alpha = bussgang_alpha_samples(backed_off.samples, amplified.samples)
        else:
            amplified = backed_off.advance(backed_off.samples, Stage.AMPLIFIED)
            alpha = 1.0 + 0.0j
        freq = dft_unpad(amplified)
        return TransmitResult(grid, raw, encoded, filtered, backed_off, amplified, freq, alpha, tx_gain, slm_index)

    def receive(self, result: TransmitResult, chan: ChannelRealization, rng: np.random.Generator) -> np.ndarray:
        """Hard-decision grid [N_t x K] for one received frame."""
        y = apply_channel(result.freq.T, chan, rng) / result.alpha
        if self.detector == "cae":
            out = decoder_forward(self.model.decoder, chan.h[None], ad.constant(realify(y.T)[None]), rng=rng)
            return out.symbols[0]
        if result.slm_index is not None:
            y = slm_derotate(y, self.codebook, result.slm_index)
        effective = ChannelRealization(h=chan.h * result.tx_gain, sigma_w2=chan.sigma_w2, profile=chan.profile)
        constellation = result.grid.constellation
        if self.detector == "zf":
            return zf_detect(effective, y, constellation).T
        return mle_detect(effective, y, constellation).T
