"""
Monte Carlo experiments behind the command-line subcommands.

Every frame draws from its own generator seeded by (master seed, point,
frame), so results do not depend on the worker count.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, List, Optional, Sequence, TypeVar, Union

import numpy as np
import pandas as pd

from .cae_model import CaeModel, load_model
from .checkpoint_storage import default_checkpoint_path
from .config import ExperimentConfig
from .dsp_core import estimate_psd, papr_db, papr_mimo, random_grid
from .errors import ConfigError
from .mimo_channel import draw_channel, noise_variance
from .models import ChannelProfile, Constellation, CurveRecord
from .rf_chain import acpr, obo
from .transmit import TransmitChain

logger = logging.getLogger("caelab.harness")

T = TypeVar("T")

BER_COLUMNS = ["p_snr_db", "ber", "bit_count", "stderr"]
CCDF_COLUMNS = ["papr0_db", "ccdf"]
PSD_COLUMNS = ["normalized_freq", "psd_db", "linear_psd_db"]
ACPR_OBO_COLUMNS = ["method", "ibo_db", "acpr_db", "obo_db"]
PSD_DB_FLOOR = 1e-30


def frame_rng(seed: int, point: int, frame: int) -> np.random.Generator:
    """Counter-based generator for one (point, frame) cell."""
    return np.random.default_rng(np.random.SeedSequence([seed, point, frame]))


def map_frames(fn: Callable[[int], T], n_frames: int, workers: int = 1) -> List[T]:
    """Results in frame order whatever the worker count."""
    if workers <= 1:
        return [fn(i) for i in range(n_frames)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n_frames)))


def write_csv(frame: pd.DataFrame, path: Optional[Union[str, Path]]) -> Optional[Path]:
    if not path:
        return None
    path = Path(path)
    if not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")
    logger.info("Wrote %d rows to %s", len(frame), path)
    return path


def _profile(cfg: ExperimentConfig) -> ChannelProfile:
    return ChannelProfile(kind=cfg.channel.profile, taps=cfg.channel.taps, decay=cfg.channel.decay)


def build_chain(cfg: ExperimentConfig, model: Optional[CaeModel] = None) -> TransmitChain:
    if cfg.method.name == "cae" and model is None:
        model = load_model(cfg.method.checkpoint or default_checkpoint_path(), cfg.model)
    return TransmitChain(cfg, model)


def count_bit_errors(constellation: Constellation, sent: np.ndarray, detected: np.ndarray) -> int:
    """Gray-coded bit errors over both real dimensions."""
    sent_re, sent_im = constellation.indices(sent)
    det_re, det_im = constellation.indices(detected)
    errors = np.sum(constellation.bits(sent_re) != constellation.bits(det_re))
    errors += np.sum(constellation.bits(sent_im) != constellation.bits(det_im))
    return int(errors)


# ---------------------------------------------------------------- BER

def ber_point(cfg: ExperimentConfig, chain: TransmitChain, point: int, p_snr_db: float) -> CurveRecord:
    system = cfg.system
    sigma_w2 = noise_variance(p_snr_db, cfg.rf.p_t)
    profile = _profile(cfg)
    constellation = Constellation(system.order)
    bits_per_frame = system.n_t * system.k * 2 * constellation.bits_per_dim

    def _frame(i: int) -> int:
        rng = frame_rng(cfg.run.seed, point, i)
        grid = random_grid(rng, system.n_t, system.k, system.order)
        chan = draw_channel(rng, system.k, system.n_t, system.receive_antennas, profile, sigma_w2)
        result = chain.transmit(grid)
        detected = chain.receive(result, chan, rng)
        return count_bit_errors(constellation, grid.symbols, detected)

    errors = map_frames(_frame, cfg.run.frames, cfg.run.workers)
    total_bits = bits_per_frame * cfg.run.frames
    ber = float(np.sum(errors)) / total_bits
    stderr = float(np.sqrt(ber * (1.0 - ber) / total_bits))
    logger.debug("P_SNR=%.3g dB: %d bit errors in %d bits", p_snr_db, int(np.sum(errors)), total_bits)
    return CurveRecord(x=float(p_snr_db), y=ber, count=total_bits, stderr=stderr)


def run_ber(cfg: ExperimentConfig, model: Optional[CaeModel] = None, out: Optional[str] = None) -> pd.DataFrame:
    """BER against P_SNR for the configured method and detector."""
    grid = cfg.run.p_snr_grid_db
    if not grid:
        raise ConfigError("run.p_snr_grid_db is empty", key="run.p_snr_grid_db")
    chain = build_chain(cfg, model)
    logger.info("BER run: method=%s detector=%s, %d points x %d frames",
                cfg.method.name, cfg.detector, len(grid), cfg.run.frames)
    records = [ber_point(cfg, chain, point, p) for point, p in enumerate(grid)]
    frame = pd.DataFrame([(r.x, r.y, r.count, r.stderr) for r in records], columns=BER_COLUMNS)
    write_csv(frame, out if out is not None else cfg.run.out)
    logger.info("BER run finished")
    return frame


# ---------------------------------------------------------------- CCDF

def papr_samples(cfg: ExperimentConfig, chain: TransmitChain) -> np.ndarray:
    """Max-over-antennas PAPR (dB) of each band-pass filter output frame."""
    system = cfg.system

    def _frame(i: int) -> float:
        rng = frame_rng(cfg.run.seed, 0, i)
        grid = random_grid(rng, system.n_t, system.k, system.order)
        return papr_db(papr_mimo(chain.transmit(grid, hpa=False).filtered))

    return np.asarray(map_frames(_frame, cfg.run.frames, cfg.run.workers))


def run_ccdf(cfg: ExperimentConfig, thresholds_db: Optional[Sequence[float]] = None,
             model: Optional[CaeModel] = None, out: Optional[str] = None) -> pd.DataFrame:
    """Empirical P(PAPR > threshold) per threshold."""
    thresholds = list(cfg.run.thresholds_db if thresholds_db is None else thresholds_db)
    if not thresholds:
        raise ConfigError("no CCDF thresholds given", key="run.thresholds_db")
    if cfg.run.frames < 100:
        raise ConfigError(f"CCDF needs at least 100 frames, got {cfg.run.frames}", key="run.frames")
    chain = build_chain(cfg, model)
    logger.info("CCDF run: method=%s, %d frames", cfg.method.name, cfg.run.frames)
    paprs = papr_samples(cfg, chain)
    ccdf = [float(np.mean(paprs > t)) for t in thresholds]
    frame = pd.DataFrame({"papr0_db": [float(t) for t in thresholds], "ccdf": ccdf}, columns=CCDF_COLUMNS)
    write_csv(frame, out if out is not None else cfg.run.out)
    return frame


def ccdf_crossing_db(frame: pd.DataFrame, level: float = 1e-2) -> float:
    """Smallest threshold whose CCDF drops to `level` or below."""
    below = frame[frame["ccdf"] <= level]
    if below.empty:
        return float("inf")
    return float(below["papr0_db"].iloc[0])


# ---------------------------------------------------------------- PSD

def _to_db(power: np.ndarray) -> np.ndarray:
    return 10.0 * np.log10(np.maximum(power, PSD_DB_FLOOR))


def run_psd(cfg: ExperimentConfig, model: Optional[CaeModel] = None, out: Optional[str] = None) -> pd.DataFrame:
    """
    Frame-averaged PSD of the amplified signal next to the HPA-bypassed
    reference of the same frames, each normalized to a 0 dB peak.
    Frequencies are in units of the signal bandwidth, DC centered.
    """
    system = cfg.system
    chain = build_chain(cfg, model)
    segment = cfg.run.psd_segment

    def _frame(i: int):
        rng = frame_rng(cfg.run.seed, 0, i)
        grid = random_grid(rng, system.n_t, system.k, system.order)
        result = chain.transmit(grid)
        return (estimate_psd(result.amplified, segment).bin_power,
                estimate_psd(result.backed_off, segment).bin_power)

    logger.info("PSD run: method=%s, %d frames", cfg.method.name, cfg.run.frames)
    traces = map_frames(_frame, cfg.run.frames, cfg.run.workers)
    amplified = np.mean([t[0] for t in traces], axis=0)
    linear = np.mean([t[1] for t in traces], axis=0)
    freqs = np.fft.fftshift(np.fft.fftfreq(amplified.size)) * system.l
    frame = pd.DataFrame({
        "normalized_freq": freqs,
        "psd_db": _to_db(np.fft.fftshift(amplified) / amplified.max()),
        "linear_psd_db": _to_db(np.fft.fftshift(linear) / linear.max()),
    }, columns=PSD_COLUMNS)
    write_csv(frame, out if out is not None else cfg.run.out)
    return frame


# ---------------------------------------------------------------- ACPR / OBO

def acpr_obo_row(cfg: ExperimentConfig, chain: TransmitChain, ibo_db: float):
    system = cfg.system

    def _frame(i: int):
        rng = frame_rng(cfg.run.seed, 0, i)
        grid = random_grid(rng, system.n_t, system.k, system.order)
        result = chain.transmit(grid, ibo_db=ibo_db)
        psd = estimate_psd(result.amplified, cfg.run.psd_segment)
        return acpr(psd, system.l), obo(result.backed_off, cfg.rf.p_t)

    values = map_frames(_frame, cfg.run.frames, cfg.run.workers)
    return (cfg.method.name, float(ibo_db),
            float(np.mean([v[0] for v in values])), float(np.mean([v[1] for v in values])))


def run_acpr_obo(cfgs: Sequence[ExperimentConfig], models: Optional[Sequence[Optional[CaeModel]]] = None,
                 out: Optional[str] = None) -> pd.DataFrame:
    """One row per (config, IBO); IBO comes from `run.ibo_sweep_db` or `rf.ibo_db`."""
    if not cfgs:
        raise ConfigError("acpr-obo needs at least one configuration")
    models = list(models) if models is not None else [None] * len(cfgs)
    rows = []
    for cfg, model in zip(cfgs, models):
        chain = build_chain(cfg, model)
        for ibo_db in cfg.run.ibo_sweep_db or [cfg.rf.ibo_db]:
            rows.append(acpr_obo_row(cfg, chain, ibo_db))
            logger.info("ACPR/OBO: method=%s ibo=%.3g dB -> acpr=%.4g dB obo=%.4g dB", *rows[-1])
    frame = pd.DataFrame(rows, columns=ACPR_OBO_COLUMNS)
    write_csv(frame, out if out is not None else cfgs[0].run.out)
    return frame
