"""
Data models for the caelab waveform laboratory.
Contains the signal, channel, amplifier and training-state structures.
"""

from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import List, Optional

import numpy as np

from .errors import ChannelError, SignalError

SUPPORTED_ORDERS = (4, 16)


class Stage(IntEnum):
    """Pipeline position of a time-domain frame, in transmit order."""
    RAW = 0
    ENCODED = 1
    FILTERED = 2
    BACKED_OFF = 3
    AMPLIFIED = 4


@dataclass(frozen=True)
class Constellation:
    """Unit-average-energy square QAM with Gray-coded per-dimension levels"""
    order: int

    def __post_init__(self):
        if self.order not in SUPPORTED_ORDERS:
            raise SignalError(f"constellation order must be one of {SUPPORTED_ORDERS}, got {self.order}")

    @property
    def levels_per_dim(self) -> int:
        return int(round(np.sqrt(self.order)))

    @property
    def bits_per_dim(self) -> int:
        return int(np.log2(self.levels_per_dim))

    @property
    def levels(self) -> np.ndarray:
        """Real PAM levels l_q, ascending, scaled so mean |s|^2 = 1 for the full QAM."""
        n_c = self.levels_per_dim
        scale = np.sqrt(3.0 / (2.0 * (self.order - 1)))
        return (2.0 * np.arange(n_c) - (n_c - 1)) * scale

    @property
    def gray_bits(self) -> np.ndarray:
        """[N_c x bits_per_dim] Gray code of each level index."""
        n_c = self.levels_per_dim
        codes = np.arange(n_c) ^ (np.arange(n_c) >> 1)
        shifts = np.arange(self.bits_per_dim)[::-1]
        return ((codes[:, None] >> shifts) & 1).astype(np.int8)

    @property
    def points(self) -> np.ndarray:
        """All |M| symbols, real index major."""
        lv = self.levels
        return (lv[:, None] + 1j * lv[None, :]).reshape(-1)

    def symbols(self, re_index: np.ndarray, im_index: np.ndarray) -> np.ndarray:
        lv = self.levels
        return lv[re_index] + 1j * lv[im_index]

    def slice_levels(self, values: np.ndarray) -> np.ndarray:
        """Nearest level index for each real value."""
        lv = self.levels
        return np.argmin(np.abs(np.asarray(values)[..., None] - lv), axis=-1)

    def indices(self, symbols: np.ndarray):
        """(re_index, im_index) of the nearest constellation point."""
        symbols = np.asarray(symbols)
        return self.slice_levels(symbols.real), self.slice_levels(symbols.imag)

    def bits(self, level_index: np.ndarray) -> np.ndarray:
        return self.gray_bits[np.asarray(level_index)]


@dataclass
class OfdmGrid:
    """Frequency-domain symbol matrix [N_t x K]"""
    symbols: np.ndarray
    constellation_order: int

    def __post_init__(self):
        self.symbols = np.asarray(self.symbols, dtype=np.complex128)
        if self.symbols.ndim != 2 or self.symbols.size == 0:
            raise SignalError(f"grid must be a nonempty N_t x K matrix, got shape {self.symbols.shape}")
        const = Constellation(self.constellation_order)
        re_idx, im_idx = const.indices(self.symbols)
        if not np.allclose(const.symbols(re_idx, im_idx), self.symbols, atol=1e-9):
            raise SignalError("grid contains symbols outside the QAM alphabet")

    @property
    def n_t(self) -> int:
        return self.symbols.shape[0]

    @property
    def k(self) -> int:
        return self.symbols.shape[1]

    @property
    def constellation(self) -> Constellation:
        return Constellation(self.constellation_order)


@dataclass
class TimeFrame:
    """Time-domain MIMO signal [N_t x (L*K)] tagged with its pipeline stage"""
    samples: np.ndarray
    oversampling: int
    k: int
    stage: Stage = Stage.RAW

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.complex128)
        if self.samples.ndim != 2 or self.samples.size == 0:
            raise SignalError(f"frame must be a nonempty N_t x N matrix, got shape {self.samples.shape}")
        if self.oversampling < 1:
            raise SignalError(f"oversampling factor must be >= 1, got {self.oversampling}")
        if self.samples.shape[1] != self.oversampling * self.k:
            raise SignalError(
                f"frame length {self.samples.shape[1]} != L*K = {self.oversampling}*{self.k}"
            )

    @property
    def n_t(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]

    @property
    def mean_power(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2))

    def advance(self, samples: np.ndarray, stage: Optional[Stage] = None) -> "TimeFrame":
        """New frame with the same geometry; stage may only move forward."""
        stage = self.stage if stage is None else stage
        if stage < self.stage:
            raise SignalError(f"stage cannot move back from {self.stage.name} to {stage.name}")
        return replace(self, samples=samples, stage=stage)


@dataclass
class PsdEstimate:
    """Power per frequency bin in FFT order"""
    bin_power: np.ndarray
    bin_spacing: float

    @property
    def n_bins(self) -> int:
        return self.bin_power.size

    @property
    def freqs(self) -> np.ndarray:
        """Normalized frequency (cycles/sample) of each bin, FFT order."""
        return np.fft.fftfreq(self.n_bins)

    @property
    def total_power(self) -> float:
        return float(np.sum(self.bin_power))

    def shifted(self):
        """(freqs, power) with DC in the middle."""
        return np.fft.fftshift(self.freqs), np.fft.fftshift(self.bin_power)


@dataclass(frozen=True)
class RappParams:
    """Memoryless AM/AM solid-state amplifier model"""
    a0: float
    v: float = 1.0
    p: float = 2.0

    def __post_init__(self):
        if self.a0 <= 0 or self.v <= 0 or self.p <= 0:
            raise SignalError(f"RAPP parameters must be positive, got a0={self.a0} v={self.v} p={self.p}")

    @classmethod
    def from_budget(cls, p_t: float, n_t: int, v: float = 1.0, p: float = 2.0) -> "RappParams":
        """Per-amplifier saturation A0 = sqrt(P_T / N_t)."""
        return cls(a0=float(np.sqrt(p_t / n_t)), v=v, p=p)


@dataclass(frozen=True)
class BussgangFactor:
    alpha: complex


@dataclass
class SpectralReport:
    acpr_db: float
    obo_db: float
    psd: PsdEstimate


@dataclass(frozen=True)
class ChannelProfile:
    """AWGN (fixed identity-like gain) or exponential multipath taps"""
    kind: str = "multipath"
    taps: int = 13
    decay: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("awgn", "multipath"):
            raise ChannelError(f"unknown channel profile '{self.kind}'")
        if self.kind == "multipath" and self.taps < 1:
            raise ChannelError(f"tap count must be >= 1, got {self.taps}")

    @property
    def tap_decay(self) -> float:
        """Per-tap power ratio; by default the last tap carries 1% of the first."""
        if self.decay is not None:
            return self.decay
        if self.taps == 1:
            return 1.0
        return 0.01 ** (1.0 / (self.taps - 1))

    def tap_powers(self) -> np.ndarray:
        powers = self.tap_decay ** np.arange(self.taps)
        return powers / powers.sum()


@dataclass
class ChannelRealization:
    """Per-subcarrier channel matrices [K x N_r x N_t] plus noise variance"""
    h: np.ndarray
    sigma_w2: float
    profile: ChannelProfile = field(default_factory=ChannelProfile)

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=np.complex128)
        if self.h.ndim != 3:
            raise ChannelError(f"channel must be K x N_r x N_t, got shape {self.h.shape}")
        if self.sigma_w2 < 0:
            raise ChannelError(f"noise variance must be >= 0, got {self.sigma_w2}")
        if not np.all(np.isfinite(self.h)):
            raise ChannelError("channel contains non-finite entries")

    @property
    def k(self) -> int:
        return self.h.shape[0]

    @property
    def n_r(self) -> int:
        return self.h.shape[1]

    @property
    def n_t(self) -> int:
        return self.h.shape[2]

    def with_noise(self, sigma_w2: float) -> "ChannelRealization":
        return replace(self, sigma_w2=sigma_w2)


@dataclass
class SlmCodebook:
    """U phase sequences over {+1, -1, +j, -j}; candidate 0 is all ones"""
    phases: np.ndarray
    seed: int = 0

    def __post_init__(self):
        self.phases = np.asarray(self.phases, dtype=np.complex128)
        if self.phases.ndim != 2 or self.phases.shape[0] < 1:
            raise SignalError(f"codebook must be U x K with U >= 1, got shape {self.phases.shape}")
        if not np.allclose(np.abs(self.phases), 1.0, atol=0):
            raise SignalError("codebook entries must have unit modulus")

    @property
    def u(self) -> int:
        return self.phases.shape[0]

    @classmethod
    def generate(cls, u: int, k: int, seed: int = 0) -> "SlmCodebook":
        if u < 1:
            raise SignalError(f"SLM needs at least one candidate, got U={u}")
        rng = np.random.default_rng(seed)
        alphabet = np.array([1, -1, 1j, -1j], dtype=np.complex128)
        phases = alphabet[rng.integers(0, 4, size=(u, k))]
        phases[0] = 1.0
        return cls(phases=phases, seed=seed)


@dataclass(frozen=True)
class ClipConfig:
    clip_ratio_db: float = 4.08

    def __post_init__(self):
        if not np.isfinite(self.clip_ratio_db):
            raise SignalError(f"clip ratio must be finite, got {self.clip_ratio_db}")


@dataclass
class LagrangianState:
    """Augmented-Lagrangian multipliers (updated) and penalties (fixed)"""
    lambda_2a: float = 0.015
    lambda_2b: float = 0.001
    lambda_3: float = 0.005
    rho_2a: float = 0.0015
    rho_2b: float = 0.00001
    rho_3: float = 0.001
    k: int = 0
    history: List[dict] = field(default_factory=list)

    def __post_init__(self):
        if self.lambda_3 < 0:
            raise SignalError(f"lambda_3 must be >= 0, got {self.lambda_3}")


@dataclass
class CurveRecord:
    """One point of a Monte Carlo curve"""
    x: float
    y: float
    count: int
    stderr: float
