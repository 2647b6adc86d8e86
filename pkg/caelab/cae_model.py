"""
Convolutional autoencoder for MIMO-OFDM: the PAPR-reducing encoder, the
differentiable transmit chain, the iterative projected-gradient decoder,
the constraint losses and the augmented-Lagrangian trainer.

Tensors use a real [Re-block; Im-block] layout along the last axis:
time frames are [B, N_t, 2*L*K], frequency grids [B, N_t, 2*K].
"""

import logging
import re
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNorm, Conv2d, DiffTensor, Linear, Module
from .checkpoint_storage import load_checkpoint, save_checkpoint, save_training_log
from .config import ExperimentConfig, ModelConfig, SystemConfig
from .dsp_core import dft_adjoint_apply, dft_matrix_apply, idft_matrix_apply
from .errors import CheckpointError, SignalError, TrainingError
from .mimo_channel import complex_noise, draw_channel, noise_variance, realify
from .models import ChannelProfile, Constellation, LagrangianState, RappParams, TimeFrame
from .rf_chain import ACPR_RATIO_FLOOR, band_masks, bandpass_samples, bussgang_alpha_samples

logger = logging.getLogger("caelab.cae_model")


# ---------------------------------------------------------------- networks

class EncoderNet(Module):
    """Per-antenna 1-D convolution stack with a residual and an input skip."""

    def __init__(self, rng: np.random.Generator, n_t: int, k: int, oversampling: int, cfg: ModelConfig):
        super().__init__()
        self.n_t = n_t
        self.width = 2 * oversampling * k
        self.fc_mode = cfg.fc_mode
        self.activation = ad.ACTIVATIONS[cfg.activation]
        c1, c2, c3 = cfg.encoder_channels
        if c3 != c1:
            raise SignalError(f"encoder residual needs equal stage-1 and stage-3 widths, got {c1} and {c3}")
        kernel = tuple(cfg.encoder_kernel)
        self.conv1 = Conv2d(rng, 1, c1, kernel)
        self.bn1 = BatchNorm(c1)
        self.conv2 = Conv2d(rng, c1, c2, kernel)
        self.bn2 = BatchNorm(c2)
        self.conv3 = Conv2d(rng, c2, c3, kernel)
        self.bn3 = BatchNorm(c3)
        if cfg.fc_mode == "pointwise":
            self.fc = Linear(rng, c3, 1, zero_init=True)
        else:
            self.fc = Linear(rng, c3 * self.width, self.width, zero_init=True)


class DecoderIteration(Module):
    """One unfolded gradient step: two conv stages and a column-wise FC."""

    def __init__(self, rng: np.random.Generator, n_t: int, n_c: int, cfg: ModelConfig, final: bool):
        super().__init__()
        self.activation = ad.ACTIVATIONS[cfg.activation]
        self.final = final
        c1, c2 = cfg.decoder_channels
        kernel = tuple(cfg.decoder_kernel)
        rows = 3 * n_t
        self.conv1 = Conv2d(rng, 1, c1, kernel)
        self.bn1 = BatchNorm(c1)
        self.conv2 = Conv2d(rng, c1, c2, kernel)
        self.bn2 = BatchNorm(c2)
        self.fc = Linear(rng, c2 * rows + rows, n_t * n_c if final else n_t)
        self.delta1 = ad.parameter(np.array(cfg.delta1_init))
        self.delta2 = ad.parameter(np.array(cfg.delta2_init))

    def __call__(self, d: DiffTensor) -> DiffTensor:
        """[B, 3N_t, 2K] features -> [B, 2K, out] per column."""
        batch, rows, width = d.shape
        h = ad.reshape(d, (batch, 1, rows, width))
        h = self.activation(self.bn1(self.conv1(h)))
        h = self.activation(self.bn2(self.conv2(h)))
        channels = h.shape[1]
        cols = ad.reshape(ad.transpose(h, (0, 3, 1, 2)), (batch, width, channels * rows))
        raw = ad.transpose(d, (0, 2, 1))
        return self.fc(ad.concat([cols, raw], axis=2))


class DecoderNet(Module):
    def __init__(self, rng: np.random.Generator, n_t: int, order: int, cfg: ModelConfig):
        super().__init__()
        self.n_t = n_t
        self.constellation = Constellation(order)
        n_c = self.constellation.levels_per_dim
        self.iter = [DecoderIteration(rng, n_t, n_c, cfg, final=(i == cfg.decoder_iterations - 1))
                     for i in range(cfg.decoder_iterations)]


class CaeModel(Module):
    """Encoder and decoder trained jointly for one system geometry."""

    def __init__(self, system: SystemConfig, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.n_t = system.n_t
        self.n_r = system.receive_antennas
        self.k = system.k
        self.oversampling = system.l
        self.order = system.order
        self.model_cfg = cfg
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
        self.encoder = EncoderNet(rng, self.n_t, self.k, self.oversampling, cfg)
        self.decoder = DecoderNet(rng, self.n_t, self.order, cfg)

    @property
    def constellation(self) -> Constellation:
        return self.decoder.constellation

    def meta(self) -> Dict[str, float]:
        return {
            "meta.n_t": float(self.n_t),
            "meta.n_r": float(self.n_r),
            "meta.k": float(self.k),
            "meta.l": float(self.oversampling),
            "meta.order": float(self.order),
            "meta.decoder_iterations": float(len(self.decoder.iter)),
        }

    def state_tensors(self) -> Dict[str, np.ndarray]:
        tensors: Dict[str, np.ndarray] = {name: np.array(v) for name, v in self.meta().items()}
        tensors.update({name: p.values for name, p in self.named_parameters().items()})
        tensors.update(self.named_buffers())
        return tensors


def parameter_count(model: Module) -> Dict[str, int]:
    """Trainable parameter count per top-level block plus the total."""
    counts = {name: ad.parameter_count(child) for name, child in model.children().items()}
    counts["total"] = ad.parameter_count(model)
    return counts


# ---------------------------------------------------------------- real-layout helpers

def _halves(x: DiffTensor) -> Tuple[DiffTensor, DiffTensor]:
    n = x.shape[-1] // 2
    return ad.take(x, np.arange(n), axis=-1), ad.take(x, np.arange(n, 2 * n), axis=-1)


def _frame_power(x: DiffTensor) -> DiffTensor:
    """Mean complex sample power per frame, shape [B, 1, 1]."""
    return ad.mul(ad.mean(ad.mul(x, x), axis=(1, 2), keepdims=True), 2.0)


def frames_to_tensor(frames: Union[TimeFrame, Sequence[TimeFrame]]) -> DiffTensor:
    if isinstance(frames, TimeFrame):
        frames = [frames]
    return ad.constant(np.stack([realify(f.samples) for f in frames]))


def tensor_to_samples(x: Union[DiffTensor, np.ndarray]) -> np.ndarray:
    values = x.values if isinstance(x, DiffTensor) else np.asarray(x)
    half = values.shape[-1] // 2
    return values[..., :half] + 1j * values[..., half:]


# ---------------------------------------------------------------- forward passes

def encoder_forward(net: EncoderNet, x_time: DiffTensor) -> DiffTensor:
    """Encoded frames [B, N_t, 2LK], each normalized to unit mean power."""
    if x_time.ndim != 3 or x_time.shape[1:] != (net.n_t, net.width):
        raise SignalError(f"encoder expects [B, {net.n_t}, {net.width}], got {x_time.shape}")
    batch = x_time.shape[0]
    x4 = ad.reshape(x_time, (batch, 1, net.n_t, net.width))
    act = net.activation
    a1 = act(net.bn1(net.conv1(x4)))
    a2 = act(net.bn2(net.conv2(a1)))
    # residual from the input of conv2
    h = act(ad.add(net.bn3(net.conv3(a2)), a1))
    channels = h.shape[1]
    if net.fc_mode == "pointwise":
        out = net.fc(ad.transpose(h, (0, 2, 3, 1)))
        out = ad.reshape(out, (batch, net.n_t, net.width))
    else:
        rows = ad.reshape(ad.transpose(h, (0, 2, 1, 3)), (batch, net.n_t, channels * net.width))
        out = net.fc(rows)
    y = ad.add(x_time, out)
    return ad.div(y, ad.sqrt(_frame_power(y)))


def bandpass_tensor(x: DiffTensor, k: int) -> DiffTensor:
    """Out-of-band bins zeroed; the projection is self-adjoint."""
    return ad.complex_linear(x, lambda z: bandpass_samples(z, k), lambda g: bandpass_samples(g, k))


def ibo_tensor(x: DiffTensor, ibo_db: float, params: RappParams) -> DiffTensor:
    """Per-frame scaling to mean power A0^2 / 10^(ibo/10)."""
    target = params.a0 ** 2 / 10.0 ** (ibo_db / 10.0)
    return ad.div(ad.mul(x, np.sqrt(target)), ad.sqrt(_frame_power(x)))


def rapp_tensor(x: DiffTensor, params: RappParams) -> DiffTensor:
    """AM/AM compression written on the squared amplitude, phase kept."""
    re_part, im_part = _halves(x)
    ratio = ad.mul(ad.add(ad.mul(re_part, re_part), ad.mul(im_part, im_part)), params.v ** 2 / params.a0 ** 2)
    factor = ad.mul(ad.power(ad.add(ad.power(ratio, params.p), 1.0), -1.0 / (2.0 * params.p)), params.v)
    return ad.concat([ad.mul(re_part, factor), ad.mul(im_part, factor)], axis=-1)


@dataclass
class TransmitTrace:
    """Intermediate signals of one differentiable transmit pass."""
    encoded: DiffTensor
    filtered: DiffTensor
    backed_off: DiffTensor
    amplified: DiffTensor
    freq: DiffTensor
    alpha: complex


def transmit_tensor(x_e: DiffTensor, k: int, oversampling: int, ibo_db: float, params: RappParams,
                    hpa: bool = True, alpha: Optional[complex] = None) -> TransmitTrace:
    """BPF -> IBO -> RAPP -> FFT/unpad, with alpha estimated from values and detached unless given."""
    x_f = bandpass_tensor(x_e, k)
    x_b = ibo_tensor(x_f, ibo_db, params)
    if hpa:
        x_p = rapp_tensor(x_b, params)
        if alpha is None:
            alpha = bussgang_alpha_samples(tensor_to_samples(x_b), tensor_to_samples(x_p))
    else:
        x_p = x_b
        alpha = 1.0 + 0.0j if alpha is None else alpha
    freq = ad.complex_linear(x_p, lambda z: dft_matrix_apply(z, k),
                             lambda g: dft_adjoint_apply(g, oversampling))
    return TransmitTrace(x_e, x_f, x_b, x_p, freq, alpha)


def channel_tensor(x_freq: DiffTensor, h: np.ndarray, noise: np.ndarray, alpha: complex) -> DiffTensor:
    """
    y/alpha per subcarrier.

    x_freq is [B, N_t, 2K], h is [B, K, N_r, N_t], noise is complex [B, N_r, K].
    """
    y = ad.complex_linear(x_freq,
                          lambda z: np.einsum("bkrt,btk->brk", h, z),
                          lambda g: np.einsum("bkrt,brk->btk", np.conj(h), g))
    y = ad.add(y, ad.constant(realify(noise)))
    return ad.complex_linear(y, lambda z: z / alpha, lambda g: g / np.conj(alpha))


@dataclass
class DecoderOutput:
    logits: DiffTensor
    probs: np.ndarray
    level_index: np.ndarray
    symbols: np.ndarray


def decoder_forward(net: DecoderNet, h: np.ndarray, y: DiffTensor, x0: Optional[np.ndarray] = None,
                    rng: Optional[np.random.Generator] = None) -> DecoderOutput:
    """
    Unfolded detector over d_k = (x_hat, delta1 H^H y, delta2 H^H H x_hat).

    h is [B, K, N_r, N_t], y is the real [B, N_r, 2K] observation. Returns
    logits [B, N_t, 2K, N_c], their softmax, argmax level indices and the
    complex hard decisions [B, N_t, K].
    """
    batch, n_r, width = y.shape
    k = width // 2
    if h.shape != (batch, k, n_r, net.n_t):
        raise SignalError(f"channel shape {h.shape} does not match observation {y.shape} and N_t={net.n_t}")
    if x0 is None:
        rng = rng if rng is not None else np.random.default_rng()
        x0 = rng.uniform(-1.0, 1.0, size=(batch, net.n_t, width))
    if x0.shape != (batch, net.n_t, width):
        raise SignalError(f"initial estimate shape {x0.shape} != {(batch, net.n_t, width)}")

    gram = np.einsum("bkrt,bkrs->bkts", np.conj(h), h)
    hh_y = ad.complex_linear(y,
                             lambda z: np.einsum("bkrt,brk->btk", np.conj(h), z),
                             lambda g: np.einsum("bkrt,btk->brk", h, g))
    x_hat = ad.constant(x0)
    out = None
    for block in net.iter:
        hh_hx = ad.complex_linear(x_hat,
                                  lambda z: np.einsum("bkts,bsk->btk", gram, z),
                                  lambda g: np.einsum("bkts,btk->bsk", np.conj(gram), g))
        d = ad.concat([x_hat, ad.mul(block.delta1, hh_y), ad.mul(block.delta2, hh_hx)], axis=1)
        out = block(d)
        if not block.final:
            x_hat = ad.transpose(out, (0, 2, 1))
    n_c = net.constellation.levels_per_dim
    logits = ad.transpose(ad.reshape(out, (batch, width, net.n_t, n_c)), (0, 2, 1, 3))
    probs = ad.softmax_values(logits.values)
    level_index = np.argmax(probs, axis=-1)
    symbols = net.constellation.symbols(level_index[..., :k], level_index[..., k:])
    return DecoderOutput(logits=logits, probs=probs, level_index=level_index, symbols=symbols)


# ---------------------------------------------------------------- losses

def loss_l1(logits: DiffTensor, targets: np.ndarray) -> DiffTensor:
    """Summed negative log-likelihood of the level indices over every position."""
    return ad.softmax_nll(logits, targets)


def papr_tensor(x: Union[DiffTensor, Sequence[TimeFrame], TimeFrame]) -> DiffTensor:
    """Per-frame max-over-antennas PAPR (linear), shape [B]."""
    x = x if isinstance(x, DiffTensor) else frames_to_tensor(x)
    re_part, im_part = _halves(x)
    power = ad.add(ad.mul(re_part, re_part), ad.mul(im_part, im_part))
    if np.any(power.values.mean(axis=-1) == 0):
        raise SignalError("PAPR is undefined for a zero-power antenna row")
    per_antenna = ad.div(ad.max_along(power, axis=-1), ad.mean(power, axis=-1))
    return ad.max_along(per_antenna, axis=-1)


def loss_papr(frame_e, frame_f) -> Tuple[DiffTensor, DiffTensor]:
    """(L2a, L2b): batch-mean max-antenna PAPR before and after the BPF."""
    return ad.mean(papr_tensor(frame_e)), ad.mean(papr_tensor(frame_f))


def acpr_tensor(x_p: Union[DiffTensor, Sequence[TimeFrame], TimeFrame], oversampling: int) -> DiffTensor:
    """ACPR in dB of the batch-averaged one-symbol periodogram."""
    if oversampling < 2:
        raise SignalError(f"ACPR needs L >= 2, got L={oversampling}")
    x_p = x_p if isinstance(x_p, DiffTensor) else frames_to_tensor(x_p)
    n = x_p.shape[-1] // 2
    spectrum = ad.complex_linear(x_p, lambda z: np.fft.fft(z, axis=-1) / n, lambda g: np.fft.ifft(g, axis=-1))
    re_part, im_part = _halves(spectrum)
    bins = ad.mean(ad.add(ad.mul(re_part, re_part), ad.mul(im_part, im_part)), axis=(0, 1))
    main, lower, upper = band_masks(n, oversampling)
    p_main = ad.sum(ad.mul(bins, main.astype(np.float64)))
    if p_main.values <= 0:
        raise SignalError("ACPR is undefined without in-band power")
    p_adj = ad.maximum(ad.sum(ad.mul(bins, upper.astype(np.float64))),
                       ad.sum(ad.mul(bins, lower.astype(np.float64))))
    ratio = ad.clamp_min(ad.div(p_adj, p_main), ACPR_RATIO_FLOOR)
    return ad.mul(ad.log(ratio), 10.0 / np.log(10.0))


def loss_acpr(frame_p, acpr_req_db: float, oversampling: Optional[int] = None) -> DiffTensor:
    """L3 = ACPR - ACPR_req (dB); negative when the mask is met."""
    if oversampling is None:
        if isinstance(frame_p, DiffTensor):
            raise SignalError("oversampling factor is required for tensor input")
        oversampling = (frame_p if isinstance(frame_p, TimeFrame) else frame_p[0]).oversampling
    return ad.sub(acpr_tensor(frame_p, oversampling), acpr_req_db)


def total_loss(l1, l2a, l2b, l3, state: LagrangianState) -> DiffTensor:
    """Augmented-Lagrangian objective with the inequality term on L3."""
    if state.rho_3 <= 0 or state.rho_2a < 0 or state.rho_2b < 0:
        raise TrainingError(
            f"penalties must satisfy rho_3 > 0 and rho_2a, rho_2b >= 0, "
            f"got ({state.rho_2a}, {state.rho_2b}, {state.rho_3})"
        )
    l1, l2a, l2b, l3 = (x if isinstance(x, DiffTensor) else ad.constant(x) for x in (l1, l2a, l2b, l3))
    papr_a = ad.add(ad.mul(l2a, state.lambda_2a), ad.mul(ad.mul(l2a, l2a), state.rho_2a / 2.0))
    papr_b = ad.add(ad.mul(l2b, state.lambda_2b), ad.mul(ad.mul(l2b, l2b), state.rho_2b / 2.0))
    active = ad.clamp_min(ad.add(ad.mul(l3, state.rho_3), state.lambda_3), 0.0)
    spectral = ad.mul(ad.sub(ad.mul(active, active), state.lambda_3 ** 2), 1.0 / (2.0 * state.rho_3))
    return ad.add(ad.add(ad.add(l1, papr_a), papr_b), spectral)


def update_multipliers(state: LagrangianState, mean_l2a: float, mean_l2b: float, mean_l3: float) -> LagrangianState:
    """One dual-ascent step; lambda_3 stays nonnegative."""
    updated = replace(
        state,
        lambda_2a=state.lambda_2a + state.rho_2a * mean_l2a,
        lambda_2b=state.lambda_2b + state.rho_2b * mean_l2b,
        lambda_3=max(0.0, state.lambda_3 + state.rho_3 * mean_l3),
        k=state.k + 1,
        history=list(state.history),
    )
    updated.history.append({"k": updated.k, "lambda_2a": updated.lambda_2a,
                            "lambda_2b": updated.lambda_2b, "lambda_3": updated.lambda_3})
    return updated


# ---------------------------------------------------------------- data

@dataclass
class TrainingBatch:
    """Level-index targets [B, N_t, 2K] and their raw time frames [B, N_t, L*K]"""
    targets: np.ndarray
    samples: np.ndarray


def random_batch(rng: np.random.Generator, system: SystemConfig, batch_size: int) -> TrainingBatch:
    const = Constellation(system.order)
    targets = rng.integers(0, const.levels_per_dim, size=(batch_size, system.n_t, 2 * system.k))
    symbols = const.symbols(targets[..., :system.k], targets[..., system.k:])
    return TrainingBatch(targets=targets, samples=idft_matrix_apply(symbols, system.l))


def batch_stream(rng: np.random.Generator, system: SystemConfig, batch_size: int) -> Iterator[TrainingBatch]:
    while True:
        yield random_batch(rng, system, batch_size)


def draw_channels(rng: np.random.Generator, system: SystemConfig, profile: ChannelProfile,
                  batch_size: int) -> np.ndarray:
    """[B, K, N_r, N_t] stack of independent realizations."""
    return np.stack([draw_channel(rng, system.k, system.n_t, system.receive_antennas, profile).h
                     for _ in range(batch_size)])


# ---------------------------------------------------------------- training

@dataclass
class StepResult:
    loss: DiffTensor
    l1: float
    l2a: float
    l2b: float
    l3: float
    errors: int
    positions: int
    alpha: complex = 1.0 + 0.0j


def forward_losses(model: CaeModel, batch: TrainingBatch, h: np.ndarray, noise: np.ndarray, x0: np.ndarray,
                   cfg: ExperimentConfig, state: LagrangianState, constrained: bool,
                   alpha: Optional[complex] = None) -> StepResult:
    """Full pipeline from raw frames to the scalar training objective."""
    params = RappParams.from_budget(cfg.rf.p_t, model.n_t, cfg.rf.v, cfg.rf.p)
    x_in = ad.constant(realify(batch.samples))
    x_e = encoder_forward(model.encoder, x_in)
    trace = transmit_tensor(x_e, model.k, model.oversampling, cfg.rf.ibo_db, params, cfg.rf.hpa, alpha)
    y = channel_tensor(trace.freq, h, noise, trace.alpha)
    out = decoder_forward(model.decoder, h, y, x0=x0)
    l1 = loss_l1(out.logits, batch.targets)
    l2a, l2b = loss_papr(trace.encoded, trace.filtered)
    if model.oversampling >= 2:
        l3 = ad.sub(acpr_tensor(trace.amplified, model.oversampling), cfg.training.acpr_req_db)
    else:
        l3 = ad.constant(0.0)  # no adjacent band is sampled at L = 1
    loss = total_loss(l1, l2a, l2b, l3, state) if constrained else l1
    return StepResult(
        loss=loss, l1=float(l1.values), l2a=float(l2a.values), l2b=float(l2b.values), l3=float(l3.values),
        errors=int(np.sum(out.level_index != batch.targets)), positions=int(batch.targets.size), alpha=trace.alpha,
    )


@dataclass
class TrainResult:
    model: CaeModel
    state: LagrangianState
    log: List[Dict] = field(default_factory=list)
    checkpoint_path: Optional[str] = None


def _grad_norm(params: Iterable[DiffTensor]) -> float:
    return float(np.sqrt(np.sum([np.sum(p.grad ** 2) for p in params])))


def train(cfg: ExperimentConfig, data: Optional[Iterable[TrainingBatch]] = None,
          checkpoint_path: Optional[str] = None) -> TrainResult:
    """
    Gradual loss learning: the first `gradual_start_epoch` epochs minimize L1
    only, later epochs the augmented-Lagrangian objective, with one
    multiplier update per epoch on epoch-mean constraint values.
    """
    tc = cfg.training
    system = cfg.system
    data_rng = np.random.default_rng(np.random.SeedSequence([tc.seed, 0xDA7A]))
    model = CaeModel(system, cfg.model, seed=tc.seed)
    model.train()
    params = model.named_parameters()
    optimizer = ad.AdamW(params, lr=tc.lr, weight_decay=tc.weight_decay)
    state = LagrangianState(tc.lambda_2a, tc.lambda_2b, tc.lambda_3, tc.rho_2a, tc.rho_2b, tc.rho_3)
    profile = ChannelProfile(kind=cfg.channel.profile, taps=cfg.channel.taps, decay=cfg.channel.decay)
    sigma_w2 = noise_variance(tc.train_snr_db, cfg.rf.p_t)
    stream = iter(data) if data is not None else batch_stream(data_rng, system, tc.batch_size)
    counts = parameter_count(model)
    logger.info("Training CAE: %s parameters (%s), %d epochs, AL from epoch %d",
                counts["total"], ", ".join(f"{k}={v}" for k, v in counts.items() if k != "total"),
                tc.epochs, tc.gradual_start_epoch + 1)

    log: List[Dict] = []
    seen_any = False
    for epoch in range(1, tc.epochs + 1):
        constrained = epoch > tc.gradual_start_epoch
        sums = np.zeros(5)
        steps = 0
        for _ in range(tc.batches_per_epoch):
            batch = next(stream, None)
            if batch is None:
                break
            seen_any = True
            b = batch.targets.shape[0]
            h = draw_channels(data_rng, system, profile, b)
            noise = complex_noise(data_rng, (b, system.receive_antennas, system.k), sigma_w2)
            x0 = data_rng.uniform(-1.0, 1.0, size=(b, system.n_t, 2 * system.k))
            step = forward_losses(model, batch, h, noise, x0, cfg, state, constrained)
            ad.backward(step.loss, params.values())
            grad_norm = _grad_norm(params.values())
            record = {"epoch": epoch, "L1": step.l1, "L2a": step.l2a, "L2b": step.l2b, "L3": step.l3,
                      "lambda_2a": state.lambda_2a, "lambda_2b": state.lambda_2b, "lambda_3": state.lambda_3,
                      "grad_norm": grad_norm}
            if not np.isfinite(float(step.loss.values)) or not np.isfinite(grad_norm):
                raise TrainingError(f"non-finite loss or gradient at epoch {epoch}, step {steps + 1}", record=record)
            optimizer.step()
            sums += (step.l1, step.l2a, step.l2b, step.l3, grad_norm)
            steps += 1
        if steps == 0:
            if not seen_any:
                raise TrainingError("training data stream is empty", record={"epoch": epoch})
            logger.warning("Data stream exhausted after epoch %d", epoch - 1)
            break
        mean_l1, mean_l2a, mean_l2b, mean_l3, mean_grad = sums / steps
        log.append({"epoch": epoch, "L1": mean_l1, "L2a": mean_l2a, "L2b": mean_l2b, "L3": mean_l3,
                    "lambda_2a": state.lambda_2a, "lambda_2b": state.lambda_2b, "lambda_3": state.lambda_3,
                    "grad_norm": mean_grad})
        logger.info("epoch=%d phase=%s L1=%.6g L2a=%.6g L2b=%.6g L3=%.6g lambda=(%.6g, %.6g, %.6g) grad_norm=%.6g",
                    epoch, "al" if constrained else "l1", mean_l1, mean_l2a, mean_l2b, mean_l3,
                    state.lambda_2a, state.lambda_2b, state.lambda_3, mean_grad)
        if constrained:
            state = update_multipliers(state, mean_l2a, mean_l2b, mean_l3)
            logger.info("multipliers updated k=%d lambda=(%.6g, %.6g, %.6g)",
                        state.k, state.lambda_2a, state.lambda_2b, state.lambda_3)

    model.eval()
    if tc.log_path:
        save_training_log(log, tc.log_path)
    path = checkpoint_path or tc.checkpoint_path
    saved = save_checkpoint(model.state_tensors(), path)
    return TrainResult(model=model, state=state, log=log, checkpoint_path=str(saved))


# ---------------------------------------------------------------- checkpoint loading

_INDEXED = re.compile(r"^([A-Za-z_]+?)(\d+)$")


def _resolve(module: Module, parts: List[str]):
    node = module
    for part in parts:
        match = _INDEXED.match(part)
        if hasattr(node, part):
            node = getattr(node, part)
        elif match and isinstance(getattr(node, match.group(1), None), list):
            items = getattr(node, match.group(1))
            index = int(match.group(2))
            if index >= len(items):
                return None
            node = items[index]
        else:
            return None
    return node


def load_model(path: Optional[str], model_cfg: Optional[ModelConfig] = None) -> CaeModel:
    """Rebuild a CaeModel in inference mode from a checkpoint."""
    tensors = load_checkpoint(path)
    try:
        system = SystemConfig(
            n_t=int(tensors["meta.n_t"]), n_r=int(tensors["meta.n_r"]), k=int(tensors["meta.k"]),
            l=int(tensors["meta.l"]), order=int(tensors["meta.order"]),
        )
    except KeyError as exc:
        raise CheckpointError(f"checkpoint lacks geometry header {exc}") from exc
    model_cfg = model_cfg or ModelConfig()
    if "meta.decoder_iterations" in tensors:
        model_cfg = model_cfg.model_copy(update={"decoder_iterations": int(tensors["meta.decoder_iterations"])})
    model = CaeModel(system, model_cfg)
    params = model.named_parameters()
    missing = set(params)
    for name, value in tensors.items():
        if name.startswith("meta."):
            continue
        if name in params:
            if params[name].shape != value.shape:
                raise CheckpointError(f"tensor '{name}' has shape {value.shape}, model expects {params[name].shape}")
            params[name].values = value.copy()
            missing.discard(name)
            continue
        owner_path, _, leaf = name.rpartition(".")
        owner = _resolve(model, owner_path.split(".")) if owner_path else None
        if isinstance(owner, BatchNorm) and leaf in ("running_mean", "running_var"):
            owner.set_buffer(leaf, value)
        else:
            logger.warning("Ignoring unknown checkpoint tensor '%s'", name)
    if missing:
        raise CheckpointError(f"checkpoint is missing parameters: {sorted(missing)[:5]}")
    return model.eval()
