"""
Finite-difference verification of every differentiable operation and of the
full encoder -> HPA -> channel -> decoder -> objective path.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Sequence

import numpy as np
import pandas as pd

from . import autodiff as ad
from .cae_model import (
    CaeModel,
    acpr_tensor,
    bandpass_tensor,
    draw_channels,
    forward_losses,
    ibo_tensor,
    papr_tensor,
    random_batch,
    rapp_tensor,
)
from .config import ChannelConfig, ExperimentConfig, ModelConfig, SystemConfig, TrainConfig
from .errors import GradientCheckError
from .mimo_channel import complex_noise
from .models import ChannelProfile, LagrangianState, RappParams

logger = logging.getLogger("caelab.gradcheck")

LAYER_TOLERANCE = 1e-5
END_TO_END_TOLERANCE = 1e-4
FD_STEP = 1e-6


@dataclass
class CheckResult:
    name: str
    rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.rel_error) and self.rel_error < self.tolerance)


def compare_gradients(fn: Callable[[], ad.DiffTensor], params: Sequence[ad.DiffTensor],
                      rng: np.random.Generator, max_entries: int = 24, step: float = FD_STEP) -> float:
    """Relative error between backprop and central differences on sampled entries."""
    loss = fn()
    ad.backward(loss, params)
    analytic, numeric = [], []
    for p in params:
        grad = p.grad.copy()
        flat = p.values.reshape(-1)
        picks = rng.choice(flat.size, size=min(flat.size, max_entries), replace=False)
        for idx in picks:
            original = flat[idx]
            flat[idx] = original + step
            f_plus = float(fn().values)
            flat[idx] = original - step
            f_minus = float(fn().values)
            flat[idx] = original
            numeric.append((f_plus - f_minus) / (2.0 * step))
            analytic.append(grad.reshape(-1)[idx])
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


def _p(rng: np.random.Generator, *shape, scale: float = 1.0) -> ad.DiffTensor:
    return ad.parameter(rng.standard_normal(shape) * scale)


def _weighted(out: ad.DiffTensor, rng: np.random.Generator) -> ad.DiffTensor:
    return ad.sum(ad.mul(out, rng.standard_normal(out.shape)))


def _layer_cases(rng: np.random.Generator):
    a, b = _p(rng, 3, 4), ad.parameter(rng.uniform(0.5, 2.0, size=(3, 4)))
    wa = rng.standard_normal((3, 4))
    yield "arithmetic", lambda: ad.sum(ad.mul(ad.sub(ad.div(ad.mul(ad.exp(a), b), ad.add(ad.mul(a, a), 1.0)),
                                                     ad.add(ad.sqrt(b), ad.log(b))), wa)) + ad.sum(ad.power(b, 3.0)), [a, b]

    x_act = _p(rng, 5, 6)
    w_act = rng.standard_normal((5, 6))
    yield "selu", lambda: ad.sum(ad.mul(ad.selu(x_act), w_act)), [x_act]
    yield "gelu", lambda: ad.sum(ad.mul(ad.gelu(x_act), w_act)), [x_act]

    xc, wc, bc = _p(rng, 2, 3, 5, 7), _p(rng, 4, 3, 3, 3, scale=0.3), _p(rng, 4)
    rc = rng.standard_normal((2, 4, 5, 7))
    yield "conv2d", lambda: ad.sum(ad.mul(ad.conv2d(xc, wc, bc, (1, 1)), rc)), [xc, wc, bc]

    xb = _p(rng, 4, 3, 2, 5)
    gamma, beta = ad.parameter(rng.uniform(0.5, 1.5, 3)), _p(rng, 3)
    bn_state = ad.BatchNormState(np.zeros(3), np.ones(3))
    rb = rng.standard_normal((4, 3, 2, 5))
    yield "batch_norm", lambda: ad.sum(ad.mul(ad.batch_norm(xb, gamma, beta, bn_state, True), rb)), [xb, gamma, beta]

    xf, wf, bf = _p(rng, 3, 5, 6), _p(rng, 4, 6), _p(rng, 4)
    rf = rng.standard_normal((3, 5, 4))
    yield "fully_connected", lambda: ad.sum(ad.mul(ad.fully_connected(xf, wf, bf), rf)), [xf, wf, bf]

    logits = _p(rng, 3, 4, 5)
    targets = rng.integers(0, 5, size=(3, 4))
    yield "softmax_nll", lambda: ad.softmax_nll(logits, targets), [logits]

    xr = _p(rng, 4, 6)
    yr = _p(rng, 4, 6)
    idx = np.array([0, 2, 3, 2])

    def _reductions():
        m = ad.max_along(ad.transpose(xr, (1, 0)), axis=1)
        e = ad.maximum(xr, yr)
        c = ad.clamp_min(ad.reshape(xr, (6, 4)), 0.1)
        t = ad.take(ad.concat([xr, yr], axis=1), idx, axis=1)
        return (_weighted(m, np.random.default_rng(1)) + _weighted(e, np.random.default_rng(2))
                + _weighted(c, np.random.default_rng(3)) + ad.mean(ad.mul(t, t)))
    yield "reductions", _reductions, [xr, yr]

    w1, w2, w3 = _p(rng, 8, 5, scale=0.5), _p(rng, 6, 8, scale=0.5), _p(rng, 3, 6, scale=0.5)
    x_mlp = rng.standard_normal((7, 5))
    t_mlp = rng.integers(0, 3, size=7)
    yield "three_layer_network", lambda: ad.softmax_nll(
        ad.fully_connected(ad.gelu(ad.fully_connected(ad.selu(ad.fully_connected(x_mlp, w1)), w2)), w3), t_mlp
    ), [w1, w2, w3]

    k, oversampling = 8, 4
    params = RappParams(a0=0.8, v=1.0, p=2.0)
    x_rf = _p(rng, 2, 2, 2 * oversampling * k, scale=0.7)
    r_rf = rng.standard_normal((2, 2, 2 * oversampling * k))
    yield "rf_chain", lambda: ad.sum(ad.mul(rapp_tensor(ibo_tensor(bandpass_tensor(x_rf, k), 2.0, params), params),
                                            r_rf)), [x_rf]
    yield "papr_loss", lambda: ad.mean(papr_tensor(x_rf)), [x_rf]
    yield "acpr_loss", lambda: acpr_tensor(rapp_tensor(x_rf, params), oversampling), [x_rf]


def end_to_end_loss(seed: int = 0):
    """
    (loss closure, parameters) for a tiny CAE; noise, x_hat_0 and alpha are frozen.
    """
    rng = np.random.default_rng(seed)
    system = SystemConfig(n_t=2, k=8, l=4, order=4)
    model_cfg = ModelConfig(encoder_channels=(4, 3, 4), decoder_channels=(3, 4), decoder_iterations=2)
    cfg = ExperimentConfig(system=system, channel=ChannelConfig(profile="multipath", taps=3), model=model_cfg,
                           training=TrainConfig(epochs=1, gradual_start_epoch=0, acpr_req_db=-60.0))
    model = CaeModel(system, model_cfg, seed=seed)
    model.train()
    fc = model.encoder.fc.weight
    fc.values = rng.uniform(-0.3, 0.3, size=fc.shape)
    batch = random_batch(rng, system, 2)
    h = draw_channels(rng, system, ChannelProfile("multipath", 3), 2)
    noise = complex_noise(rng, (2, system.receive_antennas, system.k), 0.01)
    x0 = rng.uniform(-1.0, 1.0, size=(2, system.n_t, 2 * system.k))
    state = LagrangianState()
    alpha = forward_losses(model, batch, h, noise, x0, cfg, state, True).alpha

    def _loss():
        return forward_losses(model, batch, h, noise, x0, cfg, state, True, alpha=alpha).loss

    params = [model.encoder.conv1.weight, model.encoder.conv3.bias, fc, model.decoder.iter[0].delta1,
              model.decoder.iter[1].fc.weight]
    return _loss, params


def run_gradcheck(seed: int = 0, tolerance: float = LAYER_TOLERANCE,
                  end_to_end_tolerance: float = END_TO_END_TOLERANCE, raise_on_failure: bool = False) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, fn, params in _layer_cases(rng):
        results.append(CheckResult(name, compare_gradients(fn, params, rng), tolerance))
    loss_fn, params = end_to_end_loss(seed)
    results.append(CheckResult("end_to_end", compare_gradients(loss_fn, params, rng, max_entries=6),
                               end_to_end_tolerance))
    for r in results:
        level = logging.INFO if r.passed else logging.ERROR
        logger.log(level, "gradcheck %-20s rel_error=%.3e tol=%.0e %s", r.name, r.rel_error, r.tolerance,
                   "pass" if r.passed else "FAIL")
    failed = [r.name for r in results if not r.passed]
    if failed and raise_on_failure:
        raise GradientCheckError(f"gradient check failed for: {', '.join(failed)}")
    return results


def report_frame(results: Sequence[CheckResult]) -> pd.DataFrame:
    return pd.DataFrame([(r.name, r.rel_error, r.tolerance, r.passed) for r in results],
                        columns=["check", "rel_error", "tolerance", "passed"])
