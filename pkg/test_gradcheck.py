import numpy as np
import pytest

from caelab import autodiff as ad
from caelab.errors import GradientCheckError
from caelab.gradcheck import (
    END_TO_END_TOLERANCE,
    LAYER_TOLERANCE,
    CheckResult,
    compare_gradients,
    report_frame,
    run_gradcheck,
)


@pytest.fixture(scope="module")
def results():
    return run_gradcheck(seed=0)


def test_every_check_passes(results):
    failed = [(r.name, r.rel_error) for r in results if not r.passed]
    assert not failed


def test_checks_cover_layers_and_full_pipeline(results):
    names = {r.name for r in results}
    assert {"conv2d", "batch_norm", "fully_connected", "softmax_nll", "selu", "gelu", "rf_chain",
            "papr_loss", "acpr_loss", "end_to_end"} <= names
    tolerances = {r.name: r.tolerance for r in results}
    assert tolerances["conv2d"] == LAYER_TOLERANCE
    assert tolerances["end_to_end"] == END_TO_END_TOLERANCE


def test_report_frame(results):
    frame = report_frame(results)
    assert list(frame.columns) == ["check", "rel_error", "tolerance", "passed"]
    assert len(frame) == len(results)
    assert frame["passed"].all()


def test_compare_gradients_on_cubic(rng):
    w = ad.parameter(rng.standard_normal(5))
    assert compare_gradients(lambda: ad.sum(ad.power(w, 3.0)), [w], rng) < 1e-7


def test_nan_error_never_passes():
    assert not CheckResult("x", float("nan"), 1e-5).passed
    assert not CheckResult("x", 2e-5, 1e-5).passed


def test_corrupted_convolution_gradient_is_caught(monkeypatch):
    original = ad._conv2d_grads

    def _broken(x_pad, windows, weight, g):
        grad_x, grad_w = original(x_pad, windows, weight, g)
        return grad_x, grad_w * 1.01

    monkeypatch.setattr(ad, "_conv2d_grads", _broken)
    results = {r.name: r for r in run_gradcheck(seed=0)}
    assert not results["conv2d"].passed
    assert results["selu"].passed
    with pytest.raises(GradientCheckError):
        run_gradcheck(seed=0, raise_on_failure=True)
    assert np.isfinite(results["conv2d"].rel_error)
