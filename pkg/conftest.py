"""Shared fixtures for the caelab test modules."""

import numpy as np
import pytest

from caelab.config import ExperimentConfig, ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model_cfg():
    return ModelConfig(encoder_channels=(4, 3, 4), decoder_channels=(3, 4), decoder_iterations=2)


@pytest.fixture
def make_config(tmp_path):
    """Build a validated ExperimentConfig from nested block dicts; outputs go to tmp_path."""

    def _make(n_t=2, k=16, l=4, order=4, **blocks):  # noqa: E741
        raw = {"system": {"n_t": n_t, "k": k, "l": l, "order": order}}
        raw.update(blocks)
        run = dict(raw.get("run", {}))
        run.setdefault("out", str(tmp_path / "out.csv"))
        run.setdefault("workers", 1)
        raw["run"] = run
        training = dict(raw.get("training", {}))
        training.setdefault("log_path", str(tmp_path / "training_log.csv"))
        training.setdefault("checkpoint_path", str(tmp_path / "model.bin"))
        raw["training"] = training
        return ExperimentConfig.model_validate(raw)

    return _make


def pytest_addoption(parser):
    parser.addoption("--update-golden", action="store_true", default=False,
                     help="rewrite the golden CSV files under testdata/ from the current run")


@pytest.fixture
def update_golden(request):
    return request.config.getoption("--update-golden")
