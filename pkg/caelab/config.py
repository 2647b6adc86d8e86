"""
Experiment configuration: pydantic models, YAML loading with line-numbered
errors, serialization back to YAML and environment overrides.
"""

import logging
import os
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError

load_dotenv()

logger = logging.getLogger("caelab.config")


def _env_workers() -> int:
    try:
        return max(1, int(os.getenv("CAELAB_WORKERS", "1")))
    except ValueError:
        logger.warning("Ignoring non-integer CAELAB_WORKERS=%r", os.getenv("CAELAB_WORKERS"))
        return 1


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SystemConfig(_Block):
    n_t: int = Field(ge=1)
    n_r: Optional[int] = Field(default=None, ge=1)
    k: int = Field(default=72, ge=1)
    l: int = Field(default=4, ge=1)  # noqa: E741
    order: Literal[4, 16] = 4

    @property
    def receive_antennas(self) -> int:
        return self.n_t if self.n_r is None else self.n_r


class ChannelConfig(_Block):
    profile: Literal["awgn", "multipath"] = "multipath"
    taps: int = Field(default=13, ge=1)
    decay: Optional[float] = Field(default=None, gt=0)


class RfConfig(_Block):
    ibo_db: float = 3.0
    p: float = Field(default=2.0, gt=0)
    v: float = Field(default=1.0, gt=0)
    p_t: float = Field(default=1.0, gt=0)
    hpa: bool = True


class MethodConfig(_Block):
    name: Literal["none", "cf", "slm", "cae"] = "none"
    clip_ratio_db: float = 4.08
    slm_candidates: int = Field(default=64, ge=1)
    slm_seed: int = 0
    checkpoint: Optional[str] = None


class RunConfig(_Block):
    p_snr_grid_db: List[float] = Field(default_factory=lambda: [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0])
    frames: int = Field(default=7000, ge=1)
    seed: int = Field(default=0, ge=0)
    out: str = "results.csv"
    workers: int = Field(default_factory=_env_workers, ge=1)
    thresholds_db: List[float] = Field(default_factory=lambda: [float(x) / 4.0 for x in range(0, 57)])
    psd_segment: Optional[int] = Field(default=None, ge=1)
    ibo_sweep_db: List[float] = Field(default_factory=list)


class TrainConfig(_Block):
    lr: float = Field(default=0.001, gt=0)
    weight_decay: float = Field(default=0.01, ge=0)
    epochs: int = Field(default=140, ge=1)
    gradual_start_epoch: int = Field(default=45, ge=0)
    train_snr_db: float = 40.0
    lambda_2a: float = 0.015
    lambda_2b: float = 0.001
    lambda_3: float = Field(default=0.005, ge=0)
    rho_2a: float = Field(default=0.0015, ge=0)
    rho_2b: float = Field(default=0.00001, ge=0)
    rho_3: float = Field(default=0.001, gt=0)
    batch_size: int = Field(default=32, ge=2)
    batches_per_epoch: int = Field(default=50, ge=1)
    acpr_req_db: float = -45.0
    seed: int = Field(default=0, ge=0)
    log_path: Optional[str] = "training_log.csv"
    checkpoint_path: Optional[str] = None

    @model_validator(mode="after")
    def _gradual_start_in_range(self) -> "TrainConfig":
        if self.gradual_start_epoch > self.epochs:
            raise ValueError(
                f"gradual_start_epoch ({self.gradual_start_epoch}) must not exceed epochs ({self.epochs})"
            )
        return self


class ModelConfig(_Block):
    activation: Literal["selu", "gelu"] = "selu"
    encoder_channels: Tuple[int, int, int] = (21, 15, 21)
    encoder_kernel: Tuple[int, int] = (1, 3)
    fc_mode: Literal["pointwise", "dense"] = "pointwise"
    decoder_channels: Tuple[int, int] = (15, 21)
    decoder_kernel: Tuple[int, int] = (3, 3)
    decoder_iterations: int = Field(default=10, ge=1)
    delta1_init: float = 1.0
    delta2_init: float = -0.1


class ExperimentConfig(_Block):
    system: SystemConfig
    channel: ChannelConfig = Field(default_factory=ChannelConfig)
    rf: RfConfig = Field(default_factory=RfConfig)
    method: MethodConfig = Field(default_factory=MethodConfig)
    detector: Literal["mle", "zf", "cae"] = "mle"
    run: RunConfig = Field(default_factory=RunConfig)
    training: TrainConfig = Field(default_factory=TrainConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)

    @model_validator(mode="after")
    def _detector_matches_method(self) -> "ExperimentConfig":
        if (self.detector == "cae") != (self.method.name == "cae"):
            raise ValueError(
                f"detector 'cae' requires method 'cae' and vice versa "
                f"(got detector={self.detector!r}, method={self.method.name!r})"
            )
        return self


# ------------------------------------------------------------------ YAML

def _key_lines(text: str) -> Dict[Tuple[str, ...], int]:
    """Map each dotted key path to its 1-based source line."""
    lines: Dict[Tuple[str, ...], int] = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return lines

    def _walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for key_node, value_node in node.value:
                key_path = path + (str(key_node.value),)
                lines[key_path] = key_node.start_mark.line + 1
                _walk(value_node, key_path)

    _walk(root, ())
    return lines


def _nearest_line(loc: Tuple[str, ...], lines: Dict[Tuple[str, ...], int]) -> Optional[int]:
    while loc:
        if loc in lines:
            return lines[loc]
        loc = loc[:-1]
    return None


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"{source}: cannot parse YAML ({getattr(exc, 'problem', exc)})", line=line) from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a mapping of blocks")
    lines = _key_lines(text)
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        first = exc.errors()[0]
        loc = tuple(str(part) for part in first["loc"])
        key = ".".join(loc) if loc else None
        if first["type"] == "extra_forbidden":
            message = f"{source}: unknown key '{key}'"
        elif first["type"] == "missing":
            message = f"{source}: missing required key '{key}'"
        else:
            where = f"'{key}'" if key else "config"
            message = f"{source}: invalid value for {where}: {first['msg']}"
        raise ConfigError(message, line=_nearest_line(loc, lines), key=key) from exc


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cfg = parse_config(path.read_text(encoding="utf-8"), source=str(path))
    logger.debug("Loaded config %s", path)
    return cfg


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)


def save_config(cfg: ExperimentConfig, path: Union[str, Path]) -> None:
    Path(path).write_text(dump_config(cfg), encoding="utf-8")


def apply_overrides(cfg: ExperimentConfig, seed: Optional[int] = None, frames: Optional[int] = None,
                    out: Optional[str] = None, workers: Optional[int] = None) -> ExperimentConfig:
    """Command-line flags win over the file."""
    updates = {k: v for k, v in {"seed": seed, "frames": frames, "out": out, "workers": workers}.items()
               if v is not None}
    if not updates:
        return cfg
    try:
        run = RunConfig.model_validate({**cfg.run.model_dump(), **updates})
    except ValidationError as exc:
        first = exc.errors()[0]
        raise ConfigError(f"invalid override for '{first['loc'][0]}': {first['msg']}",
                          key=str(first["loc"][0])) from exc
    return cfg.model_copy(update={"run": run})
