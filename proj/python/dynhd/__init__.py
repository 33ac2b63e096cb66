"""Hallucination detection from the denoising entropy trajectories of diffusion LMs."""

import json as _json

from ._dynhd import (
    Dataset,
    DatasetHeader,
    DimensionError,
    Error,
    IgnoreSpec,
    IoError,
    Label,
    Model,
    RawTrajectory,
    SampleScore,
    StepRecord,
    TokenClass,
    TokenRecord,
    TrainingError,
    ValidationError,
    auroc,
    build_evidence,
    classify_token,
    entropy_from_logits,
    parse_dataset,
    read_dataset,
    shannon_entropy,
    step_evidence,
    valid_positions,
    validate,
    write_dataset,
)
from . import _dynhd


def _dump(config):
    if config is None:
        return ""
    return config if isinstance(config, str) else _json.dumps(config)


def simulate(config=None):
    """Synthetic labeled dataset. `config` is a dict or JSON string; missing keys use defaults."""
    return _dynhd.simulate(_dump(config))


def train(dataset, config=None):
    """Two-stage training. Returns (Model, report dict)."""
    model, report = _dynhd.train(dataset, _dump(config))
    return model, _json.loads(report)


def default_train_config():
    return _json.loads(_dynhd.default_train_config())


def default_simulation_config():
    return _json.loads(_dynhd.default_simulation_config())


def ignore_spec(config):
    """IgnoreSpec from a dict or JSON string."""
    return IgnoreSpec.from_json(_dump(config))
