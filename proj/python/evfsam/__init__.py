"""Early vision-language fused referring segmentation (C++ core)."""

import json

from . import _evfsam
from ._evfsam import (
    ConfigError,
    FormatError,
    compute_metrics,
    generate_dataset,
    gradcheck,
    rle_decode,
    rle_encode,
)

__all__ = [
    "ConfigError",
    "FormatError",
    "Model",
    "compute_metrics",
    "default_config",
    "generate_dataset",
    "gradcheck",
    "normalize_config",
    "rle_decode",
    "rle_encode",
    "train",
]


def _dump(config):
    if config is None:
        return ""
    return config if isinstance(config, str) else json.dumps(config)


def default_config():
    """Default run configuration as a dict."""
    return json.loads(_evfsam.default_config())


def normalize_config(config):
    """Validate a (partial) configuration and fill in defaults."""
    return json.loads(_evfsam.normalize_config(_dump(config)))


class Model:
    """A model built from a run configuration or loaded from a checkpoint."""

    def __init__(self, config=None, _core=None):
        self._core = _core if _core is not None else _evfsam.Model(_dump(config))

    @classmethod
    def load(cls, path):
        return cls(_core=_evfsam.Model.load(str(path)))

    @property
    def config(self):
        return json.loads(self._core.config)

    @property
    def num_parameters(self):
        return self._core.num_parameters

    def predict(self, image, text, threshold=0.0):
        """Binary uint8 mask at the image's resolution."""
        return self._core.predict(image, text, threshold)

    def evaluate(self, split="val"):
        return self._core.evaluate(split)


def train(config=None, checkpoint=None):
    """Train from a configuration; returns (Model, val metrics, log records)."""
    core, metrics, log = _evfsam.train(_dump(config), "" if checkpoint is None else str(checkpoint))
    records = [json.loads(line) for line in log.splitlines() if line.strip()]
    return Model(_core=core), metrics, records
