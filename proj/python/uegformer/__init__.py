"""Mixed-exposure image enhancement.

Images are float64 arrays of shape (H, W, 3) in [0, 1]. Configuration
arguments accept dicts and are forwarded to the core as JSON.
"""

import json as _json

from . import _core
from ._core import (
    ConfigError,
    DataError,
    IoError,
    NumericError,
    load_image,
    multi_otsu_thresholds,
    otsu_threshold,
    procedural_image,
    psnr,
    rgb_to_luminance,
    save_image,
    ssim,
    ssim_map,
)

__all__ = [
    "ConfigError",
    "DataError",
    "IoError",
    "NumericError",
    "Model",
    "exposure_labels",
    "load_image",
    "lr_at",
    "multi_otsu_thresholds",
    "otsu_threshold",
    "procedural_image",
    "psnr",
    "rgb_to_luminance",
    "run",
    "save_image",
    "ssim",
    "ssim_map",
    "synth_degrade",
]


def _dump(cfg):
    return "" if cfg is None else _json.dumps(cfg)


class Model:
    """Enhancement network. `config` is a dict of model settings (defaults when omitted)."""

    def __init__(self, config=None, *, _state=None):
        self._state = _state if _state is not None else _core.Model(_dump(config))

    @classmethod
    def load(cls, path):
        return cls(_state=_core.Model.load(str(path)))

    def save(self, path):
        self._state.save(str(path))

    @property
    def config(self):
        return _json.loads(self._state.config_json())

    def parameter_count(self):
        return self._state.parameter_count()

    def parameter_breakdown(self):
        return dict(self._state.parameter_breakdown())

    def enhance(self, image):
        """Returns a dict with image, attention (H, W, 2), local, global, gamma, fusion_weights."""
        return self._state.enhance(image)


def exposure_labels(lum, t_low, t_high, mask_config=None):
    return _core.exposure_labels(lum, t_low, t_high, _dump(mask_config))


def synth_degrade(clean, synth_config=None):
    return _core.synth_degrade(clean, _dump(synth_config))


def lr_at(step, steps_per_epoch, train_config=None):
    return _core.lr_at(step, steps_per_epoch, _dump(train_config))


def run(config, out_dir, dry_run=False):
    return _core.run(_json.dumps(config), str(out_dir), dry_run)
