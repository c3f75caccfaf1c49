"""
Configuration files.

A config file is flat YAML, one ``key: value`` per line. Missing keys take the values in
``conf/defaults.yaml``; unknown keys are rejected so that typos do not pass silently.
"""
import logging
import os
from typing import Optional, Tuple

import yaml
from omegaconf import DictConfig, OmegaConf
from omegaconf.errors import OmegaConfBaseException

from crowd_points.fitting import FitConfig
from crowd_points.points import LossConfig, ValidationError

logger = logging.getLogger(__name__)

# path issues with sphinx and the relative paths for running as a module
abs_path = os.path.dirname(__file__)

LOSS_KEYS = (
    "gamma",
    "alpha",
    "epsilon",
    "lambda1",
    "lambda2",
    "lambda3",
    "clamp",
    "threshold",
    "wce_mode",
    "hrc_count_mode",
)
FIT_KEYS = ("steps", "lr_coord", "lr_conf", "proposal_factor", "init", "rematch_every", "seed")

_TYPES = {
    "gamma": float,
    "alpha": float,
    "epsilon": float,
    "lambda1": float,
    "lambda2": float,
    "lambda3": float,
    "clamp": float,
    "threshold": float,
    "wce_mode": str,
    "hrc_count_mode": str,
    "steps": int,
    "lr_coord": float,
    "lr_conf": float,
    "proposal_factor": float,
    "init": str,
    "rematch_every": int,
    "seed": int,
}


def defaults() -> DictConfig:
    return OmegaConf.load(os.path.join(abs_path, "conf", "defaults.yaml"))


def suite_defaults() -> DictConfig:
    return OmegaConf.load(os.path.join(abs_path, "conf", "suite.yaml"))


def _cast(key: str, value):
    kind = _TYPES[key]
    if isinstance(value, str) and kind is not str:
        try:
            value = kind(value)
        except ValueError:
            raise ValidationError(key, f"expected {kind.__name__}, got {value!r}") from None
    if isinstance(value, bool) or value is None:
        raise ValidationError(key, f"expected {kind.__name__}, got {value!r}")
    if kind is int:
        if isinstance(value, float) and value.is_integer():
            return int(value)
        if not isinstance(value, int):
            raise ValidationError(key, f"expected an integer, got {value!r}")
        return value
    if kind is float:
        if not isinstance(value, (int, float)):
            raise ValidationError(key, f"expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ValidationError(key, f"expected a string, got {value!r}")
    return value


def load_config(path: Optional[str] = None, seed: Optional[int] = None) -> Tuple[LossConfig, FitConfig]:
    """
    Reads a config file over the defaults.

    :param path: flat YAML file, defaults only when None
    :param seed: overrides the seed of the file (the CLI ``--seed`` flag)
    :raises ValidationError: naming the unknown or invalid key
    :return: (LossConfig, FitConfig)
    """
    conf = defaults()
    if path is not None:
        try:
            user = OmegaConf.load(path)
        except (OmegaConfBaseException, yaml.YAMLError) as e:
            raise ValidationError(path, f"not a flat key: value file ({e})") from e
        if not isinstance(user, DictConfig):
            raise ValidationError(path, "expected key: value pairs")
        for key in user.keys():
            if key not in conf:
                raise ValidationError(str(key), "unknown config key")
        conf = OmegaConf.merge(conf, user)

    values = {key: _cast(key, conf[key]) for key in LOSS_KEYS + FIT_KEYS}
    if seed is not None:
        values["seed"] = int(seed)
    loss_cfg = LossConfig(**{key: values[key] for key in LOSS_KEYS})
    fit_cfg = FitConfig(**{key: values[key] for key in FIT_KEYS})
    logger.info("loaded config %s", path or "<defaults>")
    return loss_cfg, fit_cfg
