"""Run configuration as a flat dotted-key dictionary.

A config file is a JSON object whose keys are dotted paths (for example
``{"train.t_max": 2000}``); file values override the built-in defaults and
command-line ``--set key=value`` overrides win over the file. The fully
resolved mapping is what gets recorded in the run manifest.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .phantom import PhantomSpec
from .trainer import TrainConfig

DEFAULTS: dict = {
    "phantom.volume_shape": [96, 128, 128],
    "phantom.spacing_mm": [0.625, 0.293, 0.293],
    "phantom.tube_radius_mm": [0.5, 0.75],
    "phantom.control_points": 5,
    "phantom.noise_std": 0.1,
    "phantom.distractors": 3,
    "data.n_train": 23,
    "data.n_eval": 5,
    "data.seed": 0,
    "train.learning_rate": 1e-3,
    "train.adamw_betas": [0.9, 0.999],
    "train.weight_decay": 5e-4,
    "train.batch_size": 4,
    "train.t_max": 5000,
    "train.alpha": 0.5,
    "train.beta_max": 0.1,
    "train.epsilon": 1e-5,
    "train.binarize_threshold": 0.5,
    "train.soft_skeleton_iterations": 5,
    "train.block_size": [64, 64, 32],
    "train.seed": 0,
    "train.checkpoint_every": 1000,
    "train.base_channels": 8,
    "train.levels_3d": 3,
    "train.levels_2d": 4,
    "train.use_sse": True,
    "train.dual_stream": True,
    "train.aug_crop_fraction": [0.9, 1.0],
    "train.aug_scale_range": [0.9, 1.1],
    "train.aug_rotate_deg": 15.0,
    "train.aug_mirror_prob": 0.5,
    "eval.overlap": 0.5,
    "eval.postprocess": True,
    "eval.combine_streams": False,
    "ablate.seeds": [0, 1, 2],
}


class ConfigError(ValueError):
    """Unknown key or unparsable value in a config source."""


def load_config(path=None) -> dict:
    """Defaults overlaid with the JSON file at ``path`` (if given)."""
    cfg = dict(DEFAULTS)
    if path is not None:
        try:
            overrides = json.loads(Path(path).read_text())
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: not valid JSON ({err})") from err
        if not isinstance(overrides, dict):
            raise ConfigError(f"{path}: top level must be an object")
        for key, value in overrides.items():
            if key not in DEFAULTS:
                raise ConfigError(f"{path}: unknown config key {key!r}")
            cfg[key] = value
    return cfg


def apply_overrides(cfg: dict, assignments) -> dict:
    """Apply ``key=value`` strings; values parse as JSON, else as strings."""
    out = dict(cfg)
    for assignment in assignments or []:
        if "=" not in assignment:
            raise ConfigError(f"override {assignment!r} is not of the form key=value")
        key, _, raw = assignment.partition("=")
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def phantom_spec_from(cfg: dict, seed: int = 0) -> PhantomSpec:
    return PhantomSpec(
        volume_shape=tuple(cfg["phantom.volume_shape"]),
        spacing_mm=tuple(cfg["phantom.spacing_mm"]),
        tube_radius_mm=tuple(cfg["phantom.tube_radius_mm"]),
        centerline_control_points=cfg["phantom.control_points"],
        noise_std=cfg["phantom.noise_std"],
        background_structures=cfg["phantom.distractors"],
        seed=seed,
    )


def train_config_from(cfg: dict) -> TrainConfig:
    return TrainConfig(
        learning_rate=cfg["train.learning_rate"],
        adamw_betas=tuple(cfg["train.adamw_betas"]),
        weight_decay=cfg["train.weight_decay"],
        batch_size=cfg["train.batch_size"],
        t_max=cfg["train.t_max"],
        alpha=cfg["train.alpha"],
        beta_max=cfg["train.beta_max"],
        epsilon=cfg["train.epsilon"],
        binarize_threshold=cfg["train.binarize_threshold"],
        soft_skeleton_iterations=cfg["train.soft_skeleton_iterations"],
        block_size=tuple(cfg["train.block_size"]),
        seed=cfg["train.seed"],
        checkpoint_every=cfg["train.checkpoint_every"],
        base_channels=cfg["train.base_channels"],
        levels_3d=cfg["train.levels_3d"],
        levels_2d=cfg["train.levels_2d"],
        use_sse=cfg["train.use_sse"],
        dual_stream=cfg["train.dual_stream"],
        aug_crop_fraction=tuple(cfg["train.aug_crop_fraction"]),
        aug_scale_range=tuple(cfg["train.aug_scale_range"]),
        aug_rotate_deg=cfg["train.aug_rotate_deg"],
        aug_mirror_prob=cfg["train.aug_mirror_prob"],
    )
