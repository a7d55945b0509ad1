"""Run configuration: a nested key/value tree with a fixed schema.

The schema mirrors the estimator parameter surfaces plus the run-level knobs.
Unknown keys are rejected; every command writes its resolved tree alongside its
outputs so a run can be reproduced from artifacts alone.
"""

from __future__ import annotations

import copy

import yaml

from .features import FeatureExtractor, PatchClassifier
from .pipeline import LatentDiffusion
from .vqvae import VqVae


class ConfigError(ValueError):
    """Config file or override violates the schema."""


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, (list, dict)):
        return yaml.safe_load(yaml.safe_dump(value))
    return value


def default_config() -> dict:
    """Desk-scale defaults: every section, every key, laptop-size budgets."""
    vae = VqVae().get_params()
    vae.update(base_width=48, steps=900, batch_size=64, lr=2e-3)
    ldm = LatentDiffusion().get_params()
    ldm.update(lr=1.5e-3, warmup_steps=100, batch_size=64, max_steps=1500)
    tree = {
        "run": {"seed": 0, "out": "runs"},
        "corpus": {"n_slides": 48, "patches_per_slide": 128, "image_size": 32,
                   "seed": 0, "train_fraction": 0.667},
        "summarize": {"n_variants": 1, "model": "default", "temperature": 0.0},
        "manifest": {"policy": "matched", "assignment": "fixed", "seed": 0},
        "vae": vae,
        "ldm": ldm,
        "sampler": {"num_steps": 50, "guidance_scale": 1.75, "eta": 0.0, "seed": 0,
                    "n_samples": 64, "batch": 500},
        "extractor": FeatureExtractor().get_params(),
        "classifier": PatchClassifier().get_params(),
        "eval": {"n_fid": 2000},
        "ablate": {"guidance_grid": [0.1, 0.5, 1.0, 1.75, 2.5, 3.0], "sweep_samples": 256},
    }
    return {section: {k: _plain(v) for k, v in values.items()} for section, values in tree.items()}


def _check_against_schema(tree: dict, schema: dict, path: str = ""):
    for key, value in tree.items():
        where = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(schema[key], dict) != isinstance(value, dict):
            kind = "a section" if isinstance(schema[key], dict) else "a scalar"
            raise ConfigError(f"config key {where} must be {kind}")
        if isinstance(value, dict):
            _check_against_schema(value, schema[key], where)


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Merge defaults <- config file <- dotted-path overrides, then validate."""
    config = default_config()
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must hold a mapping")
        _check_against_schema(loaded, config)
        for section, values in loaded.items():
            config[section].update(values)
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if not key or section not in config or key not in config[section]:
            raise ConfigError(f"unknown config key: {dotted}")
        config[section][key] = value
    return config


def write_resolved(config: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config, fh, sort_keys=False)


def read_resolved(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return yaml.safe_load(fh)


def config_equal(a: dict, b: dict) -> bool:
    return copy.deepcopy(a) == copy.deepcopy(b)
