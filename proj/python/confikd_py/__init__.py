"""Python face of the group-shift distillation benchmark.

The heavy lifting lives in the compiled ``_confikd`` module; this wrapper
adds dict-based configs on top of its JSON-string interface.
"""

import json

from _confikd import (
    config_objective,
    cosine_lr,
    default_config_json,
    derive_seed,
    rank_auc,
    run_augment,
    run_bench,
    run_eval,
    run_pipeline,
    run_sweep_multiplicity,
    run_train,
    run_verify_theory,
    World,
)

__all__ = [
    "config_objective",
    "cosine_lr",
    "default_config",
    "derive_seed",
    "make_config",
    "pipeline",
    "rank_auc",
    "run_augment",
    "run_bench",
    "run_eval",
    "run_pipeline",
    "run_sweep_multiplicity",
    "run_train",
    "run_verify_theory",
    "World",
]


def default_config():
    """Full experiment config as a plain dict."""
    return json.loads(default_config_json())


def make_config(**overrides):
    """Default config with top-level keys replaced; unknown keys are rejected."""
    cfg = default_config()
    for key, value in overrides.items():
        if key not in cfg:
            raise KeyError(f"unknown config key: {key}")
        cfg[key] = value
    return cfg


def pipeline(config):
    """Run the full benchmark pipeline from a config dict; returns metrics."""
    return run_pipeline(json.dumps(config))
