# Copyright (C) 2026 The trajlab Authors
# SPDX-License-Identifier: Apache-2.0
"""Python access to the trajlab core."""

import json

from ._core import (
    TrajlabError,
    alpha_bar,
    cosine_sim,
    ddim_grid,
    default_config_json,
    dpm_grid,
    fuse_self_attention,
    hybrid_grid,
    psnr,
    replace_cross_attention,
    resolve_config_json,
    round_trip,
    run_pipeline as _run_pipeline,
    what_sweep,
)

__all__ = [
    "TrajlabError",
    "alpha_bar",
    "cosine_sim",
    "ddim_grid",
    "default_config",
    "dpm_grid",
    "fuse_self_attention",
    "hybrid_grid",
    "psnr",
    "replace_cross_attention",
    "round_trip",
    "run_pipeline",
    "what_sweep",
]


def default_config():
    return json.loads(default_config_json())


def run_pipeline(config=None):
    """Run the pipeline. `config` is a dict of overrides, a JSON string or None."""
    if config is None:
        text = ""
    elif isinstance(config, str):
        text = config
    else:
        text = json.dumps(config)
    return _run_pipeline(text)
