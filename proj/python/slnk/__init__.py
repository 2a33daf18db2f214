"""Slimmable keyword-spotting networks.

Train one super-network once, then run, evaluate, and export sub-networks of
it at any configured width. The heavy lifting lives in the compiled
``slnk._core`` extension; this package re-exports its public surface.
"""

from slnk._core import (  # noqa: F401
    ConfigurationError,
    IoError,
    Model,
    ShapeError,
    active_count,
    build_model,
    false_accepts_at_miss_rate,
    lfbe,
    load_checkpoint,
    model_from_config,
    profile_time_per_step,
    synth_clip,
    synth_features,
)

__all__ = [
    "ConfigurationError",
    "IoError",
    "Model",
    "ShapeError",
    "active_count",
    "build_model",
    "false_accepts_at_miss_rate",
    "lfbe",
    "load_checkpoint",
    "model_from_config",
    "profile_time_per_step",
    "synth_clip",
    "synth_features",
]

__version__ = "0.1.0"
