"""Steerable neural audio effects.

Train a small conditional TCN on a single clean/processed recording pair,
render new audio under arbitrary conditioning values, and quantify the
resulting effect (loudness grids, energy decay, T60).
"""

from .audio import (
    AudioBuffer,
    AudioIOError,
    make_impulse,
    make_noise,
    make_sine,
    read_wav,
    to_mono,
    write_wav,
)
from .loss import LossReport, StftResolution, mrstft_grad, mrstft_loss
from .metrics import (
    DecayCurve,
    GridSweep,
    T60Estimate,
    T60FitError,
    decay_consistency,
    estimate_t60,
    grid_sweep,
    integrated_loudness,
    schroeder_edc,
)
from .model import (
    CheckpointError,
    ModelConfig,
    TcnModel,
    backward,
    forward,
    init_model,
    load_checkpoint,
    receptive_field,
    receptive_field_ms,
    save_checkpoint,
)
from .train import (
    NonFiniteLossError,
    SteerResult,
    TrainConfig,
    TrainHistory,
    lr_at,
    make_reference_effect,
    steer,
)

__version__ = "0.1.0"

__all__ = [
    "AudioBuffer",
    "AudioIOError",
    "CheckpointError",
    "DecayCurve",
    "GridSweep",
    "LossReport",
    "ModelConfig",
    "NonFiniteLossError",
    "StftResolution",
    "SteerResult",
    "T60Estimate",
    "T60FitError",
    "TcnModel",
    "TrainConfig",
    "TrainHistory",
    "backward",
    "decay_consistency",
    "estimate_t60",
    "forward",
    "grid_sweep",
    "init_model",
    "integrated_loudness",
    "load_checkpoint",
    "lr_at",
    "make_impulse",
    "make_noise",
    "make_sine",
    "make_reference_effect",
    "mrstft_grad",
    "mrstft_loss",
    "read_wav",
    "receptive_field",
    "receptive_field_ms",
    "save_checkpoint",
    "schroeder_edc",
    "steer",
    "to_mono",
    "write_wav",
]
