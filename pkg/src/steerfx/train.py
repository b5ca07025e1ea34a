"""Single-pair steering: fit the TCN to one clean/processed recording.

Every iteration runs the full sequence forward with the conditioning
vector held at zero, evaluates the multi-resolution STFT loss against the
processed target, backpropagates, and applies one Adam step under a
staged learning-rate schedule (default x0.1 at 80% of the run, x0.01 at
95%). Runs are deterministic given the seed; optimizer state can be
checkpointed mid-run and resumed bit-exactly.
"""

from __future__ import annotations

import json
import logging
import math
import struct
import time
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from .audio import AudioBuffer, to_mono
from .loss import MrstftObjective, default_resolutions
from .model import (
    ModelConfig,
    TcnModel,
    backward,
    forward_samples,
    init_model,
    receptive_field,
    save_checkpoint,
)
from .ops import AdamState, adam_step

log = logging.getLogger(__name__)

STATE_MAGIC = b"NAFS"
STATE_VERSION = 1


class NonFiniteLossError(RuntimeError):
    """Steering diverged: the loss became NaN/Inf at a known iteration."""

    def __init__(self, iteration: int):
        super().__init__(f"non-finite loss at iteration {iteration}; aborting steering")
        self.iteration = iteration


@dataclass
class TrainConfig:
    iterations: int = 2500
    base_lr: float = 1e-3
    lr_milestones: tuple = ((0.8, 0.1), (0.95, 0.01))
    seed: int = 0
    resolutions: tuple = field(default_factory=default_resolutions)
    log_every: int = 50
    checkpoint_path: str | None = None
    # Memory-bound escape hatch: train each iteration on a seeded random
    # crop of this many samples instead of the full pair. Default off.
    crop_samples: int | None = None
    # Optional global-norm gradient clipping for experimentation.
    clip_grad_norm: float | None = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        fractions = [frac for frac, _ in self.lr_milestones]
        if any(not 0 < f <= 1 for f in fractions) or fractions != sorted(set(fractions)):
            raise ValueError("milestone fractions must be strictly increasing within (0, 1]")
        self.resolutions = tuple(self.resolutions)
        max_fft = max(r.fft_size for r in self.resolutions)
        if self.crop_samples is not None and self.crop_samples < max_fft:
            raise ValueError(
                f"crop_samples must cover the largest fft_size ({max_fft}), got {self.crop_samples}"
            )
        if self.clip_grad_norm is not None and self.clip_grad_norm <= 0:
            raise ValueError(f"clip_grad_norm must be positive, got {self.clip_grad_norm}")


def lr_at(iteration: int, config: TrainConfig) -> float:
    """Learning rate for an iteration: base until 80% of the run, then /10, then /100."""
    if not 0 <= iteration < config.iterations:
        raise ValueError(f"iteration {iteration} outside [0, {config.iterations})")
    lr = config.base_lr
    for frac, factor in config.lr_milestones:
        if iteration >= math.floor(frac * config.iterations):
            lr = config.base_lr * factor
    return lr


@dataclass
class TrainHistory:
    """Per-iteration trace: (iteration, lr, loss_total, sc_total, logmag_total)."""

    iterations: np.ndarray
    lr: np.ndarray
    loss_total: np.ndarray
    sc_total: np.ndarray
    logmag_total: np.ndarray
    duration_s: float = 0.0

    CSV_HEADER = "iteration,lr,loss_total,sc_total,logmag_total"

    def __len__(self) -> int:
        return len(self.iterations)

    @classmethod
    def from_rows(cls, rows: list, duration_s: float = 0.0) -> "TrainHistory":
        arr = np.asarray(rows, dtype=np.float64).reshape(-1, 5)
        return cls(
            iterations=arr[:, 0].astype(np.int64),
            lr=arr[:, 1],
            loss_total=arr[:, 2],
            sc_total=arr[:, 3],
            logmag_total=arr[:, 4],
            duration_s=duration_s,
        )

    def rows(self) -> list:
        return [
            (int(i), float(lr), float(lt), float(sc), float(lm))
            for i, lr, lt, sc, lm in zip(
                self.iterations, self.lr, self.loss_total, self.sc_total, self.logmag_total
            )
        ]

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.CSV_HEADER + "\n")
            for i, lr, lt, sc, lm in self.rows():
                fh.write(f"{i},{lr!r},{lt!r},{sc!r},{lm!r}\n")


@dataclass
class TrainState:
    """Resumable optimizer snapshot: next iteration, Adam buffers, history so far."""

    iteration: int
    adam: AdamState
    rows: list


@dataclass
class SteerResult:
    model: TcnModel
    history: TrainHistory
    state: TrainState


def steer(
    x: AudioBuffer,
    y: AudioBuffer,
    model_config: ModelConfig,
    train_config: TrainConfig,
    *,
    resume: tuple | None = None,
    stop_at_iteration: int | None = None,
    progress=None,
) -> SteerResult:
    """Fit g(x, c=0) to y; returns the trained model, history, and final state.

    ``resume=(model, state)`` continues a previous run bit-exactly.
    ``stop_at_iteration`` halts early so the state can be saved and resumed.
    """
    if x.sample_rate != y.sample_rate:
        raise ValueError(f"sample-rate mismatch: input {x.sample_rate}, target {y.sample_rate}")
    if x.sample_rate != model_config.sample_rate:
        raise ValueError(
            f"input rate {x.sample_rate} != model rate {model_config.sample_rate}"
        )
    x = to_mono(x)
    y = to_mono(y)
    if x.n_frames != y.n_frames:
        raise ValueError(f"length mismatch: input {x.n_frames}, target {y.n_frames}")
    rf = receptive_field(model_config)
    if x.n_frames < rf:
        log.warning(
            "steering pair (%d samples) is shorter than the receptive field (%d samples)",
            x.n_frames,
            rf,
        )

    if resume is not None:
        model, state = resume
        if model.config != model_config:
            raise ValueError("resume state was built for a different model config")
    else:
        model = init_model(model_config, seed=train_config.seed)
        state = TrainState(iteration=0, adam=AdamState.for_params(model.parameters()), rows=[])

    x_samples = x.mono().astype(np.float32)
    y_samples = y.mono().astype(np.float32)
    crop = train_config.crop_samples
    if crop is not None and crop > x_samples.shape[0]:
        crop = None
    objective = None
    if crop is None:
        objective = MrstftObjective(y_samples, train_config.resolutions)
    params = model.parameters()
    conditioning = np.zeros(model_config.cond_dim, dtype=np.float32)

    end = train_config.iterations
    if stop_at_iteration is not None:
        end = min(end, stop_at_iteration)

    started = time.perf_counter()
    while state.iteration < end:
        it = state.iteration
        assert not conditioning.any(), "conditioning must stay at zero during steering"
        lr = lr_at(it, train_config)
        if crop is None:
            x_it, it_objective = x_samples, objective
        else:
            # per-iteration seeding keeps resumed runs bit-identical
            offset = int(
                np.random.default_rng((train_config.seed, it)).integers(
                    0, x_samples.shape[0] - crop + 1
                )
            )
            x_it = x_samples[offset : offset + crop]
            it_objective = MrstftObjective(
                y_samples[offset : offset + crop], train_config.resolutions
            )
        y_hat, cache = forward_samples(model, x_it, conditioning, keep_cache=True)
        report, grad_y = it_objective.evaluate(y_hat)
        if not math.isfinite(report.total):
            raise NonFiniteLossError(it)
        grads = backward(model, cache, grad_y)
        if train_config.clip_grad_norm is not None:
            norm = math.sqrt(sum(float(np.square(g, dtype=np.float64).sum()) for g in grads))
            if norm > train_config.clip_grad_norm:
                scale = np.float32(train_config.clip_grad_norm / norm)
                grads = [g * scale for g in grads]
        adam_step(params, grads, state.adam, lr)
        state.rows.append((it, lr, report.total, report.sc_total, report.logmag_total))
        state.iteration = it + 1
        if it % train_config.log_every == 0:
            log.info(
                "iter=%d lr=%g loss=%g sc=%g logmag=%g",
                it, lr, report.total, report.sc_total, report.logmag_total,
            )
            if progress is not None:
                progress(it, lr, report)
    duration = time.perf_counter() - started

    history = TrainHistory.from_rows(state.rows, duration_s=duration)
    if state.iteration >= train_config.iterations and train_config.checkpoint_path:
        save_checkpoint(model, train_config.checkpoint_path)
    return SteerResult(model=model, history=history, state=state)


def save_train_state(path, model: TcnModel, state: TrainState) -> None:
    """Mid-run snapshot: config, params, Adam moments, and history rows."""
    config = {key: getattr(model.config, key) for key in
              ("layers", "channels", "kernel_size", "dilation_growth", "cond_dim", "sample_rate")}
    config["seed"] = model.seed
    config_bytes = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")

    parts = [struct.pack("<4sI", STATE_MAGIC, STATE_VERSION)]
    parts.append(struct.pack("<I", len(config_bytes)))
    parts.append(config_bytes)
    parts.append(struct.pack("<II", state.iteration, state.adam.step_count))
    for group in (model.parameters(), state.adam.first_moment, state.adam.second_moment):
        for p in group:
            parts.append(np.ascontiguousarray(p, dtype="<f4").tobytes())
    rows = np.asarray(state.rows, dtype="<f8").reshape(-1, 5)
    parts.append(struct.pack("<I", rows.shape[0]))
    parts.append(rows.tobytes())
    body = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


def load_train_state(path) -> tuple:
    """Inverse of save_train_state; returns (model, state)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != STATE_MAGIC:
        raise ValueError(f"{path}: not a steering state file")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != STATE_VERSION:
        raise ValueError(f"{path}: unsupported state version {version}")
    (stored_crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if stored_crc != (zlib.crc32(data[:-4]) & 0xFFFFFFFF):
        raise ValueError(f"{path}: CRC mismatch")

    (config_len,) = struct.unpack_from("<I", data, 8)
    payload = json.loads(data[12 : 12 + config_len].decode("utf-8"))
    seed = int(payload.pop("seed"))
    config = ModelConfig(**{k: int(v) for k, v in payload.items()})
    offset = 12 + config_len
    iteration, step_count = struct.unpack_from("<II", data, offset)
    offset += 8

    model = init_model(config, seed=seed)
    params = model.parameters()
    adam = AdamState.for_params(params)
    adam.step_count = step_count
    for group in (params, adam.first_moment, adam.second_moment):
        for p in group:
            values = np.frombuffer(data, dtype="<f4", count=p.size, offset=offset)
            p[...] = values.reshape(p.shape)
            offset += 4 * p.size

    (n_rows,) = struct.unpack_from("<I", data, offset)
    offset += 4
    rows_arr = np.frombuffer(data, dtype="<f8", count=n_rows * 5, offset=offset).reshape(-1, 5)
    rows = [(int(r[0]), float(r[1]), float(r[2]), float(r[3]), float(r[4])) for r in rows_arr]
    return model, TrainState(iteration=iteration, adam=adam, rows=rows)


REFERENCE_EFFECTS = ("gain", "softclip", "echo", "onepole_lowpass")


def make_reference_effect(name: str, params: dict | None = None, **kwargs):
    """Synthetic stand-in effects used to manufacture steering targets.

    gain: {gain}; softclip: {drive} (tanh(drive*x)); echo: {delay_samples,
    mix}; onepole_lowpass: {coeff} (pole in (0, 1)). Returns a pure
    AudioBuffer -> AudioBuffer transform.
    """
    opts = dict(params or {})
    opts.update(kwargs)

    if name == "gain":
        g = float(opts.get("gain", 0.5))
        fn = lambda s: g * s
    elif name == "softclip":
        drive = float(opts.get("drive", 4.0))
        fn = lambda s: np.tanh(drive * s)
    elif name == "echo":
        delay = int(opts.get("delay_samples", 1000))
        mix = float(opts.get("mix", 0.5))
        if delay < 1:
            raise ValueError(f"delay_samples must be >= 1, got {delay}")

        def fn(s):
            out = s.copy()
            if delay < s.shape[-1]:
                out[..., delay:] += mix * s[..., :-delay]
            return out

    elif name == "onepole_lowpass":
        coeff = float(opts.get("coeff", 0.95))
        if not 0 < coeff < 1:
            raise ValueError(f"coeff must be in (0, 1), got {coeff}")
        fn = lambda s: sps.lfilter([1.0 - coeff], [1.0, -coeff], s, axis=-1)
    else:
        raise ValueError(f"unknown reference effect {name!r}; choose from {REFERENCE_EFFECTS}")

    def apply(buffer: AudioBuffer) -> AudioBuffer:
        return AudioBuffer(np.asarray(fn(buffer.samples.astype(np.float64)), dtype=np.float32),
                           buffer.sample_rate)

    return apply
