"""Conditional TCN: dilated causal conv blocks with FiLM conditioning.

Block i (dilation growth^i): conv -> FiLM -> PReLU, summed with a parallel
1x1 residual projection of the block input. The FiLM gamma/beta pair is an
affine projection of the global conditioning vector (gamma = first half).
A final 1x1 convolution maps the channels back to one waveform.

Checkpoints are little-endian binary: magic "NAFX", a u32 format version,
a length-prefixed JSON config (layers, channels, kernel_size,
dilation_growth, cond_dim, sample_rate, seed), every parameter tensor in
declaration order as float32, and a trailing CRC-32 of all preceding bytes.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .audio import AudioBuffer
from .ops import (
    ConvKernel,
    conv1d_causal_bwd,
    conv1d_causal_fwd,
    film_bwd,
    film_fwd,
    linear_bwd,
    linear_fwd,
    prelu_bwd,
    prelu_fwd,
)

CHECKPOINT_MAGIC = b"NAFX"
CHECKPOINT_VERSION = 1
_CONFIG_KEYS = ("layers", "channels", "kernel_size", "dilation_growth", "cond_dim", "sample_rate")
PRELU_INIT = 0.25
FILM_W_INIT = 0.01


class CheckpointError(Exception):
    """Malformed or inconsistent checkpoint file."""


@dataclass(frozen=True)
class ModelConfig:
    layers: int
    channels: int
    kernel_size: int
    dilation_growth: int
    cond_dim: int = 2
    sample_rate: int = 44100

    def __post_init__(self):
        for name in _CONFIG_KEYS:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")


def receptive_field(config: ModelConfig) -> int:
    """Samples of input memory: 1 + (K-1) * sum_i growth^i."""
    g = config.dilation_growth
    total = sum(g**i for i in range(config.layers))
    return 1 + (config.kernel_size - 1) * total


def receptive_field_ms(config: ModelConfig) -> float:
    return receptive_field(config) * 1000.0 / config.sample_rate


@dataclass
class TcnBlock:
    conv: ConvKernel
    film_w: np.ndarray  # (2C, D)
    film_b: np.ndarray  # (2C,)
    prelu_slopes: np.ndarray  # (C,)
    residual: ConvKernel  # 1x1 projection of the block input

    def parameters(self) -> list:
        return [
            self.conv.weights,
            self.conv.bias,
            self.film_w,
            self.film_b,
            self.prelu_slopes,
            self.residual.weights,
            self.residual.bias,
        ]


class TcnModel:
    """Config plus every learnable tensor; immutable during forward passes."""

    def __init__(self, config: ModelConfig, blocks: list, output: ConvKernel, seed: int):
        self.config = config
        self.blocks = blocks
        self.output = output
        self.seed = seed

    def parameters(self) -> list:
        params = []
        for block in self.blocks:
            params.extend(block.parameters())
        params.extend([self.output.weights, self.output.bias])
        return params

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    @property
    def dtype(self):
        return self.output.weights.dtype

    def astype(self, dtype) -> "TcnModel":
        def cast(k: ConvKernel) -> ConvKernel:
            return ConvKernel(k.weights.astype(dtype), k.bias.astype(dtype), k.dilation)

        blocks = [
            TcnBlock(
                conv=cast(b.conv),
                film_w=b.film_w.astype(dtype),
                film_b=b.film_b.astype(dtype),
                prelu_slopes=b.prelu_slopes.astype(dtype),
                residual=cast(b.residual),
            )
            for b in self.blocks
        ]
        return TcnModel(self.config, blocks, cast(self.output), self.seed)


def init_model(config: ModelConfig, seed: int = 0, dtype=np.float32) -> TcnModel:
    """Seeded init: conv weights/biases uniform in +-sqrt(1/(in*K)); FiLM
    projection weights uniform +-0.01 with bias fixed at identity (gamma 1,
    beta 0); PReLU slopes 0.25."""
    rng = np.random.default_rng(seed)
    c, d = config.channels, config.cond_dim

    def conv(in_ch: int, out_ch: int, k: int, dilation: int) -> ConvKernel:
        bound = np.sqrt(1.0 / (in_ch * k))
        weights = rng.uniform(-bound, bound, size=(out_ch, in_ch, k)).astype(dtype)
        bias = rng.uniform(-bound, bound, size=out_ch).astype(dtype)
        return ConvKernel(weights, bias, dilation)

    blocks = []
    for i in range(config.layers):
        in_ch = 1 if i == 0 else c
        film_b = np.concatenate([np.ones(c), np.zeros(c)]).astype(dtype)
        blocks.append(
            TcnBlock(
                conv=conv(in_ch, c, config.kernel_size, config.dilation_growth**i),
                film_w=rng.uniform(-FILM_W_INIT, FILM_W_INIT, size=(2 * c, d)).astype(dtype),
                film_b=film_b,
                prelu_slopes=np.full(c, PRELU_INIT, dtype=dtype),
                residual=conv(in_ch, c, 1, 1),
            )
        )
    return TcnModel(config, blocks, conv(c, 1, 1, 1), seed)


@dataclass
class ForwardCache:
    conditioning: np.ndarray
    block_inputs: list
    conv_outs: list
    film_outs: list
    gammas: list
    betas: list
    last_hidden: np.ndarray


def _coerce_conditioning(model: TcnModel, c) -> np.ndarray:
    c = np.asarray(c, dtype=model.dtype)
    if c.shape != (model.config.cond_dim,):
        raise ValueError(
            f"conditioning must have {model.config.cond_dim} entries, got shape {c.shape}"
        )
    if not np.isfinite(c).all():
        raise ValueError("conditioning values must be finite")
    return c


def forward_samples(model: TcnModel, samples: np.ndarray, c, keep_cache: bool = False):
    """Raw forward over a 1-D sample array in the model's dtype.

    Returns (output samples 1-D, ForwardCache or None).
    """
    c = _coerce_conditioning(model, c)
    h = np.asarray(samples, dtype=model.dtype).reshape(1, -1)
    cache = ForwardCache(c, [], [], [], [], [], h) if keep_cache else None
    channels = model.config.channels
    for block in model.blocks:
        gamma_beta = linear_fwd(c, block.film_w, block.film_b)
        gamma, beta = gamma_beta[:channels], gamma_beta[channels:]
        z = conv1d_causal_fwd(h, block.conv)
        f = film_fwd(z, gamma, beta)
        p = prelu_fwd(f, block.prelu_slopes)
        r = conv1d_causal_fwd(h, block.residual)
        if cache is not None:
            cache.block_inputs.append(h)
            cache.conv_outs.append(z)
            cache.film_outs.append(f)
            cache.gammas.append(gamma)
            cache.betas.append(beta)
        h = p + r
    if cache is not None:
        cache.last_hidden = h
    return conv1d_causal_fwd(h, model.output)[0], cache


def forward(model: TcnModel, x: AudioBuffer, c, keep_cache: bool = False):
    """Run the model over a mono buffer; output length equals input length."""
    if x.sample_rate != model.config.sample_rate:
        raise ValueError(
            f"input rate {x.sample_rate} != model rate {model.config.sample_rate}"
        )
    out, cache = forward_samples(model, x.mono(), c, keep_cache)
    return AudioBuffer(np.asarray(out, dtype=np.float32), x.sample_rate), cache


def backward(model: TcnModel, cache: ForwardCache, grad_output: np.ndarray) -> list:
    """Gradients for every learnable tensor, in parameters() order.

    The conditioning gradient is computed along the way but not returned;
    steering holds the conditioning fixed.
    """
    if cache is None:
        raise ValueError("backward requires a cache from forward(keep_cache=True)")
    grad_output = np.asarray(grad_output, dtype=model.dtype).reshape(1, -1)
    channels = model.config.channels
    c = cache.conditioning

    grad_h, grad_out_w, grad_out_b = conv1d_causal_bwd(
        cache.last_hidden, model.output, grad_output
    )
    grad_c = np.zeros_like(c)
    block_grads = []
    for i in reversed(range(len(model.blocks))):
        block = model.blocks[i]
        grad_res_x, grad_res_w, grad_res_b = conv1d_causal_bwd(
            cache.block_inputs[i], block.residual, grad_h
        )
        grad_f, grad_slopes = prelu_bwd(cache.film_outs[i], block.prelu_slopes, grad_h)
        grad_z, grad_gamma, grad_beta = film_bwd(
            cache.conv_outs[i], cache.gammas[i], cache.betas[i], grad_f
        )
        grad_ci, grad_film_w, grad_film_b = linear_bwd(
            c, block.film_w, block.film_b, np.concatenate([grad_gamma, grad_beta])
        )
        grad_c += grad_ci
        grad_conv_x, grad_conv_w, grad_conv_b = conv1d_causal_bwd(
            cache.block_inputs[i], block.conv, grad_z
        )
        grad_h = grad_conv_x + grad_res_x
        block_grads.append(
            [grad_conv_w, grad_conv_b, grad_film_w, grad_film_b, grad_slopes, grad_res_w, grad_res_b]
        )

    grads = []
    for bg in reversed(block_grads):
        grads.extend(bg)
    grads.extend([grad_out_w, grad_out_b])
    return grads


def param_summary(model: TcnModel) -> dict:
    """JSON-ready description of a loaded model (the /api/model payload)."""
    summary = {key: getattr(model.config, key) for key in _CONFIG_KEYS}
    summary["receptive_field_samples"] = receptive_field(model.config)
    summary["receptive_field_ms"] = round(receptive_field_ms(model.config), 1)
    summary["param_count"] = model.param_count
    return summary


def _config_json(model: TcnModel) -> bytes:
    payload = {key: getattr(model.config, key) for key in _CONFIG_KEYS}
    payload["seed"] = model.seed
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")


def checkpoint_bytes(model: TcnModel) -> bytes:
    header = struct.pack("<4sI", CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
    config = _config_json(model)
    parts = [header, struct.pack("<I", len(config)), config]
    for p in model.parameters():
        parts.append(np.ascontiguousarray(p, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def save_checkpoint(model: TcnModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))


def load_checkpoint_bytes(data: bytes) -> TcnModel:
    if len(data) < 12:
        raise CheckpointError("truncated checkpoint: shorter than the fixed header")
    magic, version = struct.unpack_from("<4sI", data, 0)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"magic check failed: expected {CHECKPOINT_MAGIC!r}, got {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (config_len,) = struct.unpack_from("<I", data, 8)
    if len(data) < 12 + config_len + 4:
        raise CheckpointError("truncated checkpoint: config or CRC missing")

    (stored_crc,) = struct.unpack_from("<I", data, len(data) - 4)
    actual_crc = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise CheckpointError(
            f"CRC mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
        )

    try:
        payload = json.loads(data[12 : 12 + config_len].decode("utf-8"))
        seed = int(payload.pop("seed"))
        config = ModelConfig(**{key: int(payload[key]) for key in _CONFIG_KEYS})
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"bad config block: {exc}") from exc

    model = init_model(config, seed=seed)
    params = model.parameters()
    expected = sum(p.size for p in params)
    blob = data[12 + config_len : -4]
    if len(blob) != 4 * expected:
        raise CheckpointError(
            f"parameter count mismatch: config implies {expected} floats, file carries {len(blob) // 4}"
        )
    offset = 0
    for p in params:
        count = p.size
        values = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        p[...] = values.reshape(p.shape)
        offset += 4 * count
    return model


def load_checkpoint(path) -> TcnModel:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    return load_checkpoint_bytes(data)
