"""WAV I/O and synthetic test signals.

All audio lives in :class:`AudioBuffer`: float32 samples shaped
(channels, frames), nominal full scale +-1.0. Readers scale integer PCM
into that range; the float32 path is bit-exact both ways.
"""

from __future__ import annotations

import io
import logging
import math
import re
import struct
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_SAMPLE_RATE = 44100

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class AudioIOError(Exception):
    """Unreadable, unwritable, or unsupported WAV data."""


@dataclass
class AudioBuffer:
    """Mono or multichannel audio: samples (channels, frames) float32 plus a rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float32)
        if arr.ndim == 1:
            arr = arr[np.newaxis, :]
        if arr.ndim != 2:
            raise ValueError(f"samples must be 1-D or 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"need at least one channel and one frame, got shape {arr.shape}")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        self.samples = np.ascontiguousarray(arr)
        self.sample_rate = int(self.sample_rate)

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_frames(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.samples.shape[1] / self.sample_rate

    def mono(self) -> np.ndarray:
        """1-D view of a single-channel buffer's samples."""
        if self.channels != 1:
            raise ValueError(f"buffer has {self.channels} channels; call to_mono first")
        return self.samples[0]


def _parse_wav(data: bytes, source: str) -> AudioBuffer:
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise AudioIOError(f"{source}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        pos += 8
        body = data[pos : pos + size]
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            payload = body
        pos += size + (size & 1)  # chunks are word-aligned

    if fmt is None or len(fmt) < 16:
        raise AudioIOError(f"{source}: missing fmt chunk")
    if payload is None:
        raise AudioIOError(f"{source}: missing data chunk")

    code, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if code == _WAVE_FORMAT_EXTENSIBLE:
        if len(fmt) < 26:
            raise AudioIOError(f"{source}: truncated extensible fmt chunk")
        code = struct.unpack_from("<H", fmt, 24)[0]
    if channels < 1 or rate <= 0:
        raise AudioIOError(f"{source}: bad fmt fields (channels={channels}, rate={rate})")

    frame_bytes = channels * (bits // 8)
    if frame_bytes == 0 or len(payload) < frame_bytes:
        raise AudioIOError(f"{source}: zero-length audio")
    n_frames = len(payload) // frame_bytes
    payload = payload[: n_frames * frame_bytes]

    if code == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        flat = np.frombuffer(payload, dtype="<f4")
    elif code == _WAVE_FORMAT_PCM and bits == 16:
        flat = np.frombuffer(payload, dtype="<i2").astype(np.float32) / 32768.0
    elif code == _WAVE_FORMAT_PCM and bits == 24:
        raw = np.frombuffer(payload, dtype=np.uint8).reshape(-1, 3)
        ints = (
            raw[:, 0].astype(np.int32)
            | (raw[:, 1].astype(np.int32) << 8)
            | (raw[:, 2].astype(np.int32) << 16)
        )
        ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
        flat = ints.astype(np.float32) / float(1 << 23)
    else:
        raise AudioIOError(f"{source}: unsupported codec (format {code}, {bits}-bit)")

    samples = flat.reshape(n_frames, channels).T
    if not np.isfinite(samples).all():
        raise AudioIOError(f"{source}: non-finite sample values")
    return AudioBuffer(samples.astype(np.float32, copy=True), rate)


def read_wav(path) -> AudioBuffer:
    """Read a PCM16, PCM24, or float32 WAV file.

    Integer formats are scaled by 2^(bits-1) into [-1, 1); float data passes
    through untouched.
    """
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise AudioIOError(f"{path}: {exc}") from exc
    return _parse_wav(data, str(path))


def read_wav_bytes(data: bytes, source: str = "<bytes>") -> AudioBuffer:
    """Parse WAV bytes already in memory (uploads, tests)."""
    return _parse_wav(data, source)


def wav_bytes(buffer: AudioBuffer, fmt: str = "float32") -> tuple[bytes, int]:
    """Encode a buffer as WAV bytes. Returns (bytes, clip_count).

    float32 stores exact sample values; pcm16 clamps to [-1, 1], scales by
    32767 and rounds, counting clamped samples.
    """
    interleaved = buffer.samples.T
    clip_count = 0
    if fmt == "float32":
        code, bits = _WAVE_FORMAT_IEEE_FLOAT, 32
        payload = interleaved.astype("<f4").tobytes()
    elif fmt == "pcm16":
        code, bits = _WAVE_FORMAT_PCM, 16
        clip_count = int(np.count_nonzero(np.abs(interleaved) > 1.0))
        clipped = np.clip(interleaved, -1.0, 1.0)
        payload = np.rint(clipped * 32767.0).astype("<i2").tobytes()
    else:
        raise ValueError(f"unknown format {fmt!r}; use 'float32' or 'pcm16'")

    channels = buffer.channels
    rate = buffer.sample_rate
    block_align = channels * bits // 8
    out = io.BytesIO()
    fmt_chunk = struct.pack(
        "<HHIIHH", code, channels, rate, rate * block_align, block_align, bits
    )
    chunks = [(b"fmt ", fmt_chunk)]
    if code == _WAVE_FORMAT_IEEE_FLOAT:
        chunks.append((b"fact", struct.pack("<I", buffer.n_frames)))
    chunks.append((b"data", payload))
    body_size = sum(8 + len(c) + (len(c) & 1) for _, c in chunks) + 4
    out.write(struct.pack("<4sI4s", b"RIFF", body_size, b"WAVE"))
    for cid, c in chunks:
        out.write(struct.pack("<4sI", cid, len(c)))
        out.write(c)
        if len(c) & 1:
            out.write(b"\x00")
    return out.getvalue(), clip_count


def write_wav(path, buffer: AudioBuffer, fmt: str = "float32") -> int:
    """Write a WAV file; returns the pcm16 clip count (0 for float32)."""
    data, clip_count = wav_bytes(buffer, fmt)
    if clip_count:
        log.warning("write_wav %s: %d samples clipped to [-1, 1]", path, clip_count)
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise AudioIOError(f"{path}: {exc}") from exc
    return clip_count


def to_mono(buffer: AudioBuffer) -> AudioBuffer:
    """Collapse to the channel mean; mono input is returned unchanged."""
    if buffer.channels == 1:
        return buffer
    log.info("collapsing %d channels to mono", buffer.channels)
    mixed = buffer.samples.mean(axis=0, dtype=np.float64).astype(np.float32)
    return AudioBuffer(mixed, buffer.sample_rate)


def make_impulse(length: int, amplitude: float = 1.0, sample_rate: int = DEFAULT_SAMPLE_RATE) -> AudioBuffer:
    """Unit-sample impulse: sample 0 carries the amplitude, the rest are zero."""
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    if not math.isfinite(amplitude):
        raise ValueError("amplitude must be finite")
    samples = np.zeros(length, dtype=np.float32)
    samples[0] = amplitude
    return AudioBuffer(samples, sample_rate)


def make_sine(freq: float, amplitude: float, duration: float, sample_rate: int = DEFAULT_SAMPLE_RATE) -> AudioBuffer:
    """Sine s[n] = amplitude * sin(2*pi*freq*n/sample_rate)."""
    if not 0 < freq < sample_rate / 2:
        raise ValueError(f"freq must be in (0, {sample_rate / 2}), got {freq}")
    n = int(round(duration * sample_rate))
    t = np.arange(n, dtype=np.float64)
    samples = amplitude * np.sin(2.0 * np.pi * freq * t / sample_rate)
    return AudioBuffer(samples.astype(np.float32), sample_rate)


def make_noise(duration: float, amplitude: float = 0.5, sample_rate: int = DEFAULT_SAMPLE_RATE, seed: int = 0) -> AudioBuffer:
    """Seeded uniform noise in [-amplitude, amplitude]."""
    n = int(round(duration * sample_rate))
    rng = np.random.default_rng(seed)
    samples = rng.uniform(-amplitude, amplitude, size=n).astype(np.float32)
    return AudioBuffer(samples, sample_rate)


_SPEC_RE = re.compile(r"^(impulse|noise|sine):(.+)$")


def is_signal_spec(text: str) -> bool:
    return bool(_SPEC_RE.match(text))


def synth_from_spec(spec: str, sample_rate: int = DEFAULT_SAMPLE_RATE) -> AudioBuffer:
    """Build a test signal from a spec string.

    Supported: ``impulse:<dur>``, ``noise:<dur>[,<seed>]``,
    ``sine:<freq>,<dur>``. Durations are seconds and may carry a trailing
    's' (``impulse:2.5s``).
    """
    m = _SPEC_RE.match(spec)
    if not m:
        raise ValueError(f"not a signal spec: {spec!r}")
    kind, args = m.group(1), m.group(2).split(",")

    def seconds(text: str) -> float:
        value = float(text.rstrip("s"))
        if value <= 0:
            raise ValueError(f"duration must be positive in {spec!r}")
        return value

    if kind == "impulse":
        if len(args) != 1:
            raise ValueError(f"impulse spec takes one duration: {spec!r}")
        return make_impulse(int(round(seconds(args[0]) * sample_rate)), 1.0, sample_rate)
    if kind == "noise":
        if len(args) not in (1, 2):
            raise ValueError(f"noise spec is noise:<dur>[,<seed>]: {spec!r}")
        seed = int(args[1]) if len(args) == 2 else 0
        return make_noise(seconds(args[0]), 0.5, sample_rate, seed)
    if len(args) != 2:
        raise ValueError(f"sine spec is sine:<freq>,<dur>: {spec!r}")
    return make_sine(float(args[0]), 1.0, seconds(args[1]), sample_rate)
