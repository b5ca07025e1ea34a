"""Loudness, energy-decay, and conditioning-grid analyses.

Integrated loudness follows the broadcast K-weighting/gating recipe:
high-shelf plus high-pass pre-filter, 400 ms blocks with 75% overlap, an
absolute gate at -70 LUFS and a relative gate 10 LU below the
absolutely-gated mean. Filter coefficients are recomputed for any sample
rate from the continuous-time prototypes via the bilinear transform, so
44.1 kHz material meters correctly. A fully gated (silent) signal returns
-inf, the distinguished "below gate" value.

Reverberation analyses build Schroeder decay curves (backward-integrated
squared IR, normalized to 0 dB) and fit T60 over the -5..-25 dB span
(x3 extrapolation), falling back to -5..-15 dB (x6) with a reduced
confidence flag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .audio import AudioBuffer
from .model import TcnModel, forward

BELOW_GATE = float("-inf")
ABSOLUTE_GATE_LUFS = -70.0
BLOCK_SECONDS = 0.4
BLOCK_OVERLAP = 0.75
EDC_FLOOR_DB = -120.0


class T60FitError(ValueError):
    """Decay curve never reaches the level needed for a T60 line fit."""


def k_weighting_sos(sample_rate: int) -> np.ndarray:
    """Two-stage K-weighting cascade (high shelf + high pass) as SOS rows.

    Continuous-time prototype parameters are the ones that reproduce the
    48 kHz reference coefficients; the bilinear transform maps them to any
    rate.
    """
    # Stage 1: spherical-head high shelf.
    f0 = 1681.9744509555319
    gain_db = 3.99984385397
    q = 0.7071752369554193
    k = math.tan(math.pi * f0 / sample_rate)
    vh = 10.0 ** (gain_db / 20.0)
    vb = vh**0.499666774155
    a0 = 1.0 + k / q + k * k
    shelf = [
        (vh + vb * k / q + k * k) / a0,
        2.0 * (k * k - vh) / a0,
        (vh - vb * k / q + k * k) / a0,
        1.0,
        2.0 * (k * k - 1.0) / a0,
        (1.0 - k / q + k * k) / a0,
    ]
    # Stage 2: high pass.
    f0 = 38.13547087613982
    q = 0.5003270373253953
    k = math.tan(math.pi * f0 / sample_rate)
    a0 = 1.0 + k / q + k * k
    highpass = [
        1.0,
        -2.0,
        1.0,
        1.0,
        2.0 * (k * k - 1.0) / a0,
        (1.0 - k / q + k * k) / a0,
    ]
    return np.array([shelf, highpass], dtype=np.float64)


def _channel_weights(channels: int) -> np.ndarray:
    # Front channels weigh 1.0, surrounds 1.41.
    return np.array([1.0 if i < 3 else 1.41 for i in range(channels)])


def integrated_loudness(buffer: AudioBuffer) -> float:
    """Gated integrated loudness in LUFS; -inf when everything is gated out."""
    block = int(round(BLOCK_SECONDS * buffer.sample_rate))
    hop = int(round(block * (1.0 - BLOCK_OVERLAP)))
    n = buffer.n_frames
    if n < block:
        raise ValueError(
            f"signal too short for loudness: {n / buffer.sample_rate:.3f} s < {BLOCK_SECONDS} s"
        )

    sos = k_weighting_sos(buffer.sample_rate)
    filtered = sps.sosfilt(sos, buffer.samples.astype(np.float64), axis=1)

    n_blocks = (n - block) // hop + 1
    starts = hop * np.arange(n_blocks)
    weights = _channel_weights(buffer.channels)
    # z[j] = sum_i G_i * mean square of channel i over block j
    power = np.empty(n_blocks)
    for j, s in enumerate(starts):
        seg = filtered[:, s : s + block]
        power[j] = float(weights @ np.mean(seg * seg, axis=1))

    with np.errstate(divide="ignore"):
        block_lufs = -0.691 + 10.0 * np.log10(power)

    above_abs = power[block_lufs > ABSOLUTE_GATE_LUFS]
    if above_abs.size == 0:
        return BELOW_GATE
    relative_gate = -0.691 + 10.0 * math.log10(above_abs.mean()) - 10.0
    kept = power[(block_lufs > ABSOLUTE_GATE_LUFS) & (block_lufs > relative_gate)]
    if kept.size == 0:
        return BELOW_GATE
    return -0.691 + 10.0 * math.log10(kept.mean())


@dataclass
class DecayCurve:
    """Schroeder decay: times in seconds, levels in dB (0 at t=0, nonincreasing)."""

    times: np.ndarray
    levels_db: np.ndarray

    def write_csv(self, fh) -> None:
        fh.write("time_s,level_db\n")
        for t, level in zip(self.times, self.levels_db):
            fh.write(f"{float(t)!r},{float(level)!r}\n")


def schroeder_edc(ir: AudioBuffer) -> DecayCurve:
    """EDC(t) = 10 log10( sum_{tau>=t} ir^2 / total energy ), floored at -120 dB."""
    if ir.channels != 1:
        raise ValueError("energy decay expects a mono impulse response")
    x = ir.mono().astype(np.float64)
    energy = x * x
    tail = np.cumsum(energy[::-1])[::-1]
    total = tail[0]
    if total <= 0.0:
        raise ValueError("impulse response is all zeros; no energy to integrate")
    with np.errstate(divide="ignore"):
        levels = 10.0 * np.log10(tail / total)
    levels = np.maximum(levels, EDC_FLOOR_DB)
    times = np.arange(x.shape[0], dtype=np.float64) / ir.sample_rate
    return DecayCurve(times=times, levels_db=levels)


@dataclass
class T60Estimate:
    seconds: float
    fit_range_db: tuple
    reduced_confidence: bool


def _fit_span(curve: DecayCurve, lower_db: float) -> float | None:
    """Slope (dB/s) of the least-squares line over the -5..lower_db span."""
    above = curve.levels_db <= -5.0
    below = curve.levels_db <= lower_db
    if not below.any():
        return None
    start = int(np.argmax(above))
    stop = int(np.argmax(below))
    if stop <= start:
        return None
    t = curve.times[start : stop + 1]
    level = curve.levels_db[start : stop + 1]
    slope = np.polyfit(t, level, 1)[0]
    if slope >= 0:
        return None
    return float(slope)


def estimate_t60(curve: DecayCurve) -> T60Estimate:
    """T60 from the decay slope: fit -5..-25 dB and scale the 20 dB span x3;
    fall back to -5..-15 dB (x6) with a reduced-confidence flag."""
    slope = _fit_span(curve, -25.0)
    if slope is not None:
        return T60Estimate(seconds=-60.0 / slope, fit_range_db=(-5.0, -25.0), reduced_confidence=False)
    slope = _fit_span(curve, -15.0)
    if slope is not None:
        return T60Estimate(seconds=-60.0 / slope, fit_range_db=(-5.0, -15.0), reduced_confidence=True)
    raise T60FitError("decay curve never reaches -15 dB; cannot fit a T60 line")


def rms_db(buffer: AudioBuffer) -> float:
    """20 log10 of the RMS over all channels; -inf for digital silence."""
    x = buffer.samples.astype(np.float64)
    mean_square = float(np.mean(x * x))
    if mean_square == 0.0:
        return float("-inf")
    return 10.0 * math.log10(mean_square)


GRID_METRICS = ("lufs", "t60", "rms")


@dataclass
class GridSweep:
    """Metric values over a conditioning lattice: values[i, j] at (c0[i], c1[j])."""

    c0_axis: np.ndarray
    c1_axis: np.ndarray
    metric: str
    values: np.ndarray
    status: list  # list of rows of status strings

    CSV_HEADER = "c0,c1,metric,value,status"

    def write_csv(self, fh) -> None:
        fh.write(self.CSV_HEADER + "\n")
        for i, c0 in enumerate(self.c0_axis):
            for j, c1 in enumerate(self.c1_axis):
                value = self.values[i, j]
                text = "" if not math.isfinite(value) else repr(float(value))
                fh.write(f"{float(c0)!r},{float(c1)!r},{self.metric},{text},{self.status[i][j]}\n")


def _evaluate_metric(metric: str, rendered: AudioBuffer) -> tuple[float, str]:
    if metric == "rms":
        value = rms_db(rendered)
        return (value, "ok") if math.isfinite(value) else (math.nan, "silence")
    if metric == "lufs":
        value = integrated_loudness(rendered)
        return (value, "ok") if math.isfinite(value) else (math.nan, "below_gate")
    try:
        estimate = estimate_t60(schroeder_edc(rendered))
    except (T60FitError, ValueError) as exc:
        return math.nan, f"fit_failure: {exc}"
    status = "ok_reduced_confidence" if estimate.reduced_confidence else "ok"
    return estimate.seconds, status


def grid_sweep(
    model: TcnModel,
    input_buffer: AudioBuffer,
    c0_range: tuple = (-5.0, 5.0),
    c1_range: tuple = (-5.0, 5.0),
    steps: int = 11,
    metric: str = "rms",
) -> GridSweep:
    """Render the model at every lattice point and evaluate one metric.

    Per-cell metric failures land in the status matrix instead of raising.
    """
    if steps < 2:
        raise ValueError(f"lattice needs at least 2 steps per axis, got {steps}")
    if metric not in GRID_METRICS:
        raise ValueError(f"unknown metric {metric!r}; choose from {GRID_METRICS}")
    c0_axis = np.linspace(c0_range[0], c0_range[1], steps)
    c1_axis = np.linspace(c1_range[0], c1_range[1], steps)
    if not (np.all(np.diff(c0_axis) > 0) and np.all(np.diff(c1_axis) > 0)):
        raise ValueError("axis ranges must be strictly increasing")

    values = np.full((steps, steps), math.nan)
    status = [["" for _ in range(steps)] for _ in range(steps)]
    for i, c0 in enumerate(c0_axis):
        for j, c1 in enumerate(c1_axis):
            rendered, _ = forward(model, input_buffer, (c0, c1))
            values[i, j], status[i][j] = _evaluate_metric(metric, rendered)
    return GridSweep(c0_axis=c0_axis, c1_axis=c1_axis, metric=metric, values=values, status=status)


@dataclass
class LevelDecay:
    level: float
    curve: DecayCurve
    t60: T60Estimate | None
    error: str | None


def decay_consistency(
    model: TcnModel,
    levels,
    ir_length: int,
    conditioning=None,
) -> list:
    """Render impulses at several input levels; report the EDC and T60 of each.

    The comparison is qualitative, so nothing is asserted here; fit
    failures are carried per level.
    """
    from .audio import make_impulse

    levels = list(levels)
    if not levels or any(level <= 0 for level in levels):
        raise ValueError("levels must be a nonempty list of positive amplitudes")
    if conditioning is None:
        conditioning = np.zeros(model.config.cond_dim)
    results = []
    for level in levels:
        impulse = make_impulse(ir_length, level, model.config.sample_rate)
        rendered, _ = forward(model, impulse, conditioning)
        curve = schroeder_edc(rendered)
        try:
            estimate = estimate_t60(curve)
            results.append(LevelDecay(level=level, curve=curve, t60=estimate, error=None))
        except (T60FitError, ValueError) as exc:
            results.append(LevelDecay(level=level, curve=curve, t60=None, error=str(exc)))
    return results


def write_decay_report(curves_path, summary_path, results: list) -> None:
    """CSV pair for a decay-consistency run: long-format curves + T60 summary."""
    with open(curves_path, "w", encoding="utf-8") as fh:
        fh.write("level,time_s,level_db\n")
        for r in results:
            for t, level_db in zip(r.curve.times, r.curve.levels_db):
                fh.write(f"{float(r.level)!r},{float(t)!r},{float(level_db)!r}\n")
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write("level,t60_s,fit,status\n")
        for r in results:
            if r.t60 is not None:
                fit = f"{r.t60.fit_range_db[0]:g}..{r.t60.fit_range_db[1]:g}dB"
                fh.write(f"{float(r.level)!r},{r.t60.seconds!r},{fit},ok\n")
            else:
                fh.write(f"{float(r.level)!r},,,fit_failure\n")
