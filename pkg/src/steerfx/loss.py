"""Multi-resolution STFT loss with an analytic gradient.

Per resolution the loss combines spectral convergence,

    sc = ||  |Y| - |Y_hat|  ||_F / || |Y| ||_F,

and a log-magnitude distance,

    log_mag = mean | log(|Y| + eps) - log(|Y_hat| + eps) |,

and the total is the unweighted mean of (sc + log_mag) over resolutions.
Magnitudes carry a 1e-12 floor inside the square root so the gradient is
defined at zero. Frames are Hann-windowed, centered, and reflect-padded;
the hop is a quarter of the FFT size.

The gradient w.r.t. the estimate chains through the magnitude, the
half-spectrum FFT packing, the window, the overlap-add framing, and the
reflect padding; the whole chain is finite-difference checked in the
test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

MAG_EPS = 1e-12
LOG_EPS = 1e-8
DEFAULT_FFT_SIZES = (32, 128, 512, 2048)


class DegenerateTargetError(ValueError):
    """Raised when the target signal is silent; the sc denominator is meaningless."""


@dataclass(frozen=True)
class StftResolution:
    """One analysis resolution: power-of-two FFT size and its hop."""

    fft_size: int
    hop: int

    def __post_init__(self):
        if self.fft_size < 2 or self.fft_size & (self.fft_size - 1):
            raise ValueError(f"fft_size must be a power of two >= 2, got {self.fft_size}")
        if not 1 <= self.hop <= self.fft_size:
            raise ValueError(f"hop must be in [1, fft_size], got {self.hop}")

    @classmethod
    def from_fft_size(cls, fft_size: int) -> "StftResolution":
        return cls(fft_size=fft_size, hop=max(1, fft_size // 4))


def default_resolutions() -> tuple[StftResolution, ...]:
    return tuple(StftResolution.from_fft_size(n) for n in DEFAULT_FFT_SIZES)


@dataclass
class LossReport:
    """Total loss plus the (sc, log_mag) pair for every resolution."""

    total: float
    per_resolution: list

    @property
    def sc_total(self) -> float:
        return float(np.mean([sc for sc, _ in self.per_resolution]))

    @property
    def logmag_total(self) -> float:
        return float(np.mean([lm for _, lm in self.per_resolution]))


def _hann(n: int, dtype) -> np.ndarray:
    # Periodic Hann, the usual STFT analysis window.
    return (0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)).astype(dtype)


def _frame(x: np.ndarray, res: StftResolution) -> np.ndarray:
    """Centered frames of the reflect-padded signal; ceil(len/hop) frames."""
    pad = res.fft_size // 2
    xp = np.pad(x, pad, mode="reflect")
    n_frames = -(-x.shape[0] // res.hop)
    idx = res.hop * np.arange(n_frames)[:, np.newaxis] + np.arange(res.fft_size)
    return xp[idx]


def _spectrum(x: np.ndarray, res: StftResolution, window: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    frames = _frame(x, res) * window
    spec = sfft.rfft(frames, axis=1)
    mag = np.sqrt(spec.real**2 + spec.imag**2 + MAG_EPS)
    return spec, mag


def stft_magnitude(x: np.ndarray, res: StftResolution) -> np.ndarray:
    """Magnitude spectrogram, shape (frames, fft_size/2 + 1)."""
    x = np.asarray(x)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-D sample sequence, got shape {x.shape}")
    if x.shape[0] < res.fft_size:
        raise ValueError(f"signal length {x.shape[0]} < fft_size {res.fft_size}")
    _, mag = _spectrum(x, res, _hann(res.fft_size, x.dtype))
    return mag


class MrstftObjective:
    """Loss/gradient evaluator with the target spectra precomputed once.

    ``mrstft_loss`` and ``mrstft_grad`` call through here, so the steering
    loop (which reuses one target for thousands of evaluations) follows the
    exact same arithmetic as one-shot calls.
    """

    def __init__(self, target: np.ndarray, resolutions=None):
        target = np.asarray(target)
        if target.ndim != 1:
            raise ValueError(f"target must be 1-D, got shape {target.shape}")
        self.resolutions = tuple(resolutions) if resolutions else default_resolutions()
        max_fft = max(r.fft_size for r in self.resolutions)
        if target.shape[0] < max_fft:
            raise ValueError(f"signal length {target.shape[0]} < largest fft_size {max_fft}")
        self.n = target.shape[0]
        self._windows = {}
        self._target_mags = []
        for res in self.resolutions:
            window = _hann(res.fft_size, target.dtype)
            self._windows[res] = window
            _, mag = _spectrum(target, res, window)
            raw_power = float((mag**2 - MAG_EPS).sum())
            if math.sqrt(max(raw_power, 0.0)) < LOG_EPS:
                raise DegenerateTargetError(
                    f"target is silent at fft_size {res.fft_size}: "
                    "spectral convergence is undefined for a degenerate target"
                )
            self._target_mags.append(mag)

    def evaluate(self, estimate: np.ndarray, with_grad: bool = True):
        """Returns (LossReport, grad-or-None) for an estimate against the target."""
        estimate = np.asarray(estimate)
        if estimate.shape != (self.n,):
            raise ValueError(f"estimate length {estimate.shape} != target length {self.n}")

        per_resolution = []
        grad = np.zeros_like(estimate) if with_grad else None
        n_res = len(self.resolutions)
        for res, y_mag in zip(self.resolutions, self._target_mags):
            window = self._windows[res]
            spec, h_mag = _spectrum(estimate, res, window)

            diff = h_mag - y_mag
            sc_num = float(np.linalg.norm(diff))
            sc_den = float(np.linalg.norm(y_mag))
            sc = sc_num / sc_den
            log_diff = np.log(h_mag + LOG_EPS) - np.log(y_mag + LOG_EPS)
            log_mag = float(np.abs(log_diff).mean())
            per_resolution.append((sc, log_mag))

            if not with_grad:
                continue
            g_mag = np.sign(log_diff) / (h_mag + LOG_EPS) / log_diff.size
            if sc_num > 0:
                g_mag = g_mag + diff / (sc_num * sc_den)
            g_mag /= n_res
            grad += self._spectrum_grad_to_signal(g_mag, spec, h_mag, res, window)

        total = float(np.mean([sc + lm for sc, lm in per_resolution]))
        return LossReport(total=total, per_resolution=per_resolution), grad

    def _spectrum_grad_to_signal(self, g_mag, spec, mag, res: StftResolution, window) -> np.ndarray:
        # magnitude -> complex half spectrum (interior bins appear twice in
        # the implicit hermitian-symmetric full spectrum, so halve them)
        g_spec = (g_mag / mag) * spec
        g_spec[:, 1:-1] *= 0.5
        grad_frames = sfft.irfft(g_spec, n=res.fft_size, axis=1) * res.fft_size
        grad_frames *= window

        # overlap-add back into the padded signal
        n_frames = grad_frames.shape[0]
        pad = res.fft_size // 2
        hop = res.hop
        gp = np.zeros(self.n + 2 * pad, dtype=grad_frames.dtype)
        if res.fft_size % hop == 0:
            # Frame windows tile in hop-sized strips; one vectorized add per strip.
            for b in range(res.fft_size // hop):
                strip = gp[b * hop : b * hop + n_frames * hop].reshape(n_frames, hop)
                strip += grad_frames[:, b * hop : (b + 1) * hop]
        else:
            last = (n_frames - 1) * hop
            for t in range(res.fft_size):
                gp[t : t + last + 1 : hop] += grad_frames[:, t]

        # fold the reflect padding back onto its source samples
        grad_x = gp[pad : pad + self.n].copy()
        grad_x[1 : pad + 1] += gp[:pad][::-1]
        grad_x[self.n - 1 - pad : self.n - 1] += gp[pad + self.n :][::-1]
        return grad_x


def _objective(y: np.ndarray, resolutions) -> MrstftObjective:
    return MrstftObjective(y, resolutions)


def _check_pair(y_hat: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    y_hat = np.asarray(y_hat)
    y = np.asarray(y)
    if y_hat.shape != y.shape:
        raise ValueError(f"length mismatch: estimate {y_hat.shape} vs target {y.shape}")
    return y_hat, y


def mrstft_loss(y_hat: np.ndarray, y: np.ndarray, resolutions=None) -> LossReport:
    y_hat, y = _check_pair(y_hat, y)
    report, _ = _objective(y, resolutions).evaluate(y_hat, with_grad=False)
    return report


def mrstft_grad(y_hat: np.ndarray, y: np.ndarray, resolutions=None) -> np.ndarray:
    y_hat, y = _check_pair(y_hat, y)
    _, grad = _objective(y, resolutions).evaluate(y_hat)
    return grad
