"""Beta-band spectral estimation and bandit context construction.

A sampled potential trace is reduced to a single-sided periodogram, the
periodogram to a band power, band powers over a window to a context
feature, and the feature to one block-embedded vector per candidate arm.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

BETA_LOW_HZ = 13.0
BETA_HIGH_HZ = 35.0

TAPERS = ("rectangular", "hann")


@dataclass(frozen=True)
class SampledSignal:
    """Uniformly sampled real signal (dimensionless potential units)."""

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size < 2:
            raise InvalidInputError("signal must be 1-D with at least 2 samples")
        if not np.all(np.isfinite(samples)):
            raise InvalidInputError("signal contains non-finite samples")
        if not self.sample_rate > 0:
            raise InvalidInputError("sample_rate must be positive")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", float(self.sample_rate))

    @property
    def duration_seconds(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class PsdEstimate:
    """Single-sided power spectral density on a uniform frequency grid.

    ``power`` has units of (signal units)^2 per Hz, so integrating over
    frequency recovers mean-square signal power.
    """

    frequencies: np.ndarray
    power: np.ndarray

    def __post_init__(self):
        freqs = np.asarray(self.frequencies, dtype=np.float64)
        power = np.asarray(self.power, dtype=np.float64)
        if freqs.ndim != 1 or power.ndim != 1 or freqs.size != power.size:
            raise InvalidInputError("frequencies and power must be equal-length 1-D")
        if freqs.size < 2:
            raise InvalidInputError("PSD needs at least 2 frequency bins")
        if freqs[0] != 0.0 or np.any(np.diff(freqs) <= 0):
            raise InvalidInputError("frequency grid must start at 0 and increase")
        if np.any(power < 0) or not np.all(np.isfinite(power)):
            raise InvalidInputError("power bins must be finite and non-negative")
        object.__setattr__(self, "frequencies", freqs)
        object.__setattr__(self, "power", power)

    @property
    def bin_width(self) -> float:
        return float(self.frequencies[1] - self.frequencies[0])


@dataclass(frozen=True)
class ContextFeature:
    """Window of band-power values observed at a fixed interval.

    ``beta_samples`` holds ``round(window_seconds / sample_interval)``
    non-negative values spaced ``sample_interval`` seconds apart.
    """

    beta_samples: np.ndarray
    window_seconds: float
    sample_interval: float

    def __post_init__(self):
        values = np.asarray(self.beta_samples, dtype=np.float64)
        if values.ndim != 1 or values.size < 1:
            raise InvalidInputError("beta_samples must be a non-empty 1-D sequence")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise InvalidInputError("beta_samples must be finite and non-negative")
        if not (self.window_seconds > 0 and self.sample_interval > 0):
            raise InvalidInputError("window_seconds and sample_interval must be positive")
        expected = int(round(self.window_seconds / self.sample_interval))
        if values.size != expected:
            raise InvalidInputError(
                f"feature length {values.size} != round(window/interval) = {expected}"
            )
        object.__setattr__(self, "beta_samples", values)

    @property
    def length(self) -> int:
        return int(self.beta_samples.size)

    @property
    def mean(self) -> float:
        return float(self.beta_samples.mean())


@dataclass(frozen=True)
class ArmContexts:
    """One context vector per arm: the shared feature placed in arm k's block."""

    vectors: np.ndarray
    arm_count: int

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != self.arm_count:
            raise InvalidInputError("vectors must be a (arm_count, arm_count*l) array")
        if vectors.shape[1] % self.arm_count != 0:
            raise InvalidInputError("vector dimension must be a multiple of arm_count")
        object.__setattr__(self, "vectors", vectors)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    @property
    def block_length(self) -> int:
        return self.dim // self.arm_count


def _taper_window(name: str, n: int) -> np.ndarray:
    if name == "rectangular":
        return np.ones(n)
    if name == "hann":
        # periodic form, standard for spectral estimation
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    raise InvalidInputError(f"unknown taper {name!r}; expected one of {TAPERS}")


def estimate_psd(signal: SampledSignal, taper: str = "hann") -> PsdEstimate:
    """Single-segment, single-sided periodogram of ``signal``.

    Density scaling: summing ``power * bin_width`` over all bins recovers
    the time-domain mean square (exactly for the rectangular taper, to
    within leakage for hann). A pure sinusoid of amplitude A integrates
    to A^2/2 over its spectral support.
    """
    x = signal.samples
    n = x.size
    win = _taper_window(taper, n)
    spectrum = np.fft.rfft(x * win)
    power = (spectrum.real**2 + spectrum.imag**2) / (signal.sample_rate * np.sum(win**2))
    power[1:] *= 2.0
    if n % 2 == 0:
        power[-1] /= 2.0  # Nyquist bin has no mirror image
    freqs = np.fft.rfftfreq(n, 1.0 / signal.sample_rate)
    return PsdEstimate(frequencies=freqs, power=power)


def band_power(psd: PsdEstimate, low_hz: float, high_hz: float) -> float:
    """Rectangle-rule integral of the PSD over bins centered in [low_hz, high_hz].

    An empty band (no bin centers in range) yields 0.0 with a warning.
    """
    nyquist = float(psd.frequencies[-1])
    if not (0.0 <= low_hz < high_hz <= nyquist):
        raise InvalidInputError(
            f"band [{low_hz}, {high_hz}] must satisfy 0 <= low < high <= Nyquist ({nyquist})"
        )
    mask = (psd.frequencies >= low_hz) & (psd.frequencies <= high_hz)
    if not np.any(mask):
        warnings.warn(
            f"band [{low_hz}, {high_hz}] Hz contains no PSD bins; returning 0",
            stacklevel=2,
        )
        return 0.0
    return float(np.sum(psd.power[mask]) * psd.bin_width)


def region_beta_power(
    per_channel: list[PsdEstimate],
    low_hz: float = BETA_LOW_HZ,
    high_hz: float = BETA_HIGH_HZ,
) -> float:
    """Mean band power across channels sharing one frequency grid."""
    if not per_channel:
        raise InvalidInputError("need at least one channel PSD")
    grid = per_channel[0].frequencies
    for psd in per_channel[1:]:
        if psd.frequencies.shape != grid.shape or not np.array_equal(psd.frequencies, grid):
            raise InvalidInputError("channel PSDs must share one frequency grid")
    return float(np.mean([band_power(psd, low_hz, high_hz) for psd in per_channel]))


def build_context_window(
    beta_stream: np.ndarray,
    start: int,
    window_seconds: float,
    sample_interval: float,
    stream_interval: float | None = None,
) -> ContextFeature:
    """Select a window of band-power values from a time-ordered stream.

    The feature holds ``l = round(window_seconds / sample_interval)`` values
    spaced ``sample_interval`` seconds apart, starting at index ``start``.
    ``stream_interval`` is the spacing of the stream itself and defaults to
    ``sample_interval`` (consecutive entries are selected); a finer stream
    is strided accordingly.
    """
    stream = np.asarray(beta_stream, dtype=np.float64)
    if stream.ndim != 1:
        raise InvalidInputError("beta_stream must be 1-D")
    if not (window_seconds > 0 and sample_interval > 0):
        raise InvalidInputError("window_seconds and sample_interval must be positive")
    if window_seconds < sample_interval:
        raise InvalidInputError("window_seconds must be >= sample_interval")
    if start < 0:
        raise InvalidInputError("start index must be non-negative")
    if stream_interval is None:
        stride = 1
    else:
        ratio = sample_interval / stream_interval
        stride = int(round(ratio))
        if stride < 1 or abs(ratio - stride) > 1e-9 * max(1.0, ratio):
            raise InvalidInputError(
                "sample_interval must be a positive integer multiple of stream_interval"
            )
    length = int(round(window_seconds / sample_interval))
    last = start + (length - 1) * stride
    if last >= stream.size:
        raise InvalidInputError(
            f"stream too short: need index {last} but have {stream.size} values"
        )
    values = stream[start : last + 1 : stride]
    return ContextFeature(
        beta_samples=values,
        window_seconds=window_seconds,
        sample_interval=sample_interval,
    )


def embed_context(feature: ContextFeature, arm_count: int) -> ArmContexts:
    """Block-embed one shared feature into ``arm_count`` per-arm vectors.

    Vector k is zero except entries [k*l, (k+1)*l), which hold the feature,
    so every arm vector has the feature's Euclidean norm.
    """
    if arm_count < 1:
        raise InvalidInputError("arm_count must be >= 1")
    length = feature.length
    vectors = np.zeros((arm_count, arm_count * length))
    for k in range(arm_count):
        vectors[k, k * length : (k + 1) * length] = feature.beta_samples
    return ArmContexts(vectors=vectors, arm_count=arm_count)
