"""Surrogate closed-loop Parkinsonian environment.

A one-dimensional latent pathology level responds to the stimulation
frequency through a saturating suppression curve, emits a noisy synthetic
field-potential window whose beta-band powers form the next context, and
exposes a severity oracle used only for evaluation. The full biophysical
network is out of scope; this surrogate preserves the properties the
bandit problem needs: a monotone frequency-to-symptom response, noisy
beta-power observations, a correlated severity oracle, and one decision
per observation window.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from .bandit_policies import Policy
from .errors import InvalidInputError, UndefinedCorrelationError
from .signal_core import (
    BETA_HIGH_HZ,
    BETA_LOW_HZ,
    ArmContexts,
    ContextFeature,
    PsdEstimate,
    SampledSignal,
    band_power,
    estimate_psd,
)

ARM_COUNT = 13
FREQUENCY_STEP_HZ = 15.0
MAX_FREQUENCY_HZ = 180.0

SUPPRESSION_FORMS = ("hill", "logistic")
TONE_HZ = 20.0  # center of the beta band carries the pathological rhythm


def map_arm_to_frequency(arm: int, arm_count: int = ARM_COUNT) -> float:
    """Arm index k -> stimulation frequency 15*k Hz (arm 0 = stimulation off)."""
    if not 0 <= arm <= arm_count - 1:
        raise InvalidInputError(f"arm must lie in [0, {arm_count - 1}], got {arm}")
    return FREQUENCY_STEP_HZ * arm


@dataclass(frozen=True)
class PulseTrain:
    """Binary per-sample stimulation schedule over one decision window."""

    flags: np.ndarray
    window_seconds: float

    def __post_init__(self):
        flags = np.asarray(self.flags, dtype=np.uint8)
        if flags.ndim != 1 or not np.all((flags == 0) | (flags == 1)):
            raise InvalidInputError("flags must be a 1-D binary sequence")
        object.__setattr__(self, "flags", flags)

    @property
    def pulse_count(self) -> int:
        return int(self.flags.sum())


def build_pulse_train(
    frequency_hz: float, window_seconds: float, sample_rate: float
) -> PulseTrain:
    """round(F * T_w) pulses at uniformly spaced sample indices from index 0."""
    if frequency_hz < 0 or window_seconds <= 0 or sample_rate <= 0:
        raise InvalidInputError("need frequency >= 0 and positive window/sample rate")
    n_samples = int(round(window_seconds * sample_rate))
    count = int(round(frequency_hz * window_seconds))
    if count > n_samples:
        raise InvalidInputError(
            f"{count} pulses do not fit into {n_samples} samples"
        )
    flags = np.zeros(n_samples, dtype=np.uint8)
    if count > 0:
        indices = np.floor(np.arange(count) * sample_rate / frequency_hz).astype(int)
        flags[indices] = 1
    return PulseTrain(flags=flags, window_seconds=window_seconds)


@dataclass(frozen=True)
class EnvConfig:
    """Calibration constants of the surrogate environment.

    The latent level relaxes toward a frequency-dependent target at rate
    ``kappa`` per window. ``suppression`` selects the frequency response:
    ``hill`` is F/(F + f_half); ``logistic`` is a smooth threshold at
    ``f_mid`` with width ``f_width``. Observed beta powers are divided by
    the untreated-level power and multiplied by ``beta_scale``, so the
    observed scale is ~``beta_scale`` at the untreated level.
    """

    kappa: float = 0.7
    suppression: str = "logistic"
    f_half: float = 45.0
    f_mid: float = 69.0
    f_width: float = 11.0
    b_healthy: float = 0.02
    b_pd: float = 1.0
    noise_sigma_latent: float = 0.02
    noise_sigma_obs: float = 0.5
    ei_floor: float = 0.03
    ei_slope: float = 0.45
    ei_noise: float = 0.02
    sample_rate: float = 1000.0
    penalty_coefficient: float = 0.14
    window_seconds: float = 2.0
    beta_interval: float = 0.1
    beta_scale: float = 2.2
    initial_beta: float | None = None
    arm_count: int = ARM_COUNT
    taper: str = "hann"

    def __post_init__(self):
        if not 0.0 < self.kappa <= 1.0:
            raise InvalidInputError("kappa must lie in (0, 1]")
        if self.suppression not in SUPPRESSION_FORMS:
            raise InvalidInputError(f"suppression must be one of {SUPPRESSION_FORMS}")
        if min(self.f_half, self.f_width) <= 0 or self.f_mid <= 0:
            raise InvalidInputError("suppression parameters must be positive")
        if not 0.0 <= self.b_healthy < self.b_pd <= 1.0:
            raise InvalidInputError("need 0 <= b_healthy < b_pd <= 1")
        if min(self.noise_sigma_latent, self.noise_sigma_obs, self.ei_noise) < 0:
            raise InvalidInputError("noise levels must be non-negative")
        if self.ei_floor < 0 or self.ei_slope <= 0:
            raise InvalidInputError("need ei_floor >= 0 and ei_slope > 0")
        if self.sample_rate <= 0 or self.window_seconds <= 0 or self.beta_interval <= 0:
            raise InvalidInputError("sample_rate, window and interval must be positive")
        if self.window_seconds < self.beta_interval:
            raise InvalidInputError("window_seconds must be >= beta_interval")
        if self.beta_scale <= 0:
            raise InvalidInputError("beta_scale must be positive")
        if self.initial_beta is not None and not 0.0 <= self.initial_beta <= 1.0:
            raise InvalidInputError("initial_beta must lie in [0, 1]")
        if self.arm_count < 1:
            raise InvalidInputError("arm_count must be >= 1")

    @property
    def beta_samples_per_window(self) -> int:
        return int(round(self.window_seconds / self.beta_interval))

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "EnvConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidInputError(f"unknown environment keys: {sorted(unknown)}")
        return cls(**data)


def suppression_fraction(frequency_hz: float, config: EnvConfig) -> float:
    """Fraction of the pathology suppressed at a stimulation frequency.

    0 Hz always maps to 0 (stimulation off leaves the pathology untouched).
    """
    if frequency_hz < 0:
        raise InvalidInputError("frequency must be non-negative")
    if frequency_hz == 0.0:
        return 0.0
    if config.suppression == "hill":
        return frequency_hz / (frequency_hz + config.f_half)
    z = (frequency_hz - config.f_mid) / config.f_width
    return float(1.0 / (1.0 + np.exp(-z)))


def latent_target(frequency_hz: float, config: EnvConfig) -> float:
    """Steady-state latent level under a constant stimulation frequency."""
    sigma = suppression_fraction(frequency_hz, config)
    return config.b_healthy + (config.b_pd - config.b_healthy) * (1.0 - sigma)


def error_index_value(
    beta_level: float, ei_floor: float, ei_slope: float, noise: float = 0.0
) -> float:
    """Severity oracle: clamp(floor + slope * latent + noise) into [0, 1]."""
    return float(np.clip(ei_floor + ei_slope * beta_level + noise, 0.0, 1.0))


@dataclass(frozen=True)
class EnvObservation:
    """What one closed-loop step returns.

    ``error_index`` is the evaluation oracle; policies must only ever see
    ``context`` and ``reward``.
    """

    context: ContextFeature
    mean_beta: float
    error_index: float
    reward: float


def _reference_band_power(config: EnvConfig) -> float:
    """Band power of one noise-free unit-amplitude tone sub-window."""
    n_sub = int(round(config.beta_interval * config.sample_rate))
    t = np.arange(n_sub) / config.sample_rate
    tone = np.sin(2.0 * np.pi * TONE_HZ * t)
    psd = estimate_psd(SampledSignal(tone, config.sample_rate), taper=config.taper)
    power = band_power(psd, BETA_LOW_HZ, BETA_HIGH_HZ)
    if power <= 0:
        raise InvalidInputError(
            "degenerate calibration: tone has no beta-band power at this geometry"
        )
    return power


class SurrogateBgEnv:
    """Closed-loop surrogate with latent pathology and synthetic beta power.

    Noise draw order per step is fixed (latent, phase, observation window,
    oracle), so a seeded generator reproduces the observation sequence
    exactly.
    """

    def __init__(self, config: EnvConfig, rng: np.random.Generator):
        self.config = config
        self._rng = rng
        self.beta_level = (
            config.b_pd if config.initial_beta is None else config.initial_beta
        )
        self.sim_time = 0.0
        self._window_samples = int(round(config.window_seconds * config.sample_rate))
        self._sub_samples = int(round(config.beta_interval * config.sample_rate))
        samples_needed = self._sub_samples * config.beta_samples_per_window
        if samples_needed > self._window_samples:
            raise InvalidInputError(
                "window_seconds must hold an integer number of beta intervals"
            )
        # normalized beta ~= beta_scale * latent by construction
        self._normalizer = _reference_band_power(config) / config.beta_scale
        self.last_pulse_train: PulseTrain | None = None

    def expected_normalized_beta(self, beta_level: float) -> float:
        """Noise-free observed beta power at a given latent level."""
        return self.config.beta_scale * beta_level

    def _emit_context(self, beta_level: float) -> ContextFeature:
        cfg = self.config
        phase = self._rng.uniform(0.0, 2.0 * np.pi)
        t = np.arange(self._window_samples) / cfg.sample_rate
        window = np.sqrt(max(beta_level, 0.0)) * np.sin(
            2.0 * np.pi * TONE_HZ * t + phase
        )
        window = window + self._rng.normal(0.0, cfg.noise_sigma_obs, self._window_samples)
        values = np.empty(cfg.beta_samples_per_window)
        for i in range(cfg.beta_samples_per_window):
            chunk = window[i * self._sub_samples : (i + 1) * self._sub_samples]
            psd = estimate_psd(SampledSignal(chunk, cfg.sample_rate), taper=cfg.taper)
            values[i] = band_power(psd, BETA_LOW_HZ, BETA_HIGH_HZ) / self._normalizer
        return ContextFeature(
            beta_samples=values,
            window_seconds=cfg.window_seconds,
            sample_interval=cfg.beta_interval,
        )

    def reset(self) -> ContextFeature:
        """Context of the current (pre-action) window; no latent update."""
        cfg = self.config
        self.beta_level = cfg.b_pd if cfg.initial_beta is None else cfg.initial_beta
        self.sim_time = 0.0
        self.last_pulse_train = None
        return self._emit_context(self.beta_level)

    def step(self, arm: int) -> EnvObservation:
        """Apply one window of stimulation, observe the next window."""
        cfg = self.config
        frequency = map_arm_to_frequency(arm, cfg.arm_count)
        target = latent_target(frequency, cfg)
        latent_noise = self._rng.normal(0.0, cfg.noise_sigma_latent)
        new_level = float(
            np.clip(
                self.beta_level + cfg.kappa * (target - self.beta_level) + latent_noise,
                0.0,
                1.0,
            )
        )
        self.last_pulse_train = build_pulse_train(
            frequency, cfg.window_seconds, cfg.sample_rate
        )
        context = self._emit_context(new_level)
        oracle_noise = self._rng.normal(0.0, cfg.ei_noise)
        error_index = error_index_value(
            new_level, cfg.ei_floor, cfg.ei_slope, oracle_noise
        )
        mean_beta = context.mean
        reward = -mean_beta - cfg.penalty_coefficient * arm
        self.beta_level = new_level
        self.sim_time += cfg.window_seconds
        return EnvObservation(
            context=context,
            mean_beta=mean_beta,
            error_index=error_index,
            reward=reward,
        )

    def error_index_oracle(self, rng: np.random.Generator | None = None) -> float:
        """Severity oracle of the current latent (evaluation only)."""
        cfg = self.config
        noise = 0.0
        if cfg.ei_noise > 0:
            noise = float((rng or self._rng).normal(0.0, cfg.ei_noise))
        return error_index_value(self.beta_level, cfg.ei_floor, cfg.ei_slope, noise)


def calibrate_correlation(
    config: EnvConfig,
    episodes: int,
    rng: np.random.Generator,
    settle_rounds: int = 3,
    return_pairs: bool = False,
):
    """Pearson correlation between observed mean beta power and the oracle.

    Each episode restarts the environment at the untreated level, holds one
    uniformly random arm for ``settle_rounds`` windows, and records the last
    (mean beta, oracle) pair. Used to tune the observation noise so the
    correlation lands near the reference level.
    """
    if episodes < 30:
        raise InvalidInputError("need at least 30 episodes for a stable estimate")
    betas = np.empty(episodes)
    oracles = np.empty(episodes)
    for episode in range(episodes):
        arm = int(rng.integers(config.arm_count))
        env = SurrogateBgEnv(config, rng)
        observation = None
        for _ in range(max(1, settle_rounds)):
            observation = env.step(arm)
        betas[episode] = observation.mean_beta
        oracles[episode] = observation.error_index
    if np.std(betas) == 0.0 or np.std(oracles) == 0.0:
        raise UndefinedCorrelationError("zero-variance sample; correlation undefined")
    r = float(np.corrcoef(betas, oracles)[0, 1])
    if return_pairs:
        return r, betas, oracles
    return r


def healthy_reference_beta(
    config: EnvConfig, rounds: int, rng: np.random.Generator
) -> float:
    """Mean observed normalized beta power of a healthy brain.

    Simulated with the same emission pipeline but the pathology pinned at
    the healthy level (no stimulation), so noise pedestals match the
    closed-loop measurements it is compared against.
    """
    healthy = replace(
        config,
        b_pd=min(config.b_healthy + 1e-9, 1.0),
        initial_beta=config.b_healthy,
        noise_sigma_latent=0.0,
    )
    env = SurrogateBgEnv(healthy, rng)
    return float(np.mean([env.step(0).mean_beta for _ in range(max(1, rounds))]))


class PeriodicController(Policy):
    """Fixed-frequency baseline: always the arm matching one frequency."""

    def __init__(self, frequency_hz: float, arm_count: int = ARM_COUNT):
        ratio = frequency_hz / FREQUENCY_STEP_HZ
        arm = int(round(ratio))
        if abs(ratio - arm) > 1e-9:
            raise InvalidInputError(
                f"frequency must be a multiple of {FREQUENCY_STEP_HZ} Hz"
            )
        if not 0 <= arm <= arm_count - 1:
            raise InvalidInputError(f"frequency {frequency_hz} Hz outside the arm range")
        self.name = f"periodic_{int(frequency_hz)}hz"
        self.arm = arm

    def select(self, contexts: ArmContexts, t: int, rng: np.random.Generator) -> int:
        return self.arm

    def observe(self, x: np.ndarray, reward: float) -> None:
        pass


def periodic_controller(frequency_hz: float, arm_count: int = ARM_COUNT) -> PeriodicController:
    """Policy that ignores contexts and always stimulates at one frequency."""
    return PeriodicController(frequency_hz, arm_count=arm_count)


class DelayedRewardBuffer:
    """Withholds (context, reward) pairs and releases them in order every
    ``batch_size`` additions; batch size 1 reproduces the undelayed loop."""

    def __init__(self, batch_size: int):
        if batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        self.batch_size = batch_size
        self._pending: list[tuple[np.ndarray, float]] = []

    def add(self, x: np.ndarray, reward: float) -> list[tuple[np.ndarray, float]]:
        """Returns the batch to deliver now (possibly empty)."""
        self._pending.append((x, reward))
        if len(self._pending) >= self.batch_size:
            batch = self._pending
            self._pending = []
            return batch
        return []

    def drain(self) -> list[tuple[np.ndarray, float]]:
        """Remaining pairs at the end of a trial, in order."""
        batch = self._pending
        self._pending = []
        return batch
