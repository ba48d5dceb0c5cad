"""DDPM noise schedule and closed-form sampling algebra.

All operations are pure functions over the immutable schedule arrays and are
safe to call concurrently. Timesteps are training timesteps t in [0, T] with
the convention that the cumulative signal level at t = 0 is exactly 1 (no
noise). Stepping between non-adjacent timesteps (strided inference) uses the
effective per-step rates derived from the cumulative products, which reduce
to the single-step formulas when the stride is 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear-beta DDPM schedule with a strided inference timestep map."""

    train_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    inference_steps: int = 50
    betas: np.ndarray = field(init=False, repr=False)  # beta_t, index t-1
    alphas: np.ndarray = field(init=False, repr=False)  # alpha_t = 1 - beta_t
    alpha_bars: np.ndarray = field(init=False, repr=False)  # index t in [0, T]
    sigmas: np.ndarray = field(init=False, repr=False)  # sigma_t, index t-1
    timesteps: np.ndarray = field(init=False, repr=False)  # inference map

    def __post_init__(self):
        if self.train_steps < 1:
            raise ConfigError("train_steps must be >= 1")
        if not (0.0 < self.beta_start <= self.beta_end < 1.0):
            raise ConfigError("betas must satisfy 0 < beta_start <= beta_end < 1")
        if not (1 <= self.inference_steps <= self.train_steps):
            raise ConfigError("inference_steps must be in [1, train_steps]")
        betas = np.linspace(self.beta_start, self.beta_end, self.train_steps)
        alphas = 1.0 - betas
        alpha_bars = np.empty(self.train_steps + 1)
        alpha_bars[0] = 1.0
        alpha_bars[1:] = np.cumprod(alphas)
        # Posterior variance (beta-tilde); the sampler's noise scale is its
        # square root.
        variance = (1.0 - alpha_bars[:-1]) / (1.0 - alpha_bars[1:]) * betas
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", alpha_bars)
        object.__setattr__(self, "sigmas", np.sqrt(variance))
        stride = self.train_steps / self.inference_steps
        ts = np.round(self.train_steps - stride * np.arange(self.inference_steps)).astype(int)
        object.__setattr__(self, "timesteps", ts)

    # -- lookups -------------------------------------------------------------
    def _check_t(self, t: int, lo: int = 0):
        if not (lo <= t <= self.train_steps):
            raise ConfigError(f"timestep {t} outside [{lo}, {self.train_steps}]")

    def alpha_bar(self, t: int) -> float:
        self._check_t(t)
        return float(self.alpha_bars[t])

    def prev_timestep(self, step_index: int) -> int:
        """Training timestep the given inference step lands on."""
        if step_index + 1 < self.inference_steps:
            return int(self.timesteps[step_index + 1])
        return 0

    # -- Closed-form operations ----------------------------------------------
    def forward_noise(self, x0: np.ndarray, t: int, noise: np.ndarray) -> np.ndarray:
        """Noised sample at level t: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
        self._check_t(t)
        ab = self.alpha_bars[t]
        return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise

    def estimate_x0(self, x_t: np.ndarray, epsilon: np.ndarray, t: int) -> np.ndarray:
        """Denoised estimate: (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t)."""
        self._check_t(t, lo=1)
        ab = self.alpha_bars[t]
        if ab <= 0.0:
            raise ConfigError(f"cumulative signal level vanishes at t={t}")
        return (x_t - np.sqrt(1.0 - ab) * epsilon) / np.sqrt(ab)

    def posterior_step(
        self,
        x_t: np.ndarray,
        x0_hat: np.ndarray,
        t: int,
        noise: np.ndarray,
        t_prev: int | None = None,
    ) -> np.ndarray:
        """One reverse step from t to t_prev (default t - 1).

        mean = sqrt(abar_prev) beta_eff / (1 - abar_t) * x0_hat
             + sqrt(alpha_eff) (1 - abar_prev) / (1 - abar_t) * x_t
        with alpha_eff = abar_t / abar_prev. The injected noise scale is the
        posterior standard deviation, which vanishes when t_prev = 0.
        """
        self._check_t(t, lo=1)
        if t_prev is None:
            t_prev = t - 1
        if not (0 <= t_prev < t):
            raise ConfigError(f"t_prev {t_prev} must be in [0, {t})")
        ab_t = self.alpha_bars[t]
        ab_prev = self.alpha_bars[t_prev]
        alpha_eff = ab_t / ab_prev
        beta_eff = 1.0 - alpha_eff
        denom = 1.0 - ab_t
        mean = (np.sqrt(ab_prev) * beta_eff / denom) * x0_hat + (
            np.sqrt(alpha_eff) * (1.0 - ab_prev) / denom
        ) * x_t
        sigma = np.sqrt((1.0 - ab_prev) / denom * beta_eff)
        return mean + sigma * noise
