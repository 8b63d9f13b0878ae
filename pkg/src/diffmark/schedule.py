"""Noise schedules for the forward/reverse diffusion processes.

A schedule fixes, per step t in [1, T]:

    beta_t      noise added at step t
    alpha_t     1 - beta_t
    abar_t      prod_{s<=t} alpha_s   (cumulative signal retention)

abar is strictly decreasing and stays in (0, 1]; by convention abar_0 = 1
(no noise at time zero), which the reverse samplers rely on when stepping
to t_prev = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True)
class NoiseSchedule:
    num_steps: int
    betas: np.ndarray
    alphas: np.ndarray = field(repr=False, default=None)
    alpha_bars: np.ndarray = field(repr=False, default=None)

    def alpha_bar(self, t) -> float:
        """Cumulative product abar_t for 1-based t; abar_0 == 1 by convention."""
        t = int(t)
        if t == 0:
            return 1.0
        self._check_t(t)
        return float(self.alpha_bars[t - 1])

    def beta(self, t) -> float:
        self._check_t(int(t))
        return float(self.betas[int(t) - 1])

    def alpha(self, t) -> float:
        self._check_t(int(t))
        return float(self.alphas[int(t) - 1])

    def gather_alpha_bar(self, t):
        """Vectorized abar lookup for an integer array of 1-based timesteps."""
        t = np.asarray(t, dtype=np.int64)
        if np.any(t < 0) or np.any(t > self.num_steps):
            raise ParameterError(f"timestep out of range [0, {self.num_steps}]: {t}")
        padded = np.concatenate([[1.0], self.alpha_bars])
        return padded[t]

    def _check_t(self, t: int):
        if not 1 <= t <= self.num_steps:
            raise ParameterError(
                f"timestep t={t} outside [1, {self.num_steps}]"
            )


def make_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule from beta_start to beta_end inclusive over T steps."""
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ParameterError(f"T must be a positive integer, got {T!r}")
    if not 0.0 < beta_start <= beta_end:
        raise ParameterError(
            f"need 0 < beta_start <= beta_end, got beta_start={beta_start}, beta_end={beta_end}"
        )
    if beta_end >= 1.0:
        raise ParameterError(f"beta_end must be < 1, got beta_end={beta_end}")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    return schedule_from_betas(betas)


def schedule_from_betas(betas: np.ndarray) -> NoiseSchedule:
    """Build a schedule from an explicit beta sequence (used by checkpoint load)."""
    betas = np.asarray(betas, dtype=np.float64)
    if betas.ndim != 1 or betas.size < 1:
        raise ParameterError("betas must be a non-empty 1-D sequence")
    if np.any(betas <= 0.0) or np.any(betas >= 1.0):
        raise ParameterError("every beta must lie in (0, 1)")
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(
        num_steps=int(betas.size),
        betas=betas,
        alphas=alphas,
        alpha_bars=alpha_bars,
    )


def sampling_grid(T: int, num_steps: int) -> np.ndarray:
    """Evenly spaced time grid [0, ..., T] with num_steps intervals.

    Reverse sampling walks the grid downward in adjacent pairs
    (tau_i+1 -> tau_i); inversion walks it upward.
    """
    if num_steps < 0:
        raise ParameterError(f"num_steps must be >= 0, got {num_steps}")
    if num_steps > T:
        raise ParameterError(f"num_steps={num_steps} exceeds T={T}")
    if num_steps == 0:
        return np.array([0], dtype=np.int64)
    grid = np.round(np.linspace(0, T, num_steps + 1)).astype(np.int64)
    # rounding collisions only occur when num_steps ~ T; enforce strict increase
    for i in range(1, grid.size):
        if grid[i] <= grid[i - 1]:
            grid[i] = grid[i - 1] + 1
    if grid[-1] > T:
        raise ParameterError(f"cannot fit {num_steps} distinct steps in [0, {T}]")
    return grid
