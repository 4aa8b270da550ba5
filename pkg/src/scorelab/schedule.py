"""Variance schedules and forward/reverse diffusion arithmetic.

Discrete time with 1-based steps. ``alpha_bars[0] = 1`` is the clean-data
boundary, ``alpha_bars[t]`` is the running product of ``1 - beta_i`` up to
step ``t``, and ``sigmas[t-1]`` is the posterior noise scale used by the
ancestral update (zero at the final step). Every function is pure and all
randomness is injected by the caller.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "VarianceSchedule",
    "build_schedule",
    "forward_sample",
    "ddim_step",
    "ddpm_step",
    "ddim_timesteps",
]


@dataclass(frozen=True)
class VarianceSchedule:
    """Precomputed per-step variances and their cumulative products.

    Attributes:
        T: number of diffusion steps.
        betas: shape (T,), per-step variance, each in (0, 1).
        alpha_bars: shape (T+1,), cumulative products of ``1 - beta``,
            strictly decreasing with ``alpha_bars[0] == 1``.
        sigmas: shape (T,), ancestral-step noise scales
            ``sqrt(beta_t * (1 - abar_{t-1}) / (1 - abar_t))``; ``sigmas[0]``
            is exactly 0.
    """

    T: int
    betas: np.ndarray
    alpha_bars: np.ndarray
    sigmas: np.ndarray

    def alpha_bar(self, t: int | np.ndarray) -> float | np.ndarray:
        """Cumulative product at step ``t`` (scalar or integer array), 0 <= t <= T."""
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t > self.T):
            raise IndexError(f"step index t={t} outside [0, {self.T}]")
        out = self.alpha_bars[t]
        return float(out) if out.ndim == 0 else out


def build_schedule(
    T: int,
    beta_start: float,
    beta_end: float,
    kind: str = "linear",
) -> VarianceSchedule:
    """Build a variance schedule with ``T`` evenly interpolated betas.

    Raises ValueError naming the offending parameter when the ranges are
    invalid (T >= 1, 0 < beta_start <= beta_end < 1, kind in {"linear"}).
    """
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ValueError(f"T must be an integer >= 1, got {T!r}")
    if not beta_start > 0.0:
        raise ValueError(f"beta_start must be > 0, got {beta_start!r}")
    if not beta_end >= beta_start:
        raise ValueError(f"beta_end must be >= beta_start, got {beta_end!r}")
    if not beta_end < 1.0:
        raise ValueError(f"beta_end must be < 1, got {beta_end!r}")
    if kind != "linear":
        raise ValueError(f"kind must be 'linear', got {kind!r}")

    betas = np.linspace(beta_start, beta_end, int(T))
    alpha_bars = np.concatenate(([1.0], np.cumprod(1.0 - betas)))
    sigmas = np.sqrt(betas * (1.0 - alpha_bars[:-1]) / (1.0 - alpha_bars[1:]))
    return VarianceSchedule(T=int(T), betas=betas, alpha_bars=alpha_bars, sigmas=sigmas)


def forward_sample(
    x0: np.ndarray,
    t: int | np.ndarray,
    noise: np.ndarray,
    sched: VarianceSchedule,
) -> np.ndarray:
    """Marginal forward draw ``sqrt(abar_t) * x0 + sqrt(1 - abar_t) * noise``.

    ``t`` may be a scalar in [0, T] (t=0 returns ``x0`` unchanged) or an
    integer array broadcasting against the leading axes of ``x0``.
    """
    abar = sched.alpha_bar(t)
    abar = np.asarray(abar)[..., None] if np.ndim(abar) else abar
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * noise


def ddim_step(
    x_t: np.ndarray,
    eps_hat: np.ndarray,
    t: int,
    t_prev: int,
    eta: float,
    noise: np.ndarray | None,
    sched: VarianceSchedule,
) -> np.ndarray:
    """One deterministic-by-default reverse update from step ``t`` to ``t_prev``.

    Predicts ``x0_hat = (x_t - sqrt(1 - abar_t) * eps_hat) / sqrt(abar_t)`` and
    returns ``sqrt(abar_prev) * x0_hat + sqrt(1 - abar_prev - s^2) * eps_hat
    + s * noise`` with ``s = eta * sqrt((1 - abar_prev) / (1 - abar_t))
    * sqrt(1 - abar_t / abar_prev)``. ``noise`` is unused when ``eta == 0``.
    """
    if t_prev >= t:
        raise ValueError(f"t_prev={t_prev} must be < t={t}")
    abar_t = sched.alpha_bar(t)
    abar_prev = sched.alpha_bar(t_prev)
    sigma = eta * np.sqrt((1.0 - abar_prev) / (1.0 - abar_t)) * np.sqrt(
        1.0 - abar_t / abar_prev
    )
    x0_hat = (x_t - np.sqrt(1.0 - abar_t) * eps_hat) / np.sqrt(abar_t)
    out = np.sqrt(abar_prev) * x0_hat
    out = out + np.sqrt(max(1.0 - abar_prev - sigma**2, 0.0)) * eps_hat
    if eta != 0.0:
        if noise is None:
            raise ValueError("noise is required when eta != 0")
        out = out + sigma * noise
    return out


def ddpm_step(
    x_t: np.ndarray,
    eps_hat: np.ndarray,
    t: int,
    noise: np.ndarray | None,
    sched: VarianceSchedule,
) -> np.ndarray:
    """One ancestral reverse update: posterior mean plus ``sigma_t * noise``.

    The mean is ``(x_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(1 - beta_t)``.
    No noise is added at the final step ``t == 1``.
    """
    if t < 1 or t > sched.T:
        raise IndexError(f"step index t={t} outside [1, {sched.T}]")
    beta = sched.betas[t - 1]
    abar_t = sched.alpha_bars[t]
    mean = (x_t - beta / np.sqrt(1.0 - abar_t) * eps_hat) / np.sqrt(1.0 - beta)
    if t == 1:
        return mean
    if noise is None:
        raise ValueError("noise is required for t > 1")
    return mean + sched.sigmas[t - 1] * noise


def ddim_timesteps(sched: VarianceSchedule, steps: int) -> np.ndarray:
    """Evenly spaced sub-sampled timesteps, largest first, ending at 0.

    Returns an integer array of length ``steps + 1`` starting at ``T``; the
    reverse chain visits consecutive pairs ``(ts[i], ts[i+1])``.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if steps > sched.T:
        raise ValueError(f"steps={steps} exceeds schedule length T={sched.T}")
    ts = np.round(np.linspace(sched.T, 0, steps + 1)).astype(int)
    if np.any(np.diff(ts) >= 0):
        raise ValueError(f"sub-sampled timesteps are not strictly decreasing: {ts}")
    return ts
