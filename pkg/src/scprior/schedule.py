"""Noise-schedule algebra for truncated diffusion inference.

A schedule owns the cumulative signal-retention table ``alpha_bar`` and the
closed-form noising / deterministic-denoising identities built on it.  All
functions here are elementwise over the latent, so they accept arrays of any
shape as long as the shapes agree, and they never mutate their inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError

# Stable-Diffusion-style defaults; the toy harness overrides total_steps.
DEFAULT_TOTAL_STEPS = 1000
DEFAULT_BETA_START = 0.00085
DEFAULT_BETA_END = 0.012


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Cumulative scaling table of a variance-preserving noising process.

    ``alpha_bar[t]`` is the product of the per-step retention factors
    ``1 - beta_s`` for ``s = 1..t``, with ``alpha_bar[0] = 1`` by convention,
    so ``x_t = sqrt(alpha_bar[t]) * x_0 + sqrt(1 - alpha_bar[t]) * eps``.
    Immutable and safe to share across workers.
    """

    total_steps: int
    alpha_bar: np.ndarray

    def __post_init__(self):
        if not isinstance(self.total_steps, (int, np.integer)) or self.total_steps < 1:
            raise ParameterError("total_steps must be a positive integer")
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if ab.shape != (self.total_steps + 1,):
            raise ParameterError(
                f"alpha_bar must have length total_steps + 1, got {ab.shape}"
            )
        if not np.all(np.isfinite(ab)):
            raise ParameterError("alpha_bar contains non-finite entries")
        if ab[0] != 1.0:
            raise ParameterError("alpha_bar[0] must be exactly 1")
        if not np.all(np.diff(ab) < 0.0):
            raise ParameterError("alpha_bar must be strictly decreasing")
        if ab[-1] <= 0.0 or np.any(ab > 1.0):
            raise ParameterError("alpha_bar entries must lie in (0, 1]")
        ab.setflags(write=False)
        object.__setattr__(self, "alpha_bar", ab)
        object.__setattr__(self, "total_steps", int(self.total_steps))


@dataclass(frozen=True)
class TimestepPlan:
    """Strictly decreasing timesteps walked by the deterministic sampler.

    ``substeps[0]`` is the truncation step the initialization is noised to
    and ``substeps[-1]`` is always 0.
    """

    mu: float
    substeps: tuple[int, ...]

    def __post_init__(self):
        if not 0.0 <= self.mu <= 1.0:
            raise ParameterError(f"mu must lie in [0, 1], got {self.mu}")
        if len(self.substeps) == 0:
            raise ParameterError("substeps must be non-empty")
        if self.substeps[-1] != 0:
            raise ParameterError("substeps must end at 0")
        if any(b >= a for a, b in zip(self.substeps, self.substeps[1:])):
            raise ParameterError("substeps must be strictly decreasing")
        if self.substeps[0] < 0:
            raise ParameterError("substeps must be non-negative")


def build_schedule(
    total_steps: int = DEFAULT_TOTAL_STEPS,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> NoiseSchedule:
    """Build the cumulative-product schedule from a scaled-linear beta ramp.

    Betas are linearly interpolated between the endpoints on the
    square-root-of-beta grid (the scaled-linear convention), then
    ``alpha_bar[t] = prod_{s<=t} (1 - beta_s)``.
    """
    if not isinstance(total_steps, (int, np.integer)) or total_steps < 1:
        raise ParameterError("total_steps must be a positive integer")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ParameterError(
            f"beta range must satisfy 0 < beta_start <= beta_end < 1, "
            f"got ({beta_start}, {beta_end})"
        )
    sqrt_betas = np.linspace(math.sqrt(beta_start), math.sqrt(beta_end), total_steps)
    betas = sqrt_betas * sqrt_betas
    alpha_bar = np.empty(total_steps + 1, dtype=np.float64)
    alpha_bar[0] = 1.0
    alpha_bar[1:] = np.cumprod(1.0 - betas)
    return NoiseSchedule(total_steps=int(total_steps), alpha_bar=alpha_bar)


def _check_timestep(t: int, schedule: NoiseSchedule) -> int:
    if not isinstance(t, (int, np.integer)):
        raise ParameterError(f"timestep must be an integer, got {t!r}")
    if not 0 <= t <= schedule.total_steps:
        raise ParameterError(
            f"timestep {t} outside [0, {schedule.total_steps}]"
        )
    return int(t)


def forward_noise(
    x0: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule
) -> np.ndarray:
    """Noise a clean latent to timestep ``t``.

    Returns ``sqrt(alpha_bar[t]) * x0 + sqrt(1 - alpha_bar[t]) * eps``.
    """
    t = _check_timestep(t, schedule)
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ShapeError(f"eps shape {eps.shape} != x0 shape {x0.shape}")
    ab = schedule.alpha_bar[t]
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps


def ddim_step(
    x_t: np.ndarray,
    eps_hat: np.ndarray,
    t: int,
    t_prev: int,
    schedule: NoiseSchedule,
) -> np.ndarray:
    """One deterministic reverse step from ``t`` to ``t_prev`` (< t).

    Reconstructs the clean-latent estimate implied by ``eps_hat`` and
    re-noises it to ``t_prev`` with the same ``eps_hat`` (zero-variance
    variant of the implicit sampler).
    """
    t = _check_timestep(t, schedule)
    t_prev = _check_timestep(t_prev, schedule)
    if t_prev >= t:
        raise ParameterError(f"t_prev ({t_prev}) must be smaller than t ({t})")
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if x_t.shape != eps_hat.shape:
        raise ShapeError(f"eps_hat shape {eps_hat.shape} != x_t shape {x_t.shape}")
    ab_t = schedule.alpha_bar[t]
    ab_prev = schedule.alpha_bar[t_prev]
    x0_pred = (x_t - math.sqrt(1.0 - ab_t) * eps_hat) / math.sqrt(ab_t)
    return math.sqrt(ab_prev) * x0_pred + math.sqrt(1.0 - ab_prev) * eps_hat


def truncation_step(mu: float, total_steps: int) -> int:
    """Timestep the truncated inference starts from: round(mu * total_steps)."""
    if not 0.0 <= mu <= 1.0:
        raise ParameterError(f"mu must lie in [0, 1], got {mu}")
    return int(round(mu * total_steps))


def ground_truth_prior_init(
    x0: np.ndarray, mu: float, eps: np.ndarray, schedule: NoiseSchedule
) -> np.ndarray:
    """Sample the oracle initialization: the real latent noised to round(mu*T)."""
    return forward_noise(x0, truncation_step(mu, schedule.total_steps), eps, schedule)


def make_timestep_plan(
    mu: float, n_substeps: int, schedule: NoiseSchedule
) -> TimestepPlan:
    """Evenly spaced decreasing timesteps from round(mu*T) down to 0.

    Spacing is uniform with rounding; duplicate steps created by rounding are
    dropped, keeping the larger step first.
    """
    if not isinstance(n_substeps, (int, np.integer)) or n_substeps < 1:
        raise ParameterError("n_substeps must be a positive integer")
    t_start = truncation_step(mu, schedule.total_steps)
    if n_substeps > t_start + 1:
        raise ParameterError(
            f"n_substeps ({n_substeps}) exceeds available steps ({t_start + 1})"
        )
    if t_start == 0:
        return TimestepPlan(mu=float(mu), substeps=(0,))
    if n_substeps < 2:
        raise ParameterError("n_substeps must be >= 2 to reach step 0")
    grid = np.linspace(t_start, 0.0, int(n_substeps))
    steps: list[int] = []
    for value in grid:
        step = int(round(float(value)))
        if not steps or step < steps[-1]:
            steps.append(step)
    return TimestepPlan(mu=float(mu), substeps=tuple(steps))
