"""Per-token prior assembly, truncated initialization, and generation.

Inference runs in two moves: assemble a (mean, variance) grid for the label
mask from a prior bank, then draw from it and noise the draw to the
truncation step.  From there the deterministic sampler walks a timestep plan
with a caller-supplied denoiser.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ParameterError, ShapeError, UnknownClassError
from .estimation import PriorBank
from .schedule import NoiseSchedule, TimestepPlan, ddim_step, forward_noise, truncation_step
from .tensor_io import LabelMask, downsample_mask

VARIANCE_FLOOR = 1e-6

PRIOR_KINDS = ("normal", "spatial", "categorical", "joint")

# Per-token provenance codes recorded in an assembled map.
PROV_NORMAL = 0
PROV_SPATIAL = 1
PROV_CATEGORICAL = 2
PROV_JOINT = 3
PROV_JOINT_FALLBACK = 4
PROVENANCE_NAMES = {
    PROV_NORMAL: "normal",
    PROV_SPATIAL: "spatial",
    PROV_CATEGORICAL: "categorical",
    PROV_JOINT: "joint",
    PROV_JOINT_FALLBACK: "joint-fallback",
}

Denoiser = Callable[[np.ndarray, int, LabelMask], np.ndarray]


@dataclass(frozen=True, eq=False)
class DistributionMap:
    """Per-token Gaussian (mean, variance) grid ready to sample from."""

    mean: np.ndarray  # (H', W', C)
    variance: np.ndarray  # (H', W', C), non-negative
    provenance: np.ndarray  # (H', W') uint8 codes from PROVENANCE_NAMES

    def __post_init__(self):
        if self.mean.ndim != 3:
            raise ShapeError(f"mean must be (H', W', C), got {self.mean.shape}")
        if self.variance.shape != self.mean.shape:
            raise ShapeError("variance shape must match mean shape")
        if self.provenance.shape != self.mean.shape[:2]:
            raise ShapeError("provenance shape must match the token grid")
        if np.any(self.variance < 0):
            raise ParameterError("variance must be non-negative")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.mean.shape


def assemble_map(
    bank: PriorBank | None,
    mask: LabelMask | None,
    kind: str,
    *,
    on_unknown: str = "error",
    latent_shape: tuple[int, int, int] | None = None,
) -> DistributionMap:
    """Index a prior bank token-by-token for one label mask.

    normal ignores the bank (zero mean, unit variance); spatial replicates
    the bank's spatial grids; categorical indexes class statistics through
    the downsampled mask; joint indexes (location, class) cells and reverts
    flagged cells to the class statistics.  Ignore-labeled tokens always
    receive the spatial entry.  A class with no bank statistics raises
    UnknownClassError unless ``on_unknown="spatial"`` downgrades it.
    """
    if kind not in PRIOR_KINDS:
        raise ParameterError(f"kind must be one of {PRIOR_KINDS}, got {kind!r}")
    if on_unknown not in ("error", "spatial"):
        raise ParameterError(f"on_unknown must be 'error' or 'spatial', got {on_unknown!r}")

    if kind == "normal":
        if bank is not None:
            latent_shape = (bank.height, bank.width, bank.channels)
        if latent_shape is None:
            raise ParameterError("kind='normal' needs a bank or an explicit latent_shape")
        h, w, c = latent_shape
        return DistributionMap(
            mean=np.zeros((h, w, c)),
            variance=np.ones((h, w, c)),
            provenance=np.full((h, w), PROV_NORMAL, dtype=np.uint8),
        )

    if bank is None:
        raise ParameterError(f"kind={kind!r} requires a prior bank")
    h, w, c = bank.height, bank.width, bank.channels
    spatial_mean = bank.spatial_mean
    spatial_var = bank.spatial_var

    if kind == "spatial":
        return DistributionMap(
            mean=spatial_mean.copy(),
            variance=np.maximum(spatial_var, VARIANCE_FLOOR),
            provenance=np.full((h, w), PROV_SPATIAL, dtype=np.uint8),
        )

    if mask is None:
        raise ParameterError(f"kind={kind!r} requires a label mask")
    ids = downsample_mask(mask, h, w).ids
    labeled = ids != mask.ignore_id

    unknown = labeled & ((ids >= bank.num_classes) | (bank.cat_count[np.minimum(ids, bank.num_classes - 1)] == 0))
    if np.any(unknown):
        if on_unknown == "error":
            missing = sorted(int(i) for i in np.unique(ids[unknown]))
            raise UnknownClassError(
                f"mask contains class(es) {missing} with no statistics in the bank"
            )
        labeled = labeled & ~unknown

    mean = spatial_mean.copy()
    variance = spatial_var.copy()
    provenance = np.full((h, w), PROV_SPATIAL, dtype=np.uint8)

    ys, xs = np.nonzero(labeled)
    cls = ids[ys, xs]
    if kind == "categorical":
        mean[ys, xs] = bank.cat_mean[cls]
        variance[ys, xs] = bank.cat_var[cls]
        provenance[ys, xs] = PROV_CATEGORICAL
    else:  # joint
        fallback = bank.fallback_flags[ys, xs, cls]
        mean[ys, xs] = np.where(
            fallback[:, None], bank.cat_mean[cls], bank.joint_mean[ys, xs, cls]
        )
        variance[ys, xs] = np.where(
            fallback[:, None], bank.cat_var[cls], bank.joint_var[ys, xs, cls]
        )
        provenance[ys, xs] = np.where(fallback, PROV_JOINT_FALLBACK, PROV_JOINT)

    return DistributionMap(
        mean=mean,
        variance=np.maximum(variance, VARIANCE_FLOOR),
        provenance=provenance,
    )


def sample_init(
    dmap: DistributionMap, mu: float, schedule: NoiseSchedule, seed: int
) -> np.ndarray:
    """Draw from the distribution map and noise the draw to round(mu*T).

    The master seed is split into two independent substreams (prior draw,
    noising draw), so the prior sample does not change with mu.
    """
    t = truncation_step(mu, schedule.total_steps)
    seq_prior, seq_noise = np.random.SeedSequence(seed).spawn(2)
    rng_prior = np.random.default_rng(seq_prior)
    rng_noise = np.random.default_rng(seq_noise)
    x_prior = dmap.mean + np.sqrt(dmap.variance) * rng_prior.standard_normal(dmap.shape)
    eps = rng_noise.standard_normal(dmap.shape)
    return forward_noise(x_prior, t, eps, schedule)


def run_plan(
    x: np.ndarray,
    plan: TimestepPlan,
    denoiser: Denoiser,
    mask: LabelMask,
    schedule: NoiseSchedule,
) -> np.ndarray:
    """Walk the deterministic sampler along a timestep plan."""
    for t, t_prev in zip(plan.substeps, plan.substeps[1:]):
        eps_hat = np.asarray(denoiser(x, t, mask))
        if eps_hat.shape != x.shape:
            raise ShapeError(
                f"denoiser returned shape {eps_hat.shape}, expected {x.shape}"
            )
        x = ddim_step(x, eps_hat, t, t_prev, schedule)
    return x


def generate(
    bank: PriorBank | None,
    mask: LabelMask,
    kind: str,
    mu: float,
    plan: TimestepPlan,
    denoiser: Denoiser,
    seed: int,
    *,
    schedule: NoiseSchedule,
    on_unknown: str = "error",
    latent_shape: tuple[int, int, int] | None = None,
) -> np.ndarray:
    """Sample a prior initialization and denoise the last round(mu*T) steps.

    Consumes exactly ``len(plan.substeps) - 1`` denoiser calls and returns
    the clean-latent estimate.
    """
    t_start = truncation_step(mu, schedule.total_steps)
    if plan.substeps[0] != t_start:
        raise ParameterError(
            f"plan starts at {plan.substeps[0]} but round(mu*T) = {t_start}"
        )
    dmap = assemble_map(
        bank, mask, kind, on_unknown=on_unknown, latent_shape=latent_shape
    )
    x = sample_init(dmap, mu, schedule, seed)
    mask_ds = downsample_mask(mask, dmap.shape[0], dmap.shape[1])
    return run_plan(x, plan, denoiser, mask_ds, schedule)
