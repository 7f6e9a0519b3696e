"""Distribution distance, oracle segmentation scores, diversity, and
furthest point sampling.

The Fréchet distance here is the exact two-Gaussian formula; at toy scale
the feature sets it compares are raw latents rather than activations of a
pretrained network.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError, NumericalError, ParameterError, ShapeError
from .tensor_io import LabelMask, downsample_mask

EIGEN_CLAMP = 1e-8
SYMMETRY_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class GaussianSummary:
    """Sample count, mean vector, and covariance matrix of a feature set."""

    n: int
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        if mean.ndim != 1:
            raise ShapeError("mean must be a vector")
        if cov.shape != (mean.size, mean.size):
            raise ShapeError(f"cov must be {mean.size}x{mean.size}, got {cov.shape}")
        scale = max(1.0, float(np.abs(cov).max(initial=0.0)))
        if np.abs(cov - cov.T).max(initial=0.0) > SYMMETRY_TOL * scale:
            raise DataError("covariance is not symmetric within tolerance")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", (cov + cov.T) / 2.0)

    @property
    def dim(self) -> int:
        return self.mean.size


def summarize(features: np.ndarray | Sequence[np.ndarray]) -> GaussianSummary:
    """Empirical mean and sample covariance (n-1 convention) of row vectors."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2:
        raise ShapeError(f"features must be (n, D), got shape {feats.shape}")
    n = feats.shape[0]
    if n < 2:
        raise ParameterError("need at least 2 feature vectors")
    mean = feats.mean(axis=0)
    centered = feats - mean
    cov = centered.T @ centered / (n - 1)
    return GaussianSummary(n=n, mean=mean, cov=(cov + cov.T) / 2.0)


def _psd_sqrt(cov: np.ndarray) -> np.ndarray:
    try:
        eigvals, eigvecs = np.linalg.eigh(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    eigvals = np.maximum(eigvals, 0.0)
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.T


def frechet_distance(a: GaussianSummary, b: GaussianSummary) -> float:
    """Squared 2-Wasserstein distance between two Gaussian summaries.

    ``|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)``, with
    the matrix square roots taken by eigendecomposition and small negative
    eigenvalues clamped to zero.
    """
    if a.dim != b.dim:
        raise ShapeError(f"dimension mismatch: {a.dim} vs {b.dim}")
    delta = a.mean - b.mean
    sqrt_a = _psd_sqrt(a.cov)
    inner = sqrt_a @ b.cov @ sqrt_a
    inner = (inner + inner.T) / 2.0
    try:
        eigvals = np.linalg.eigvalsh(inner)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    trace_sqrt = np.sqrt(np.maximum(eigvals, 0.0)).sum()
    dist = float(delta @ delta + np.trace(a.cov) + np.trace(b.cov) - 2.0 * trace_sqrt)
    return max(dist, 0.0)


def oracle_segmentation_scores(
    generated: np.ndarray, mask: LabelMask, base_values: np.ndarray
) -> tuple[float, float]:
    """Mean IoU and pixel accuracy of the nearest-base-value classifier.

    Each generated token is classified to the class whose base value is
    nearest in L2; scores compare those labels with the (downsampled) mask.
    IoU is averaged over classes that appear in either the mask or the
    prediction; ignore-labeled tokens are excluded everywhere.
    """
    generated = np.asarray(generated, dtype=np.float64)
    if generated.ndim != 3:
        raise ShapeError(f"generated latent must be (H', W', C), got {generated.shape}")
    h, w, c = generated.shape
    base_values = np.asarray(base_values, dtype=np.float64)
    if base_values.ndim != 2 or base_values.shape[1] != c:
        raise ShapeError(f"base_values must be (K, {c}), got {base_values.shape}")
    ids = downsample_mask(mask, h, w).ids
    valid = ids != mask.ignore_id
    if not np.any(valid):
        raise DataError("mask has no labeled pixels")
    dists = ((generated[:, :, None, :] - base_values[None, None, :, :]) ** 2).sum(axis=-1)
    pred = dists.argmin(axis=-1)
    gt = ids[valid]
    hyp = pred[valid]
    acc = float(np.mean(hyp == gt))
    ious = []
    for cls in np.union1d(np.unique(gt), np.unique(hyp)):
        inter = np.count_nonzero((gt == cls) & (hyp == cls))
        union = np.count_nonzero((gt == cls) | (hyp == cls))
        ious.append(inter / union)
    return float(np.mean(ious)), acc


def batch_diversity(latents: Sequence[np.ndarray]) -> float:
    """Mean pairwise L2 distance, normalized by sqrt(elements per latent)."""
    if len(latents) < 2:
        raise ParameterError("need at least 2 latents")
    arrs = [np.asarray(x, dtype=np.float64) for x in latents]
    shape = arrs[0].shape
    for arr in arrs[1:]:
        if arr.shape != shape:
            raise ShapeError(f"latent shapes differ: {arr.shape} vs {shape}")
    flat = np.stack([a.ravel() for a in arrs])
    scale = np.sqrt(flat.shape[1])
    total = 0.0
    pairs = 0
    for i in range(len(arrs)):
        diffs = flat[i + 1 :] - flat[i]
        total += float(np.sqrt((diffs**2).sum(axis=1)).sum())
        pairs += diffs.shape[0]
    return total / (pairs * scale)


def furthest_point_sampling(
    features: np.ndarray, k: int, start_index: int = 0
) -> list[int]:
    """Greedy max-min subset selection over feature vectors.

    Starting from ``start_index``, repeatedly adds the point furthest from
    the selected set; ties break toward the lowest index.
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2:
        raise ShapeError(f"features must be (n, D), got shape {feats.shape}")
    n = feats.shape[0]
    if not 1 <= k <= n:
        raise ParameterError(f"k must lie in [1, {n}], got {k}")
    if not 0 <= start_index < n:
        raise ParameterError(f"start_index must lie in [0, {n}), got {start_index}")
    selected = [int(start_index)]
    sq_norms = (feats**2).sum(axis=1)
    dist = sq_norms + sq_norms[start_index] - 2.0 * feats @ feats[start_index]
    dist[start_index] = -np.inf
    for _ in range(k - 1):
        idx = int(np.argmax(dist))
        selected.append(idx)
        new = sq_norms + sq_norms[idx] - 2.0 * feats @ feats[idx]
        dist = np.minimum(dist, new)
        dist[idx] = -np.inf
    return selected
