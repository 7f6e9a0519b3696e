"""Single-pass estimation of spatial, categorical, and joint Gaussian priors.

All statistics use the population convention (variance = m2 / count) and are
accumulated with Welford updates, so any sharding of the corpus can be
accumulated independently and merged back.  Channels are treated
independently throughout: every prior is a diagonal Gaussian per token.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from ._container import read_container, write_container
from .errors import DataError, FormatError, ParameterError, ShapeError
from .tensor_io import CorpusRecord, downsample_mask

BANK_MAGIC = b"SCPBANK\x00"
DEFAULT_FALLBACK_MIN_COUNT = 32


class RunningStats:
    """Streaming mean / summed-squared-deviation accumulator.

    Functional style: update and merge return new instances.  ``mean`` and
    ``m2`` can have any shape; every update supplies one observation of that
    shape (use update_batch for several at once).
    """

    __slots__ = ("count", "mean", "m2")

    def __init__(self, shape: tuple[int, ...] | int = (), *, count=0, mean=None, m2=None):
        if isinstance(shape, (int, np.integer)):
            shape = (int(shape),)
        self.count = int(count)
        self.mean = np.zeros(shape) if mean is None else np.asarray(mean, dtype=np.float64)
        self.m2 = np.zeros(shape) if m2 is None else np.asarray(m2, dtype=np.float64)
        if self.count < 0:
            raise ParameterError("count must be non-negative")
        if self.mean.shape != self.m2.shape:
            raise ShapeError("mean and m2 must share a shape")
        if self.count == 0 and (np.any(self.mean != 0) or np.any(self.m2 != 0)):
            raise ParameterError("empty stats must have zero mean and m2")
        if np.any(self.m2 < 0):
            raise ParameterError("m2 must be non-negative")

    @property
    def variance(self) -> np.ndarray:
        """Population variance of everything seen so far."""
        if self.count == 0:
            raise ParameterError("variance of an empty accumulator is undefined")
        return self.m2 / self.count

    def update(self, token: np.ndarray) -> "RunningStats":
        """Fold in one observation."""
        token = np.asarray(token, dtype=np.float64)
        if token.shape != self.mean.shape:
            raise ShapeError(f"token shape {token.shape} != stats shape {self.mean.shape}")
        if not np.all(np.isfinite(token)):
            raise DataError("token contains non-finite values")
        n = self.count + 1
        delta = token - self.mean
        mean = self.mean + delta / n
        m2 = self.m2 + delta * (token - mean)
        return RunningStats(count=n, mean=mean, m2=m2)

    def update_batch(self, tokens: np.ndarray) -> "RunningStats":
        """Fold in ``tokens[k]`` for all k (axis 0 indexes observations)."""
        tokens = np.asarray(tokens, dtype=np.float64)
        if tokens.shape[1:] != self.mean.shape:
            raise ShapeError(
                f"batch item shape {tokens.shape[1:]} != stats shape {self.mean.shape}"
            )
        if tokens.shape[0] == 0:
            return self
        if not np.all(np.isfinite(tokens)):
            raise DataError("batch contains non-finite values")
        k = tokens.shape[0]
        bmean = tokens.mean(axis=0)
        bm2 = ((tokens - bmean) ** 2).sum(axis=0)
        return self.merge(RunningStats(count=k, mean=bmean, m2=bm2))

    def merge(self, other: "RunningStats") -> "RunningStats":
        """Combine two accumulators as if one had seen both streams."""
        if self.mean.shape != other.mean.shape:
            raise ShapeError(
                f"cannot merge stats of shapes {self.mean.shape} and {other.mean.shape}"
            )
        if self.count == 0:
            return RunningStats(count=other.count, mean=other.mean.copy(), m2=other.m2.copy())
        if other.count == 0:
            return RunningStats(count=self.count, mean=self.mean.copy(), m2=self.m2.copy())
        n = self.count + other.count
        weight = other.count / n
        delta = other.mean - self.mean
        mean = self.mean + delta * weight
        m2 = self.m2 + other.m2 + delta * delta * (self.count * weight)
        return RunningStats(count=n, mean=mean, m2=m2)


@dataclass(frozen=True, eq=False)
class PriorBank:
    """Estimated Gaussian statistics for the spatial, categorical, and joint priors.

    Joint cells observed fewer than ``fallback_min_count`` times are flagged
    and store no statistics of their own (their mean/var entries are zero);
    samplers revert those tokens to the class statistics.  Variances are raw
    population variances; the sampling-time floor is not applied here.
    """

    spatial_mean: np.ndarray  # (H', W', C)
    spatial_var: np.ndarray
    cat_mean: np.ndarray  # (K, C)
    cat_var: np.ndarray
    cat_count: np.ndarray  # (K,)
    joint_mean: np.ndarray  # (H', W', K, C)
    joint_var: np.ndarray
    joint_count: np.ndarray  # (H', W', K)
    fallback_flags: np.ndarray  # (H', W', K) bool
    num_classes: int
    fallback_min_count: int
    ignore_id: int
    n_records: int
    corpus_checksum: str

    def __post_init__(self):
        h, w, c = self.spatial_mean.shape
        k = self.num_classes
        expected = {
            "spatial_var": (h, w, c),
            "cat_mean": (k, c),
            "cat_var": (k, c),
            "cat_count": (k,),
            "joint_mean": (h, w, k, c),
            "joint_var": (h, w, k, c),
            "joint_count": (h, w, k),
            "fallback_flags": (h, w, k),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeError(f"{name} must have shape {shape}")
        if np.any(self.spatial_var < 0) or np.any(self.cat_var < 0) or np.any(
            self.joint_var < 0
        ):
            raise DataError("variances must be non-negative")
        if np.any(self.fallback_flags != (self.joint_count < self.fallback_min_count)):
            raise DataError("fallback flags must mark exactly the under-count cells")

    @property
    def height(self) -> int:
        return self.spatial_mean.shape[0]

    @property
    def width(self) -> int:
        return self.spatial_mean.shape[1]

    @property
    def channels(self) -> int:
        return self.spatial_mean.shape[2]


def _record_digest(record: CorpusRecord) -> bytes:
    digest = hashlib.sha256()
    digest.update(record.id.encode("utf-8"))
    digest.update(np.ascontiguousarray(record.latent.data).tobytes())
    digest.update(np.ascontiguousarray(record.mask.ids).tobytes())
    return digest.digest()


def _merge_grid(na, ma, m2a, nb, mb, m2b):
    """Parallel Welford merge on grids with per-cell counts."""
    n = na + nb
    weight = np.where(n > 0, nb / np.maximum(n, 1), 0.0)
    delta = mb - ma
    mean = ma + delta * weight[..., None]
    m2 = m2a + m2b + delta * delta * (na * weight)[..., None]
    return n, mean, m2


class PriorAccumulator:
    """Mergeable single-pass state for one corpus shard."""

    def __init__(self, num_classes: int):
        if num_classes < 1:
            raise ParameterError("num_classes must be positive")
        self.num_classes = num_classes
        self.spatial: RunningStats | None = None
        self.cat: list[RunningStats] = []
        self.joint_count = self.joint_mean = self.joint_m2 = None
        self.digests: list[bytes] = []
        self.n_records = 0
        self.dims: tuple[int, int, int] | None = None
        self.ignore_id: int | None = None

    def _init_dims(self, dims: tuple[int, int, int], ignore_id: int) -> None:
        h, w, c = dims
        self.dims = dims
        self.ignore_id = ignore_id
        self.spatial = RunningStats(dims)
        self.cat = [RunningStats((c,)) for _ in range(self.num_classes)]
        self.joint_count = np.zeros((h, w, self.num_classes), dtype=np.int64)
        self.joint_mean = np.zeros((h, w, self.num_classes, c))
        self.joint_m2 = np.zeros((h, w, self.num_classes, c))

    def update(self, record: CorpusRecord) -> None:
        x = record.latent.data.astype(np.float64)
        if self.dims is None:
            self._init_dims(x.shape, record.mask.ignore_id)
        elif x.shape != self.dims:
            raise ShapeError(
                f"record '{record.id}': latent shape {x.shape} differs from {self.dims}"
            )
        elif record.mask.ignore_id != self.ignore_id:
            raise DataError(
                f"record '{record.id}': ignore_id {record.mask.ignore_id} differs "
                f"from corpus ignore_id {self.ignore_id}"
            )
        h, w, _ = self.dims
        ids = downsample_mask(record.mask, h, w).ids
        labeled = ids != self.ignore_id
        bad = labeled & (ids >= self.num_classes)
        if np.any(bad):
            raise DataError(
                f"record '{record.id}': mask id {int(ids[bad].max())} "
                f">= num_classes ({self.num_classes})"
            )

        self.spatial = self.spatial.update(x)
        for cls in np.unique(ids[labeled]):
            self.cat[cls] = self.cat[cls].update_batch(x[ids == cls])

        # Joint Welford update; each location holds at most one token per
        # record, so the fancy-indexed scatter has no collisions.
        ys, xs = np.nonzero(labeled)
        cls = ids[ys, xs]
        tokens = x[ys, xs]
        n = self.joint_count[ys, xs, cls] + 1
        delta = tokens - self.joint_mean[ys, xs, cls]
        mean_new = self.joint_mean[ys, xs, cls] + delta / n[:, None]
        self.joint_m2[ys, xs, cls] += delta * (tokens - mean_new)
        self.joint_mean[ys, xs, cls] = mean_new
        self.joint_count[ys, xs, cls] = n

        self.digests.append(_record_digest(record))
        self.n_records += 1

    def merge(self, other: "PriorAccumulator") -> "PriorAccumulator":
        """Append another shard; digests follow in shard order."""
        if other.num_classes != self.num_classes:
            raise ParameterError("num_classes differs between shards")
        if other.n_records == 0:
            return self
        if self.n_records == 0:
            return other
        if other.dims != self.dims:
            raise ShapeError(f"shard dims differ: {other.dims} vs {self.dims}")
        if other.ignore_id != self.ignore_id:
            raise DataError("shards disagree on ignore_id")
        self.spatial = self.spatial.merge(other.spatial)
        self.cat = [a.merge(b) for a, b in zip(self.cat, other.cat)]
        self.joint_count, self.joint_mean, self.joint_m2 = _merge_grid(
            self.joint_count,
            self.joint_mean,
            self.joint_m2,
            other.joint_count,
            other.joint_mean,
            other.joint_m2,
        )
        self.digests.extend(other.digests)
        self.n_records += other.n_records
        return self

    def finalize(self, fallback_min_count: int = DEFAULT_FALLBACK_MIN_COUNT) -> PriorBank:
        if fallback_min_count < 1:
            raise ParameterError("fallback_min_count must be positive")
        if self.n_records == 0:
            raise DataError("cannot estimate priors from an empty corpus")
        h, w, c = self.dims
        cat_mean = np.zeros((self.num_classes, c))
        cat_var = np.zeros((self.num_classes, c))
        cat_count = np.zeros(self.num_classes, dtype=np.int64)
        for cls, stats in enumerate(self.cat):
            cat_count[cls] = stats.count
            if stats.count > 0:
                cat_mean[cls] = stats.mean
                cat_var[cls] = stats.variance

        flags = self.joint_count < fallback_min_count
        joint_var = np.zeros_like(self.joint_m2)
        seen = self.joint_count > 0
        joint_var[seen] = self.joint_m2[seen] / self.joint_count[seen][:, None]
        # Flagged cells store no statistics of their own.
        joint_mean = np.where(flags[..., None], 0.0, self.joint_mean)
        joint_var = np.where(flags[..., None], 0.0, joint_var)

        checksum = hashlib.sha256()
        for digest in self.digests:
            checksum.update(digest)

        return PriorBank(
            spatial_mean=self.spatial.mean.copy(),
            spatial_var=self.spatial.variance,
            cat_mean=cat_mean,
            cat_var=cat_var,
            cat_count=cat_count,
            joint_mean=joint_mean,
            joint_var=joint_var,
            joint_count=self.joint_count.copy(),
            fallback_flags=flags,
            num_classes=self.num_classes,
            fallback_min_count=fallback_min_count,
            ignore_id=int(self.ignore_id),
            n_records=self.n_records,
            corpus_checksum=checksum.hexdigest(),
        )


def estimate_priors(
    corpus: Iterable[CorpusRecord],
    num_classes: int,
    fallback_min_count: int = DEFAULT_FALLBACK_MIN_COUNT,
) -> PriorBank:
    """Stream the corpus once and fit all three prior banks.

    The spatial bank reduces every record per location regardless of class;
    the categorical bank groups tokens by the id of the downsampled mask;
    the joint bank groups by (location, id).  Tokens labeled with the mask's
    ignore id contribute to the spatial bank only.
    """
    acc = PriorAccumulator(num_classes)
    for record in corpus:
        acc.update(record)
    return acc.finalize(fallback_min_count)


def save_bank(bank: PriorBank, path: str | Path) -> None:
    """Write a bank losslessly; identical banks produce identical bytes."""
    meta = {
        "kind": "prior-bank",
        "num_classes": bank.num_classes,
        "height": bank.height,
        "width": bank.width,
        "channels": bank.channels,
        "fallback_min_count": bank.fallback_min_count,
        "ignore_id": bank.ignore_id,
        "n_records": bank.n_records,
        "corpus_checksum": bank.corpus_checksum,
    }
    arrays = {
        "spatial_mean": bank.spatial_mean,
        "spatial_var": bank.spatial_var,
        "cat_mean": bank.cat_mean,
        "cat_var": bank.cat_var,
        "cat_count": bank.cat_count,
        "joint_mean": bank.joint_mean,
        "joint_var": bank.joint_var,
        "joint_count": bank.joint_count,
        "fallback_flags": bank.fallback_flags.astype(np.uint8),
    }
    write_container(path, BANK_MAGIC, meta, arrays)


def load_bank(path: str | Path) -> PriorBank:
    meta, arrays = read_container(path, BANK_MAGIC)
    if meta.get("kind") != "prior-bank":
        raise FormatError(f"{path}: not a prior-bank file")
    try:
        return PriorBank(
            spatial_mean=arrays["spatial_mean"],
            spatial_var=arrays["spatial_var"],
            cat_mean=arrays["cat_mean"],
            cat_var=arrays["cat_var"],
            cat_count=arrays["cat_count"],
            joint_mean=arrays["joint_mean"],
            joint_var=arrays["joint_var"],
            joint_count=arrays["joint_count"],
            fallback_flags=arrays["fallback_flags"].astype(bool),
            num_classes=int(meta["num_classes"]),
            fallback_min_count=int(meta["fallback_min_count"]),
            ignore_id=int(meta["ignore_id"]),
            n_records=int(meta["n_records"]),
            corpus_checksum=str(meta["corpus_checksum"]),
        )
    except KeyError as exc:
        raise FormatError(f"{path}: bank file missing field {exc}") from exc
