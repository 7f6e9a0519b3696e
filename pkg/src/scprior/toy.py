"""Desk-scale diffusion harness: synthetic scenes, a small trainable
denoiser, and the train/inference distribution-mismatch study.

Scenes are class-colored rectangles over a background class.  Layouts come
from a fixed table of templates, and records arrive in small capture groups
that share one template and one appearance draw (the way drive recordings
repeat near-identical frames), so diverse reference subsets carry more
information than same-sized random ones.  Each latent token is its class's
base value plus a smooth vertical brightness gradient, a per-record style
shift shared by all tokens, and independent per-token jitter.  The style
shift gives real latents cross-token correlation that a per-token Gaussian
prior cannot represent, and the gradient makes class appearance
location-dependent, which is what separates the joint prior from the purely
categorical one.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from ._container import read_container, write_container
from .errors import FormatError, ParameterError, TrainingError
from .estimation import PriorBank
from .metrics import frechet_distance, summarize
from .sampling import generate, run_plan
from .schedule import (
    NoiseSchedule,
    build_schedule,
    forward_noise,
    ground_truth_prior_init,
    make_timestep_plan,
    truncation_step,
)
from .tensor_io import (
    DEFAULT_IGNORE_ID,
    CorpusRecord,
    LabelMask,
    LatentImage,
    downsample_mask,
)

DENOISER_MAGIC = b"SCPDNSR\x00"

TOY_LATENT_SIZE = 16
TOY_MASK_SIZE = 64
TOY_CHANNELS = 4
TOY_TOTAL_STEPS = 200

CLASS_SPACING = 2.0
JITTER_SCALE = 0.4  # half-width of the uniform per-token jitter
STYLE_SIGMA = 0.3  # per-record shift shared across tokens, clipped at 3 sigma
GRADIENT_SCALE = 1.0  # peak-to-peak vertical brightness gradient
N_TEMPLATES = 48  # distinct scene layouts shared by all corpora
DUPLICATION = 8  # records per capture group (same layout and style, fresh jitter)
_TEMPLATE_SEED = 20240517  # fixed so the layout table is a harness property

# Largest per-channel deviation of a token from its class base value.
TOY_DEVIATION_BOUND = JITTER_SCALE + 3.0 * STYLE_SIGMA + GRADIENT_SCALE / 2.0


def toy_schedule(total_steps: int = TOY_TOTAL_STEPS) -> NoiseSchedule:
    """Default schedule for the toy harness (shorter ramp, same betas)."""
    return build_schedule(total_steps=total_steps)


def class_base_values(num_classes: int, channels: int = TOY_CHANNELS) -> np.ndarray:
    """Distinct per-class base token values, pairwise at least CLASS_SPACING apart."""
    if num_classes < 1:
        raise ParameterError("num_classes must be positive")
    base = np.zeros((num_classes, channels))
    for cls in range(num_classes):
        base[cls, cls % channels] = CLASS_SPACING * (1 + cls // channels)
    return base


@dataclass(frozen=True)
class SceneRegion:
    """An axis-aligned class rectangle in mask pixels (top/left inclusive)."""

    class_id: int
    top: int
    left: int
    bottom: int
    right: int


@dataclass(frozen=True, eq=False)
class ToyScene:
    """One synthetic record plus the layout it was built from."""

    latent: LatentImage
    mask: LabelMask
    regions: tuple[SceneRegion, ...]
    base_values: np.ndarray
    jitter_scale: float

    def to_record(self, record_id: str) -> CorpusRecord:
        return CorpusRecord(latent=self.latent, mask=self.mask, id=record_id)


def _class_anchor(cls: int) -> tuple[float, float]:
    # Golden-ratio scatter keeps anchors spread out for any class count.
    ay = 0.2 + 0.6 * ((0.5 + 0.6180339887 * cls) % 1.0)
    ax = 0.2 + 0.6 * ((0.5 + 0.3819660113 * cls) % 1.0)
    return ay, ax


@lru_cache(maxsize=8)
def _layout_templates(
    num_classes: int, mask_size: int, n_templates: int
) -> list[tuple[SceneRegion, ...]]:
    """Fixed table of rectangle layouts shared by all corpora of this shape."""
    rng = np.random.default_rng(np.random.SeedSequence((_TEMPLATE_SEED, num_classes, mask_size)))
    templates = []
    for _ in range(n_templates):
        regions = []
        for cls in range(1, num_classes):
            presence = 0.6 if cls == num_classes - 1 else 0.95
            if rng.random() >= presence:
                continue
            ay, ax = _class_anchor(cls)
            cy = (ay + rng.uniform(-0.12, 0.12)) * mask_size
            cx = (ax + rng.uniform(-0.12, 0.12)) * mask_size
            hy = rng.uniform(0.08, 0.22) * mask_size
            hx = rng.uniform(0.08, 0.22) * mask_size
            top = int(np.clip(cy - hy, 0, mask_size - 1))
            bottom = int(np.clip(cy + hy, top + 1, mask_size))
            left = int(np.clip(cx - hx, 0, mask_size - 1))
            right = int(np.clip(cx + hx, left + 1, mask_size))
            regions.append(SceneRegion(cls, top, left, bottom, right))
        templates.append(tuple(regions))
    return templates


def _template_weights(n_templates: int) -> np.ndarray:
    return np.full(n_templates, 1.0 / n_templates)


def _draw_style(rng: np.random.Generator, channels: int) -> np.ndarray:
    return np.clip(
        rng.normal(0.0, STYLE_SIGMA, size=channels), -3 * STYLE_SIGMA, 3 * STYLE_SIGMA
    )


def _scene_from(
    regions: tuple[SceneRegion, ...],
    style: np.ndarray,
    rng: np.random.Generator,
    num_classes: int,
    latent_size: int,
    mask_size: int,
    channels: int,
    ignore_id: int,
) -> ToyScene:
    base = class_base_values(num_classes, channels)
    content = np.zeros((mask_size, mask_size), dtype=np.uint8)
    for region in regions:
        content[region.top : region.bottom, region.left : region.right] = region.class_id

    labels = content.copy()
    if rng.random() < 0.25:
        size = int(rng.integers(4, 11))
        top = int(rng.integers(0, mask_size - size))
        left = int(rng.integers(0, mask_size - size))
        labels[top : top + size, left : left + size] = ignore_id

    content_ds = downsample_mask(
        LabelMask(content, ignore_id), latent_size, latent_size
    ).ids
    rows = np.arange(latent_size) / (latent_size - 1) - 0.5
    gradient = GRADIENT_SCALE * rows[:, None, None]
    jitter = rng.uniform(
        -JITTER_SCALE, JITTER_SCALE, size=(latent_size, latent_size, channels)
    )
    latent = (base[content_ds] + gradient + style + jitter).astype(np.float32)
    return ToyScene(
        latent=LatentImage(latent),
        mask=LabelMask(labels, ignore_id),
        regions=regions,
        base_values=base,
        jitter_scale=JITTER_SCALE,
    )


def make_toy_scene(
    rng: np.random.Generator,
    num_classes: int,
    *,
    latent_size: int = TOY_LATENT_SIZE,
    mask_size: int = TOY_MASK_SIZE,
    channels: int = TOY_CHANNELS,
    ignore_id: int = DEFAULT_IGNORE_ID,
) -> ToyScene:
    """Draw one standalone scene: a template layout plus fresh appearance."""
    if num_classes < 2 or num_classes > 200:
        raise ParameterError("num_classes must lie in [2, 200] for the toy harness")
    templates = _layout_templates(num_classes, mask_size, N_TEMPLATES)
    regions = templates[rng.choice(len(templates), p=_template_weights(len(templates)))]
    style = _draw_style(rng, channels)
    return _scene_from(
        regions, style, rng, num_classes, latent_size, mask_size, channels, ignore_id
    )


def make_toy_scenes(
    n: int,
    num_classes: int,
    seed: int,
    *,
    latent_size: int = TOY_LATENT_SIZE,
    mask_size: int = TOY_MASK_SIZE,
    channels: int = TOY_CHANNELS,
    ignore_id: int = DEFAULT_IGNORE_ID,
) -> Iterator[ToyScene]:
    """Scenes in capture groups of DUPLICATION records.

    Each group shares one template draw and one style draw (think
    consecutive frames of a drive); per-token jitter and the optional
    unlabeled patch stay record-level.
    """
    if n < 1:
        raise ParameterError("n must be positive")
    if not 2 <= num_classes <= 200:
        raise ParameterError("num_classes must lie in [2, 200] for the toy harness")
    templates = _layout_templates(num_classes, mask_size, N_TEMPLATES)
    weights = _template_weights(len(templates))
    n_groups = -(-n // DUPLICATION)
    group_seqs = np.random.SeedSequence(seed).spawn(n_groups)
    produced = 0
    for group_seq in group_seqs:
        member_seqs = group_seq.spawn(DUPLICATION + 1)
        group_rng = np.random.default_rng(member_seqs[0])
        regions = templates[group_rng.choice(len(templates), p=weights)]
        style = _draw_style(group_rng, channels)
        for member_seq in member_seqs[1:]:
            if produced == n:
                return
            yield _scene_from(
                regions,
                style,
                np.random.default_rng(member_seq),
                num_classes,
                latent_size,
                mask_size,
                channels,
                ignore_id,
            )
            produced += 1


def make_toy_corpus(
    n: int, num_classes: int, seed: int, **kwargs
) -> Iterator[CorpusRecord]:
    """Deterministic stream of synthetic corpus records."""
    for i, scene in enumerate(make_toy_scenes(n, num_classes, seed, **kwargs)):
        yield scene.to_record(f"toy-{i:05d}")


def layout_features(records: Sequence[CorpusRecord], latent_size: int | None = None) -> np.ndarray:
    """Per-record layout descriptors for diversity selection.

    One-hot class occupancy of the downsampled mask, flattened: a stand-in
    for semantic content features, deliberately blind to appearance so that
    selecting on it cannot skew appearance statistics.
    """
    feats = []
    for record in records:
        h = latent_size or record.latent.height
        ids = downsample_mask(record.mask, h, h).ids
        num_classes = int(ids[ids != record.mask.ignore_id].max(initial=0)) + 1
        feats.append((ids, num_classes, record.mask.ignore_id))
    k = max(f[1] for f in feats)
    rows = []
    for ids, _, ignore in feats:
        onehot = np.zeros((ids.size, k))
        flat = ids.reshape(-1)
        labeled = flat != ignore
        onehot[np.nonzero(labeled)[0], np.minimum(flat[labeled], k - 1)] = 1.0
        rows.append(onehot.ravel())
    return np.stack(rows)


@dataclass
class TrainConfig:
    """Budget and optimizer settings for the toy denoiser."""

    steps: int = 1500
    batch_records: int = 8
    learning_rate: float = 0.02
    momentum: float = 0.9
    hidden: int = 64
    t_embed_dim: int = 8
    holdout_fraction: float = 0.1


class ToyDenoiser:
    """Residual two-hidden-layer perceptron predicting per-token noise.

    Input per token: the 3x3 token neighborhood (zero-padded), a sinusoidal
    timestep embedding, and the one-hot class of the token (all-zero for
    ignore-labeled tokens).  Backpropagation is written out by hand so the
    gradients can be checked against finite differences.
    """

    def __init__(
        self,
        num_classes: int,
        channels: int,
        hidden: int,
        t_embed_dim: int,
        total_steps: int,
        params: dict[str, np.ndarray],
    ):
        if t_embed_dim % 2 != 0:
            raise ParameterError("t_embed_dim must be even (sin/cos pairs)")
        self.num_classes = num_classes
        self.channels = channels
        self.hidden = hidden
        self.t_embed_dim = t_embed_dim
        self.total_steps = total_steps
        self.params = params
        self.final_loss: float | None = None

    @classmethod
    def create(
        cls,
        num_classes: int,
        channels: int,
        hidden: int,
        t_embed_dim: int,
        total_steps: int,
        rng: np.random.Generator,
    ) -> "ToyDenoiser":
        d_in = 9 * channels + t_embed_dim + num_classes
        params = {
            "w1": rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_in, hidden)),
            "b1": np.zeros(hidden),
            "w2": rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, hidden)),
            "b2": np.zeros(hidden),
            "w3": rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, channels)),
            "b3": np.zeros(channels),
        }
        return cls(num_classes, channels, hidden, t_embed_dim, total_steps, params)

    @property
    def input_dim(self) -> int:
        return 9 * self.channels + self.t_embed_dim + self.num_classes

    def _t_embedding(self, t: int) -> np.ndarray:
        phase = t / self.total_steps
        freqs = 2.0 ** np.arange(self.t_embed_dim // 2)
        angles = np.pi * freqs * phase
        return np.concatenate([np.sin(angles), np.cos(angles)])

    def features(self, x_t: np.ndarray, t: int, ids: np.ndarray) -> np.ndarray:
        """Per-token feature rows for one noised latent."""
        h, w, c = x_t.shape
        padded = np.pad(x_t, ((1, 1), (1, 1), (0, 0)))
        windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(0, 1))
        hood = np.moveaxis(windows, 2, -1).reshape(h * w, 9 * c)
        embed = np.broadcast_to(self._t_embedding(t), (h * w, self.t_embed_dim))
        onehot = np.zeros((h * w, self.num_classes))
        flat_ids = ids.reshape(-1)
        labeled = flat_ids < self.num_classes
        onehot[np.nonzero(labeled)[0], flat_ids[labeled]] = 1.0
        return np.concatenate([hood, embed, onehot], axis=1)

    def _forward(self, feats: np.ndarray):
        p = self.params
        z1 = feats @ p["w1"] + p["b1"]
        h1 = np.tanh(z1)
        u2 = np.tanh(h1 @ p["w2"] + p["b2"])
        h2 = h1 + u2
        out = h2 @ p["w3"] + p["b3"]
        return out, (feats, h1, u2, h2)

    def loss_and_grads(
        self, feats: np.ndarray, targets: np.ndarray
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Mean per-token squared noise error and its parameter gradients."""
        p = self.params
        out, (f, h1, u2, h2) = self._forward(feats)
        diff = out - targets
        rows = feats.shape[0]
        loss = float((diff**2).sum() / rows)
        dout = 2.0 * diff / rows
        grads = {
            "w3": h2.T @ dout,
            "b3": dout.sum(axis=0),
        }
        dh2 = dout @ p["w3"].T
        dz2 = dh2 * (1.0 - u2**2)
        grads["w2"] = h1.T @ dz2
        grads["b2"] = dz2.sum(axis=0)
        dh1 = dh2 + dz2 @ p["w2"].T
        dz1 = dh1 * (1.0 - h1**2)
        grads["w1"] = f.T @ dz1
        grads["b1"] = dz1.sum(axis=0)
        return loss, grads

    def predict(self, x_t: np.ndarray, t: int, mask: LabelMask) -> np.ndarray:
        """Predicted noise for one noised latent; the denoiser contract."""
        x_t = np.asarray(x_t, dtype=np.float64)
        h, w, c = x_t.shape
        out, _ = self._forward(self.features(x_t, t, mask.ids))
        return out.reshape(h, w, c)

    __call__ = predict

    def save(self, path: str | Path, provenance: dict | None = None) -> None:
        meta = {
            "kind": "toy-denoiser",
            "num_classes": self.num_classes,
            "channels": self.channels,
            "hidden": self.hidden,
            "t_embed_dim": self.t_embed_dim,
            "total_steps": self.total_steps,
            "final_loss": self.final_loss,
            "provenance": provenance or {},
        }
        write_container(path, DENOISER_MAGIC, meta, self.params)

    @classmethod
    def load(cls, path: str | Path) -> tuple["ToyDenoiser", dict]:
        meta, arrays = read_container(path, DENOISER_MAGIC)
        if meta.get("kind") != "toy-denoiser":
            raise FormatError(f"{path}: not a toy-denoiser file")
        model = cls(
            num_classes=int(meta["num_classes"]),
            channels=int(meta["channels"]),
            hidden=int(meta["hidden"]),
            t_embed_dim=int(meta["t_embed_dim"]),
            total_steps=int(meta["total_steps"]),
            params={k: v for k, v in arrays.items()},
        )
        if meta.get("final_loss") is not None:
            model.final_loss = float(meta["final_loss"])
        return model, meta.get("provenance", {})


def _record_inputs(record: CorpusRecord) -> tuple[np.ndarray, np.ndarray]:
    x0 = record.latent.data.astype(np.float64)
    ids = downsample_mask(record.mask, x0.shape[0], x0.shape[1]).ids
    return x0, ids


def train_toy_denoiser(
    corpus: Iterable[CorpusRecord],
    schedule: NoiseSchedule,
    config: TrainConfig,
    seed: int,
) -> ToyDenoiser:
    """Fit the toy denoiser with momentum SGD on the noise-prediction loss.

    A slice of the corpus is held out; after the budget is spent the mean
    held-out loss must beat the zero-predictor baseline on the same draws,
    otherwise training is considered failed.
    """
    records = list(corpus)
    if not records:
        raise ParameterError("corpus is empty")
    prepared = [_record_inputs(r) for r in records]
    n = len(prepared)
    holdout = max(1, int(n * config.holdout_fraction)) if n >= 5 else 0
    train_set = prepared[: n - holdout] if holdout else prepared
    held_set = prepared[n - holdout :] if holdout else prepared

    init_seq, batch_seq, eval_seq = np.random.SeedSequence(seed).spawn(3)
    rng = np.random.default_rng(init_seq)
    channels = prepared[0][0].shape[2]
    num_classes = 1
    for record, (_, ids) in zip(records, prepared):
        labeled = ids[ids != record.mask.ignore_id]
        num_classes = max(num_classes, int(labeled.max(initial=0)) + 1)
    model = ToyDenoiser.create(
        num_classes=num_classes,
        channels=channels,
        hidden=config.hidden,
        t_embed_dim=config.t_embed_dim,
        total_steps=schedule.total_steps,
        rng=rng,
    )

    batch_rng = np.random.default_rng(batch_seq)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    for step in range(config.steps):
        picks = batch_rng.integers(0, len(train_set), size=config.batch_records)
        feats_blocks = []
        target_blocks = []
        for idx in picks:
            x0, ids = train_set[idx]
            t = int(batch_rng.integers(1, schedule.total_steps + 1))
            eps = batch_rng.standard_normal(x0.shape)
            x_t = forward_noise(x0, t, eps, schedule)
            feats_blocks.append(model.features(x_t, t, ids))
            target_blocks.append(eps.reshape(-1, channels))
        loss, grads = model.loss_and_grads(
            np.concatenate(feats_blocks), np.concatenate(target_blocks)
        )
        if not np.isfinite(loss):
            raise TrainingError(f"loss diverged at step {step}")
        for name, grad in grads.items():
            velocity[name] = config.momentum * velocity[name] - config.learning_rate * grad
            model.params[name] += velocity[name]

    eval_rng = np.random.default_rng(eval_seq)
    losses = []
    baselines = []
    for x0, ids in held_set:
        t = int(eval_rng.integers(1, schedule.total_steps + 1))
        eps = eval_rng.standard_normal(x0.shape)
        x_t = forward_noise(x0, t, eps, schedule)
        targets = eps.reshape(-1, channels)
        loss, _ = model.loss_and_grads(model.features(x_t, t, ids), targets)
        losses.append(loss)
        baselines.append(float((targets**2).sum() / targets.shape[0]))
    model.final_loss = float(np.mean(losses))
    if model.final_loss >= float(np.mean(baselines)):
        raise TrainingError(
            f"held-out loss {model.final_loss:.4f} did not beat the "
            f"zero-predictor baseline {np.mean(baselines):.4f}"
        )
    return model


@dataclass(frozen=True)
class StudyRow:
    """One mu-grid entry of the mismatch study."""

    mu: float
    fid_gt_prior: float
    fid_normal: float
    fid_joint: float


def _flatten_latents(latents: Sequence[np.ndarray]) -> np.ndarray:
    return np.stack([np.asarray(x, dtype=np.float64).ravel() for x in latents])


def empirical_mismatch_study(
    denoiser: ToyDenoiser,
    corpus: Sequence[CorpusRecord],
    bank: PriorBank,
    schedule: NoiseSchedule,
    mu_grid: Sequence[float],
    *,
    n_eval: int = 96,
    substeps: int = 16,
    seed: int = 0,
) -> list[StudyRow]:
    """Fréchet distance to real latents when inference starts from the
    oracle initialization, the unit normal, and the joint prior.

    For every mu, a fixed-size sample set per source is denoised over the
    last round(mu*T) steps and compared (whole latents flattened as feature
    vectors) against all real latents in ``corpus``; ``corpus`` should be
    held-out records, with the bank estimated on separate reference records.
    """
    records = list(corpus)
    if len(records) < 2:
        raise ParameterError("study needs at least 2 evaluation records")
    for mu in mu_grid:
        if not 0.0 <= mu <= 1.0:
            raise ParameterError(f"mu grid entry {mu} outside [0, 1]")
    n_eval = min(n_eval, len(records))
    if n_eval < 2:
        raise ParameterError("n_eval must be at least 2")

    real_summary = summarize(_flatten_latents([r.latent.data for r in records]))
    eval_records = records[:n_eval]
    eval_inputs = [_record_inputs(r) for r in eval_records]

    rows = []
    for mu_idx, mu in enumerate(mu_grid):
        t_start = truncation_step(mu, schedule.total_steps)
        n_sub = 1 if t_start == 0 else max(2, min(substeps, t_start + 1))
        plan = make_timestep_plan(mu, n_sub, schedule)

        gt_latents = []
        normal_latents = []
        joint_latents = []
        for rec_idx, record in enumerate(eval_records):
            x0, ids = eval_inputs[rec_idx]
            mask_ds = LabelMask(ids, record.mask.ignore_id)
            gt_rng = np.random.default_rng(
                np.random.SeedSequence((seed, mu_idx, 0, rec_idx))
            )
            x_init = ground_truth_prior_init(
                x0, mu, gt_rng.standard_normal(x0.shape), schedule
            )
            gt_latents.append(run_plan(x_init, plan, denoiser, mask_ds, schedule))
            normal_latents.append(
                generate(
                    bank,
                    record.mask,
                    "normal",
                    mu,
                    plan,
                    denoiser,
                    (seed, mu_idx, 1, rec_idx),
                    schedule=schedule,
                )
            )
            joint_latents.append(
                generate(
                    bank,
                    record.mask,
                    "joint",
                    mu,
                    plan,
                    denoiser,
                    (seed, mu_idx, 2, rec_idx),
                    schedule=schedule,
                )
            )
        rows.append(
            StudyRow(
                mu=float(mu),
                fid_gt_prior=frechet_distance(
                    summarize(_flatten_latents(gt_latents)), real_summary
                ),
                fid_normal=frechet_distance(
                    summarize(_flatten_latents(normal_latents)), real_summary
                ),
                fid_joint=frechet_distance(
                    summarize(_flatten_latents(joint_latents)), real_summary
                ),
            )
        )
    return rows
