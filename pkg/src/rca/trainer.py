"""Desk-scale trainer that aligns tag, caption, and region tables by gradient descent.

The synthetic world has ``n_concepts`` unit-norm prototype directions. Each
image shows ``regions_per_image`` distinct concepts; its positive tags and
caption nouns name exactly those concepts and its negative tags name absent
ones. Global tag scores are cosines against the mean region embedding,
frozen at generation time. An optional flip swaps one positive/negative
pair to emulate ranking noise.

Tag and caption embeddings live in per-concept tables shared across the
whole dataset, so the contrastive objective can triangulate each concept
from its co-occurrences; region embeddings get a row per (image, slot).
Training runs plain gradient descent on the mean per-image loss, with
optional candidate subsampling and uncertainty-aware selection applied per
image per step. Selection and its weights are computed on the frozen
generation-time embeddings (the stand-in for pretrained encoder features)
and applied straight-through to the trainable tables, so filter quality is
a property of the data, not of the training trajectory. Loss history
records are full-dataset snapshots (no subsampling), so a zero learning
rate yields a perfectly flat history.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import ContrastiveInstance
from .errors import ConfigError, DivergenceError
from .gradients import loss_and_grad
from .losses import total_loss
from .tags import subsample
from .uasr import apply_uasr

__all__ = [
    "SyntheticConfig",
    "TrainerConfig",
    "SyntheticInstance",
    "SyntheticDataset",
    "TrainState",
    "HistoryRecord",
    "generate_synthetic",
    "initial_state",
    "aligned_state",
    "gather_instance",
    "snapshot_loss",
    "train_alignment",
    "evaluate_retrieval",
]


@dataclass
class SyntheticConfig:
    """Shape and noise knobs for the generated dataset."""

    n_concepts: int = 10
    d: int = 16
    n_images: int = 200
    regions_per_image: int = 4
    noise_sigma: float = 0.0
    flip_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_concepts < 2:
            raise ConfigError("need at least 2 concepts")
        if self.d < 1:
            raise ConfigError("embedding dimension must be positive")
        if self.n_images < 1:
            raise ConfigError("need at least 1 image")
        if not 1 <= self.regions_per_image < self.n_concepts:
            raise ConfigError(
                "regions_per_image must be in [1, n_concepts) so negatives exist"
            )
        if self.noise_sigma < 0.0 or not math.isfinite(self.noise_sigma):
            raise ConfigError("noise_sigma must be finite and non-negative")
        if not 0.0 <= self.flip_rate <= 1.0:
            raise ConfigError("flip_rate must lie in [0, 1]")


@dataclass
class TrainerConfig:
    """Optimization settings. Freeze flags pin individual tables."""

    steps: int = 500
    learning_rate: float = 1e-4
    batch_size: int = 512
    lambda_cross: float = 1.0
    lambda_inner: float = 1.0
    enable_uasr: bool = True
    enable_inner: bool = True
    enable_subsample: bool = True
    subsample_fraction: float = 0.5
    seed: int = 0
    freeze_tags: bool = False
    freeze_regions: bool = False
    freeze_caption: bool = False

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError("steps must be non-negative")
        if self.learning_rate < 0.0 or not math.isfinite(self.learning_rate):
            raise ConfigError("learning_rate must be finite and non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.lambda_cross < 0.0 or self.lambda_inner < 0.0:
            raise ConfigError("lambda weights must be non-negative")
        if not 0.0 < self.subsample_fraction <= 1.0:
            raise ConfigError("subsample_fraction must lie in (0, 1]")

    @property
    def effective_lambda_inner(self) -> float:
        return self.lambda_inner if self.enable_inner else 0.0


@dataclass
class SyntheticInstance:
    """Concept assignments and frozen generation-time evidence for one image.

    The embedding fields are the "pretrained encoder" view of the image:
    selection and re-weighting run on them, never on the trainable tables,
    so the filter quality does not depend on how far training has gotten.
    """

    image_id: int
    row_ids: np.ndarray            # (K,) rows of the region table
    region_concepts: np.ndarray    # (K,)
    positive_concepts: np.ndarray  # (K,) sorted by descending global score
    negative_concepts: np.ndarray  # (K,) sorted by descending global score
    caption_concepts: np.ndarray   # (P,)
    global_scores: np.ndarray      # (K,) cosine of positive tag vs mean region
    region_embeddings: np.ndarray  # (K, d) as generated, used for table init
    positive_embeddings: np.ndarray  # (K, d) as generated, evidence for selection
    negative_embeddings: np.ndarray  # (K, d)
    flipped: bool = False

    def evidence_view(self, pos_idx=None, neg_idx=None) -> ContrastiveInstance:
        """Frozen-embedding instance for selection, optionally row-subset."""
        pos = self.positive_embeddings
        neg = self.negative_embeddings
        scores = self.global_scores
        if pos_idx is not None:
            pos, scores = pos[pos_idx], scores[pos_idx]
        if neg_idx is not None:
            neg = neg[neg_idx]
        return ContrastiveInstance.trusted(
            regions=self.region_embeddings,
            positives=pos,
            negatives=neg,
            caption_nouns=np.zeros((0, self.region_embeddings.shape[1])),
            global_scores=scores,
        )


@dataclass
class SyntheticDataset:
    config: SyntheticConfig
    prototypes: np.ndarray  # (n_concepts, d) unit rows
    instances: list[SyntheticInstance] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.instances)

    @property
    def n_region_rows(self) -> int:
        return len(self.instances) * self.config.regions_per_image


def _cosine_rows(image: np.ndarray, rows: np.ndarray) -> np.ndarray:
    num = rows @ image
    den = np.linalg.norm(rows, axis=1) * np.linalg.norm(image)
    return num / np.maximum(den, 1e-12)


def generate_synthetic(config: SyntheticConfig) -> SyntheticDataset:
    """Sample a dataset of images with ranked positive and negative tags."""
    rng = np.random.default_rng(config.seed)
    protos = rng.standard_normal((config.n_concepts, config.d))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)

    k = config.regions_per_image
    instances = []
    for image_id in range(config.n_images):
        present = rng.choice(config.n_concepts, size=k, replace=False)
        absent = np.setdiff1d(np.arange(config.n_concepts), present)
        negatives = rng.choice(absent, size=k, replace=len(absent) < k)

        def noisy(concepts):
            base = protos[concepts]
            if config.noise_sigma == 0.0:
                return base.copy()
            return base + config.noise_sigma * rng.standard_normal(base.shape)

        region_emb = noisy(present)
        pos_emb = noisy(present)
        neg_emb = noisy(negatives)
        pos_concepts = present.copy()
        neg_concepts = negatives.copy()

        flipped = False
        if config.flip_rate > 0.0 and rng.random() < config.flip_rate:
            i = int(rng.integers(k))
            j = int(rng.integers(k))
            pos_concepts[i], neg_concepts[j] = neg_concepts[j], pos_concepts[i]
            pos_emb[[i]], neg_emb[[j]] = neg_emb[[j]].copy(), pos_emb[[i]].copy()
            flipped = True

        image_emb = region_emb.mean(axis=0)
        pos_scores = _cosine_rows(image_emb, pos_emb)
        pos_order = np.argsort(-pos_scores, kind="stable")
        pos_concepts = pos_concepts[pos_order]
        pos_scores = pos_scores[pos_order]
        pos_emb = pos_emb[pos_order]
        neg_order = np.argsort(-_cosine_rows(image_emb, neg_emb), kind="stable")
        neg_concepts = neg_concepts[neg_order]
        neg_emb = neg_emb[neg_order]

        instances.append(
            SyntheticInstance(
                image_id=image_id,
                row_ids=np.arange(image_id * k, (image_id + 1) * k),
                region_concepts=present,
                positive_concepts=pos_concepts,
                negative_concepts=neg_concepts,
                caption_concepts=present.copy(),
                global_scores=pos_scores,
                region_embeddings=region_emb,
                positive_embeddings=pos_emb,
                negative_embeddings=neg_emb,
                flipped=flipped,
            )
        )
    return SyntheticDataset(config=config, prototypes=protos, instances=instances)


@dataclass
class TrainState:
    tag_table: np.ndarray      # (n_concepts, d)
    caption_table: np.ndarray  # (n_concepts, d)
    region_table: np.ndarray   # (n_images * K, d)
    step: int = 0


def initial_state(
    dataset: SyntheticDataset, seed: int = 0, region_init: str = "data"
) -> TrainState:
    """Random concept tables; region rows copied from the data or random too.

    The RNG stream is keyed away from the generator's so that reusing one
    seed for data and init cannot hand the tables the true prototypes.
    """
    cfg = dataset.config
    rng = np.random.default_rng([seed, 0x1217])
    scale = 1.0 / np.sqrt(cfg.d)
    tag = rng.standard_normal((cfg.n_concepts, cfg.d)) * scale
    cap = rng.standard_normal((cfg.n_concepts, cfg.d)) * scale
    if region_init == "data":
        regions = np.vstack([inst.region_embeddings for inst in dataset.instances])
    elif region_init == "random":
        regions = rng.standard_normal((dataset.n_region_rows, cfg.d)) * scale
    else:
        raise ConfigError(f"unknown region_init {region_init!r}")
    return TrainState(tag_table=tag, caption_table=cap, region_table=regions.copy())


def aligned_state(dataset: SyntheticDataset) -> TrainState:
    """Oracle state: concept tables equal the true prototypes."""
    return TrainState(
        tag_table=dataset.prototypes.copy(),
        caption_table=dataset.prototypes.copy(),
        region_table=np.vstack([i.region_embeddings for i in dataset.instances]),
    )


def gather_instance(
    dataset: SyntheticDataset, state: TrainState, index: int
) -> ContrastiveInstance:
    """Materialize one image's contrastive arrays from the current tables.

    Skips per-instance validation: the tables are finite-checked once per
    training step and the gathered slices inherit that.
    """
    inst = dataset.instances[index]
    return ContrastiveInstance.trusted(
        regions=state.region_table[inst.row_ids],
        positives=state.tag_table[inst.positive_concepts],
        negatives=state.tag_table[inst.negative_concepts],
        caption_nouns=state.caption_table[inst.caption_concepts],
        global_scores=inst.global_scores,
    )


def snapshot_loss(
    dataset: SyntheticDataset, state: TrainState, config: TrainerConfig
) -> "HistoryRecord":
    """Mean full-dataset loss with the configured selection, no subsampling."""
    cross = inner = total = 0.0
    for i in range(len(dataset)):
        inst = dataset.instances[i]
        ci = gather_instance(dataset, state, i)
        sel = apply_uasr(inst.evidence_view()) if config.enable_uasr else None
        bd = total_loss(ci, sel, config.lambda_cross, config.effective_lambda_inner)
        cross += bd.cross
        inner += bd.inner
        total += bd.total
    n = len(dataset)
    return HistoryRecord(
        step=state.step, cross=cross / n, inner=inner / n, total=total / n
    )


@dataclass
class HistoryRecord:
    step: int
    cross: float
    inner: float
    total: float


def _subsampled(ci: ContrastiveInstance, fraction: float, rng):
    """Row-subset view of an instance; regions and caption stay whole."""
    k = ci.num_positives
    pos_idx, neg_idx = subsample(np.arange(k), np.arange(k), fraction, rng)
    sub = ContrastiveInstance.trusted(
        regions=ci.regions,
        positives=ci.positives[pos_idx],
        negatives=ci.negatives[neg_idx],
        caption_nouns=ci.caption_nouns,
        global_scores=ci.global_scores[pos_idx],
    )
    return sub, pos_idx, neg_idx


def train_alignment(
    dataset: SyntheticDataset,
    config: TrainerConfig,
    state: TrainState | None = None,
) -> tuple[TrainState, list[HistoryRecord]]:
    """Gradient descent over the tables; returns the final state and history.

    History holds snapshots before the first step, after every tenth step,
    and after the last one. Raises :class:`DivergenceError` as soon as a
    table or a snapshot stops being finite.
    """
    if state is None:
        state = initial_state(dataset, seed=config.seed)
    rng = np.random.default_rng(config.seed)
    n = len(dataset)
    k = dataset.config.regions_per_image

    def record(history):
        rec = snapshot_loss(dataset, state, config)
        if not math.isfinite(rec.total):
            raise DivergenceError(state.step, "snapshot loss is not finite")
        history.append(rec)

    history: list[HistoryRecord] = []
    record(history)

    for _ in range(config.steps):
        if config.batch_size >= n:
            batch = np.arange(n)
        else:
            batch = rng.choice(n, size=config.batch_size, replace=False)

        g_tag = np.zeros_like(state.tag_table)
        g_cap = np.zeros_like(state.caption_table)
        g_reg = np.zeros_like(state.region_table)

        for idx in batch:
            inst = dataset.instances[idx]
            ci = gather_instance(dataset, state, idx)
            pos_concepts = inst.positive_concepts
            neg_concepts = inst.negative_concepts
            pos_idx = neg_idx = None
            if config.enable_subsample:
                ci, pos_idx, neg_idx = _subsampled(ci, config.subsample_fraction, rng)
                pos_concepts = pos_concepts[pos_idx]
                neg_concepts = neg_concepts[neg_idx]
            sel = (
                apply_uasr(inst.evidence_view(pos_idx, neg_idx))
                if config.enable_uasr
                else None
            )
            _, grads = loss_and_grad(
                ci, sel, config.lambda_cross, config.effective_lambda_inner
            )
            np.add.at(g_reg, inst.row_ids, grads.d_regions)
            np.add.at(g_tag, pos_concepts, grads.d_positives)
            np.add.at(g_tag, neg_concepts, grads.d_negatives)
            np.add.at(g_cap, inst.caption_concepts, grads.d_caption_nouns)

        lr = config.learning_rate / len(batch)
        if not config.freeze_tags:
            state.tag_table -= lr * g_tag
        if not config.freeze_caption:
            state.caption_table -= lr * g_cap
        if not config.freeze_regions:
            state.region_table -= lr * g_reg
        state.step += 1

        for table in (state.tag_table, state.caption_table, state.region_table):
            if not np.isfinite(table).all():
                raise DivergenceError(state.step, "table values are not finite")

        if state.step % 10 == 0:
            record(history)

    if not history or history[-1].step != state.step:
        record(history)
    return state, history


def evaluate_retrieval(dataset: SyntheticDataset, state: TrainState) -> float:
    """Fraction of positive tags whose best-matching region shows their concept.

    Each positive tag retrieves the region of its own image with the
    highest cosine against the current tables. Exactly one region depicts
    each true positive concept, so random tables score about 1/K; a
    flipped-in positive names an absent concept and always misses.
    """
    correct = 0
    seen = 0
    for inst in dataset.instances:
        regions = state.region_table[inst.row_ids]
        rnorm = np.maximum(np.linalg.norm(regions, axis=1), 1e-12)
        for concept in inst.positive_concepts:
            w = state.tag_table[concept]
            cos = (regions @ w) / (rnorm * max(np.linalg.norm(w), 1e-12))
            winner = int(np.argmax(cos))
            correct += int(inst.region_concepts[winner] == concept)
            seen += 1
    return correct / seen
