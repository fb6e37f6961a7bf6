"""Deterministic synthetic data: labeled Gaussian clusters plus unlabeled
convex-mixture samples.

The "real" dataset is K well-separated Gaussian clusters with a
train/query/gallery split per class.  The "generated" dataset stands in
for GAN output: each sample is a convex combination of a few real
training samples from a small number of distinct classes, plus noise.
That reproduces the property the rank-weighted labels exploit: generated
samples have strong affinity to a few classes rather than a uniform
blend of all of them.  Which classes went into a sample is kept only as
a diagnostics record, never shown to training code.

Dataset file format (plain text, locale-independent):

    K dim n_samples
    id split origin class f1 ... fdim

with ``split`` in {train, query, gallery}, ``origin`` in
{real, generated}, ``class`` a 1-based integer or -1 for generated
samples, and features printed with 17 significant digits so float64
round-trips are exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GenerationFailure, InvalidConfig, InvalidDimension, InvalidState

SPLIT_TAGS = ("train", "query", "gallery")
# class means sit >= this multiple of the cluster spread apart;
# comfortably above the 4x floor the datasets guarantee
MEAN_SEPARATION_FACTOR = 8.0
MIN_SEPARATION_FACTOR = 4.0
# mixing weights shrink toward uniform by this factor, which keeps convex
# mixtures decisively closer to their source classes than to any other
WEIGHT_SHRINK = 0.6


@dataclass
class Sample:
    id: int
    features: np.ndarray
    origin: str  # "real" | "generated"
    class_label: int | None  # 1-based; None for generated samples
    split: str


@dataclass(frozen=True)
class MixRecord:
    """Diagnostics-only provenance of one generated sample."""

    source_ids: tuple[int, ...]
    source_classes: tuple[int, ...]
    weights: np.ndarray


@dataclass
class Dataset:
    samples: list[Sample]
    n_classes: int
    feature_dim: int
    # provenance is never serialized and never read by training code
    provenance: dict[int, MixRecord] = field(default_factory=dict, repr=False)

    def split(self, tag: str) -> list[Sample]:
        return [s for s in self.samples if s.split == tag]

    def feature_matrix(self, samples: list[Sample] | None = None) -> np.ndarray:
        rows = self.samples if samples is None else samples
        return np.stack([s.features for s in rows]) if rows else np.empty((0, self.feature_dim))

    def __len__(self) -> int:
        return len(self.samples)


def _simplex_means(n_classes, dim, edge, rng):
    """Vertices of a regular simplex with the given edge length, randomly
    rotated (Haar) in the full feature space.  Needs n_classes <= dim."""
    vertices = np.zeros((n_classes, dim))
    vertices[:, :n_classes] = np.eye(n_classes) - 1.0 / n_classes
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    q = q * np.sign(np.diag(r))
    return (edge / np.sqrt(2.0)) * vertices @ q.T


def _place_class_means(n_classes, dim, min_separation, rng,
                       attempts_per_mean: int = 500, max_growths: int = 8):
    """Rejection-sample class means with a guaranteed pairwise separation.

    Fallback for class counts the simplex construction cannot host.  The
    sampling box doubles when placement stalls; if it stalls at every box
    size the separation is treated as infeasible in this dimension.
    """
    half_width = 2.0 * max(1.0, min_separation)
    for _ in range(max_growths):
        means = np.empty((n_classes, dim))
        placed = 0
        stuck = False
        for _ in range(n_classes):
            for _ in range(attempts_per_mean):
                candidate = rng.uniform(-half_width, half_width, size=dim)
                if placed == 0 or np.min(
                    np.linalg.norm(means[:placed] - candidate, axis=1)
                ) >= min_separation:
                    means[placed] = candidate
                    placed += 1
                    break
            else:
                stuck = True
                break
        if not stuck:
            return means
        half_width *= 2.0
    raise GenerationFailure(
        f"could not place {n_classes} class means with pairwise separation "
        f">= {min_separation:g} in {dim} dimensions"
    )


def make_real_dataset(n_classes: int, n_per_class: int, dim: int,
                      cluster_spread: float, seed) -> Dataset:
    """Build K Gaussian clusters with a deterministic per-class split.

    Per class: half of the samples go to train, one to query, the rest to
    gallery.  Class means are seeded and pairwise separated by at least
    4 * cluster_spread (8x is targeted, so a nearest-centroid classifier
    is nearly perfect on the train split).  When the feature space can
    host one, the means form a randomly rotated regular simplex, whose
    symmetric geometry keeps class mixtures nearer their sources than any
    third class; otherwise means fall back to box rejection sampling.
    """
    if n_classes < 2:
        raise InvalidConfig("need at least 2 classes")
    if n_per_class < 4:
        raise InvalidConfig("need at least 4 samples per class (train/query/gallery split)")
    if dim < 2:
        raise InvalidConfig("feature dimension must be >= 2")
    if cluster_spread < 0:
        raise InvalidConfig("cluster_spread must be >= 0")

    rng = np.random.default_rng(seed)
    separation = MEAN_SEPARATION_FACTOR * cluster_spread
    if n_classes <= dim:
        means = _simplex_means(n_classes, dim, max(1.0, separation), rng)
    else:
        means = _place_class_means(n_classes, dim, separation, rng)
    if n_classes > 1:
        diffs = means[:, None, :] - means[None, :, :]
        dists = np.linalg.norm(diffs, axis=-1)
        np.fill_diagonal(dists, np.inf)
        if np.min(dists) < MIN_SEPARATION_FACTOR * cluster_spread:
            raise GenerationFailure("class mean separation guarantee violated")

    samples = []
    next_id = 0
    n_train = n_per_class // 2
    for c in range(1, n_classes + 1):
        feats = means[c - 1] + cluster_spread * rng.standard_normal((n_per_class, dim))
        for j in range(n_per_class):
            if j < n_train:
                tag = "train"
            elif j == n_train:
                tag = "query"
            else:
                tag = "gallery"
            samples.append(Sample(next_id, feats[j], "real", c, tag))
            next_id += 1
    return Dataset(samples, n_classes, dim)


def convex_mix(features: np.ndarray, weights) -> np.ndarray:
    """Convex combination of the rows of ``features``."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or features.shape[0] != w.size:
        raise InvalidDimension("need one weight per feature row")
    if np.any(w < 0) or abs(float(np.sum(w)) - 1.0) > 1e-9:
        raise InvalidConfig("weights must be nonnegative and sum to 1")
    return w @ features


def make_generated_dataset(real: Dataset, m: int, mix_size: int, noise: float,
                           seed) -> Dataset:
    """Build m unlabeled samples, each a noisy convex mixture of train samples.

    Every sample mixes one train sample from each of ``mix_size`` distinct
    classes.  Weights come from a Dirichlet(1) simplex draw shrunk toward
    uniform, so every source class keeps a substantial share; the noise is
    Gaussian clipped at 3 standard deviations, so samples provably stay
    inside the source hull expanded by 3*noise per coordinate.  The source
    classes and weights go into ``Dataset.provenance`` for diagnostics
    only.
    """
    if m < 1:
        raise InvalidConfig("need at least one generated sample")
    if not 2 <= mix_size <= real.n_classes:
        raise InvalidConfig(f"mix_size must be in 2..{real.n_classes}")
    train = real.split("train")
    if not train:
        raise GenerationFailure("real dataset has no train split to mix from")

    by_class: dict[int, list[Sample]] = {}
    for s in train:
        by_class.setdefault(s.class_label, []).append(s)
    if len(by_class) < mix_size:
        raise GenerationFailure(
            f"only {len(by_class)} classes have train samples, need {mix_size}"
        )
    class_ids = sorted(by_class)

    rng = np.random.default_rng(seed)
    next_id = max(s.id for s in real.samples) + 1
    samples = []
    provenance: dict[int, MixRecord] = {}
    for _ in range(m):
        chosen = rng.choice(len(class_ids), size=mix_size, replace=False)
        sources = [by_class[class_ids[idx]][rng.integers(len(by_class[class_ids[idx]]))]
                   for idx in chosen]
        raw = rng.dirichlet(np.ones(mix_size))
        weights = (1.0 - WEIGHT_SHRINK) * raw + WEIGHT_SHRINK / mix_size
        feats = convex_mix(np.stack([s.features for s in sources]), weights)
        if noise > 0:
            feats = feats + noise * np.clip(rng.standard_normal(real.feature_dim), -3.0, 3.0)
        samples.append(Sample(next_id, feats, "generated", None, "train"))
        provenance[next_id] = MixRecord(
            tuple(s.id for s in sources),
            tuple(s.class_label for s in sources),
            weights,
        )
        next_id += 1
    return Dataset(samples, real.n_classes, real.feature_dim, provenance)


def save_dataset(dataset: Dataset, path) -> None:
    """Write the plain-text dataset format described in the module docstring."""
    lines = [f"{dataset.n_classes} {dataset.feature_dim} {len(dataset.samples)}"]
    for s in dataset.samples:
        label = s.class_label if s.class_label is not None else -1
        feats = " ".join(f"{v:.17g}" for v in s.features)
        lines.append(f"{s.id} {s.split} {s.origin} {label} {feats}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path) -> Dataset:
    """Read a dataset file back; feature values round-trip bit-exactly."""
    text = Path(path).read_text()
    rows = [line for line in text.splitlines() if line.strip()]
    if not rows:
        raise InvalidState(f"{path}: empty dataset file")
    header = rows[0].split()
    if len(header) != 3:
        raise InvalidState(f"{path}: header must be 'K dim n_samples'")
    n_classes, dim, count = (int(v) for v in header)
    if len(rows) - 1 != count:
        raise InvalidState(f"{path}: header says {count} samples, file has {len(rows) - 1}")
    samples = []
    for line_no, row in enumerate(rows[1:], start=2):
        parts = row.split()
        if len(parts) != 4 + dim:
            raise InvalidState(f"{path}:{line_no}: expected {4 + dim} fields, got {len(parts)}")
        sid, split_tag, origin, label = parts[0], parts[1], parts[2], int(parts[3])
        if split_tag not in SPLIT_TAGS:
            raise InvalidState(f"{path}:{line_no}: unknown split tag {split_tag!r}")
        feats = np.array([float(v) for v in parts[4:]], dtype=np.float64)
        samples.append(Sample(int(sid), feats, origin, None if label == -1 else label, split_tag))
    return Dataset(samples, n_classes, dim)
