"""Retrieval evaluation: squared-Euclidean ranking, CMC and mAP.

Per query, gallery items are sorted by ascending distance with ties
broken by gallery index.  AP averages precision at each relevant rank
(no interpolation); CMC[k] is the fraction of queries with a relevant
item somewhere in the top k+1.

Embedding file format (plain text): header ``n dim``, then one row per
item: ``id label v1 ... vdim`` with 17-significant-digit floats.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidDimension, InvalidState, ProtocolViolation


@dataclass
class EmbeddingSet:
    ids: np.ndarray
    labels: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        n = self.ids.size
        if self.labels.size != n or self.vectors.ndim != 2 or self.vectors.shape[0] != n:
            raise InvalidDimension("ids, labels and vectors must agree on the item count")
        if n == 0:
            raise InvalidDimension("embedding set must be non-empty")
        if np.unique(self.ids).size != n:
            raise InvalidDimension("embedding ids must be unique")
        if not np.all(np.isfinite(self.vectors)):
            raise InvalidDimension("embedding vectors must be finite")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass
class EvalReport:
    rank1: float
    mean_ap: float
    cmc_curve: np.ndarray

    def __post_init__(self):
        self.cmc_curve = np.asarray(self.cmc_curve, dtype=np.float64)
        assert self.cmc_curve.ndim == 1 and self.cmc_curve.size >= 1
        assert self.cmc_curve[0] == self.rank1
        assert np.all(np.diff(self.cmc_curve) >= 0.0), "CMC must be nondecreasing"
        assert 0.0 <= self.rank1 <= 1.0 and 0.0 <= self.mean_ap <= 1.0
        assert self.cmc_curve[-1] <= 1.0 + 1e-12


def pairwise_sq_euclidean(queries: EmbeddingSet, gallery: EmbeddingSet) -> np.ndarray:
    """D[i][j] = squared Euclidean distance between query i and gallery j."""
    if queries.dim != gallery.dim:
        raise InvalidDimension(
            f"query dim {queries.dim} differs from gallery dim {gallery.dim}"
        )
    diff = queries.vectors[:, None, :] - gallery.vectors[None, :, :]
    return np.sum(diff * diff, axis=-1)


def evaluate(distances, query_labels, gallery_labels) -> EvalReport:
    """Score a distance matrix: mAP, rank-1 and the full CMC curve.

    Every query class must occur in the gallery.  AP per query is the
    mean of (number of relevant items in the top r) / r over the ranks r
    where a relevant item sits.
    """
    dist = np.asarray(distances, dtype=np.float64)
    q_labels = np.asarray(query_labels, dtype=np.int64)
    g_labels = np.asarray(gallery_labels, dtype=np.int64)
    if dist.ndim != 2 or dist.shape != (q_labels.size, g_labels.size):
        raise InvalidDimension(
            f"distance matrix {dist.shape} does not match {q_labels.size} queries "
            f"x {g_labels.size} gallery items"
        )
    missing = sorted(set(q_labels.tolist()) - set(g_labels.tolist()))
    if missing:
        raise ProtocolViolation(f"query classes absent from gallery: {missing}")

    n_q, n_g = dist.shape
    first_hit = np.zeros(n_g, dtype=np.int64)
    aps = np.empty(n_q)
    for i in range(n_q):
        order = np.argsort(dist[i], kind="stable")  # ties resolve by gallery index
        relevant = g_labels[order] == q_labels[i]
        positions = np.flatnonzero(relevant) + 1  # 1-based ranks of relevant items
        first_hit[positions[0] - 1] += 1
        precisions = np.arange(1, positions.size + 1) / positions
        aps[i] = float(np.mean(precisions))

    cmc = np.cumsum(first_hit) / n_q
    return EvalReport(rank1=float(cmc[0]), mean_ap=float(np.mean(aps)), cmc_curve=cmc)


def report_to_json(report: EvalReport) -> str:
    """Serialize with exactly six decimal places per value."""
    cmc = ", ".join(f"{v:.6f}" for v in report.cmc_curve)
    return (
        f'{{"rank1": {report.rank1:.6f}, "mAP": {report.mean_ap:.6f}, "cmc": [{cmc}]}}\n'
    )


def save_report(report: EvalReport, path) -> None:
    Path(path).write_text(report_to_json(report))


def save_embeddings(embeddings: EmbeddingSet, path) -> None:
    lines = [f"{embeddings.ids.size} {embeddings.dim}"]
    for i in range(embeddings.ids.size):
        feats = " ".join(f"{v:.17g}" for v in embeddings.vectors[i])
        lines.append(f"{embeddings.ids[i]} {embeddings.labels[i]} {feats}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_embeddings(path) -> EmbeddingSet:
    rows = [line for line in Path(path).read_text().splitlines() if line.strip()]
    if not rows:
        raise InvalidState(f"{path}: empty embedding file")
    header = rows[0].split()
    if len(header) != 2:
        raise InvalidState(f"{path}: header must be 'n dim'")
    n, dim = int(header[0]), int(header[1])
    if len(rows) - 1 != n:
        raise InvalidState(f"{path}: header says {n} rows, file has {len(rows) - 1}")
    ids = np.empty(n, dtype=np.int64)
    labels = np.empty(n, dtype=np.int64)
    vectors = np.empty((n, dim))
    for i, row in enumerate(rows[1:]):
        parts = row.split()
        if len(parts) != 2 + dim:
            raise InvalidState(f"{path}: row {i + 2} has {len(parts)} fields, expected {2 + dim}")
        ids[i] = int(parts[0])
        labels[i] = int(parts[1])
        vectors[i] = [float(v) for v in parts[2:]]
    return EmbeddingSet(ids, labels, vectors)
