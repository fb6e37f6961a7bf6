"""Virtual-label construction for unlabeled generated samples.

A softmax classifier over K pre-defined training classes induces several
ways to label a sample that has no ground-truth class:

* ``all_in_one_label``: a single extra class K+1 shared by every
  generated sample (the classifier head widens to K+1).
* ``one_hot_pseudo_label``: one-hot at the argmax predicted class,
  recomputed each time the sample is visited.
* ``lsro_label``: the uniform distribution 1/K over all pre-defined
  classes, identical for every generated sample.
* ``mprl_label``: a multi-pseudo label whose per-class weight is the rank
  of that class's predicted probability divided by K.  Every class keeps
  a nonzero weight, and with distinct probabilities the gap between
  consecutive sorted weights is exactly 1/K.

Class identities are 1-based throughout this package: class ``c`` lives
at vector position ``c - 1``.  Weight vectors are plain float arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InvalidDimension

PROB_SUM_TOL = 1e-9


class TiePolicy(str, Enum):
    """How equal predicted probabilities share rank positions.

    COMPETITION_ORDER breaks ties by input position (stable sort), so the
    ranks are always a permutation of 1..K.  AVERAGE_RANK gives tied
    entries the mean of the positions they jointly occupy, which makes a
    uniform probability vector reduce exactly to the LSRO label.
    """

    COMPETITION_ORDER = "competition_order"
    AVERAGE_RANK = "average_rank"


class LabelScheme(str, Enum):
    GROUND_TRUTH = "ground_truth"
    ALL_IN_ONE = "all_in_one"
    ONE_HOT_PSEUDO = "one_hot_pseudo"
    LSRO = "lsro"
    MPRL = "mprl"


@dataclass(frozen=True)
class RankWeights:
    """Per-class rank weights for one generated sample.

    ``ranks[k]`` is the 1-based position of class k+1's predicted
    probability in the ascending sort of all K probabilities: the least
    likely class gets 1, the most likely gets K.  Under either tie policy
    the ranks sum to K(K+1)/2 exactly.
    """

    ranks: np.ndarray
    tie_policy: TiePolicy

    def __post_init__(self):
        ranks = np.asarray(self.ranks, dtype=np.float64)
        if ranks.ndim != 1 or ranks.size == 0:
            raise InvalidDimension("ranks must be a non-empty 1-d vector")
        object.__setattr__(self, "ranks", ranks)

    @property
    def n_classes(self) -> int:
        return self.ranks.size


@dataclass(frozen=True)
class VirtualLabel:
    """A training target: a weight per class plus the scheme that built it.

    ``weights`` has length K, or K+1 for ALL_IN_ONE.  ``source_class`` is
    the 1-based class singled out by one-hot schemes (None otherwise).
    """

    scheme: LabelScheme
    weights: np.ndarray
    source_class: int | None = None

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        if weights.ndim != 1 or weights.size == 0:
            raise InvalidDimension("label weights must be a non-empty 1-d vector")
        object.__setattr__(self, "weights", weights)


def check_logits(logits) -> np.ndarray:
    """Validate and return logits as a float64 vector."""
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise InvalidDimension(f"logits must be a non-empty 1-d vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidDimension("logits must be finite")
    return x


def check_prob_vector(p) -> np.ndarray:
    """Validate a probability vector: strictly positive, summing to 1."""
    q = np.asarray(p, dtype=np.float64)
    if q.ndim != 1 or q.size == 0:
        raise InvalidDimension(f"probability vector must be non-empty 1-d, got shape {q.shape}")
    if not np.all(np.isfinite(q)) or np.any(q <= 0.0):
        raise InvalidDimension("probabilities must be finite and strictly positive")
    total = float(np.sum(q))
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise InvalidDimension(f"probabilities must sum to 1 (got {total!r})")
    return q


def softmax(logits) -> np.ndarray:
    """Stable softmax: shifts by the max before exponentiating.

    Order-preserving, so the ranking of the outputs equals the ranking of
    the inputs, and invariant under adding a constant to every logit.
    """
    x = check_logits(logits)
    shifted = x - np.max(x)
    e = np.exp(shifted)
    return e / np.sum(e)


def rank_weight_normalizer(n_classes: int) -> float:
    """Factor 2/(1+K) that scales the total rank-weight mass K(K+1)/(2K) to 1."""
    if n_classes < 1:
        raise InvalidDimension("class count must be >= 1")
    return 2.0 / (1.0 + n_classes)


def lsro_label(n_classes: int) -> VirtualLabel:
    """Uniform virtual label 1/K over all pre-defined classes."""
    if n_classes < 1:
        raise InvalidDimension("class count must be >= 1")
    weights = np.full(n_classes, 1.0 / n_classes)
    return VirtualLabel(LabelScheme.LSRO, weights)


def all_in_one_label(n_classes: int) -> VirtualLabel:
    """One-hot virtual label at the extra class K+1 (vector length K+1)."""
    if n_classes < 1:
        raise InvalidDimension("class count must be >= 1")
    weights = np.zeros(n_classes + 1)
    weights[n_classes] = 1.0
    return VirtualLabel(LabelScheme.ALL_IN_ONE, weights, source_class=n_classes + 1)


def ground_truth_label(class_id: int, width: int) -> VirtualLabel:
    """One-hot label for a real sample of class ``class_id`` (1-based).

    ``width`` is the classifier head width: K, or K+1 when an extra
    generated-data class is in use.
    """
    if width < 1:
        raise InvalidDimension("label width must be >= 1")
    if not 1 <= class_id <= width:
        raise InvalidDimension(f"class {class_id} outside 1..{width}")
    weights = np.zeros(width)
    weights[class_id - 1] = 1.0
    return VirtualLabel(LabelScheme.GROUND_TRUTH, weights, source_class=class_id)


def one_hot_pseudo_label(probs) -> VirtualLabel:
    """One-hot virtual label at the argmax class; ties go to the lowest index."""
    p = check_prob_vector(probs)
    idx = int(np.argmax(p))
    weights = np.zeros(p.size)
    weights[idx] = 1.0
    return VirtualLabel(LabelScheme.ONE_HOT_PSEUDO, weights, source_class=idx + 1)


def mprl_alpha(probs, tie_policy: TiePolicy = TiePolicy.AVERAGE_RANK) -> RankWeights:
    """Rank each class's predicted probability, ascending.

    The smallest probability ranks 1 and the largest ranks K.  Ties (exact
    float equality) are resolved by ``tie_policy``; see :class:`TiePolicy`.
    """
    p = check_prob_vector(probs)
    k = p.size
    order = np.argsort(p, kind="stable")
    ranks = np.empty(k, dtype=np.float64)
    ranks[order] = np.arange(1, k + 1, dtype=np.float64)
    if tie_policy is TiePolicy.AVERAGE_RANK:
        sorted_p = p[order]
        # run boundaries of exactly-equal values in sorted order
        bounds = np.flatnonzero(np.r_[True, sorted_p[1:] != sorted_p[:-1], True])
        for start, end in zip(bounds[:-1], bounds[1:]):
            if end - start > 1:
                # mean of the occupied 1-based positions start+1 .. end
                ranks[order[start:end]] = (start + 1 + end) / 2.0
    return RankWeights(ranks, tie_policy)


def mprl_label(alpha: RankWeights, n_classes: int) -> VirtualLabel:
    """Multi-pseudo label with per-class weight rank/K.

    The weights are deliberately unnormalized (their mass is (K+1)/2);
    the loss applies the 2/(1+K) normalizer, see
    :func:`mprl.losses.mprl_generated_loss`.
    """
    if alpha.n_classes != n_classes:
        raise InvalidDimension(
            f"rank vector has {alpha.n_classes} entries, expected {n_classes}"
        )
    return VirtualLabel(LabelScheme.MPRL, alpha.ranks / n_classes)
