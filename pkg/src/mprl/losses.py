"""Forward losses and backward gradients for real and generated samples.

Real samples use plain softmax cross-entropy.  Generated samples use a
weighted cross-entropy against their virtual label; for multi-pseudo
(rank-weighted) labels the weight mass is normalized by 2/(1+K) and
scaled by a trade-off factor between generated- and real-sample loss.

Two gradient modes exist for the rank-weighted generated loss:

* ANALYTIC: the true derivative of the forward value with the rank
  weights held fixed (they are piecewise constant in the logits, so no
  gradient flows through the ranking).
* DIAGONAL: keeps only the diagonal of the log-softmax Jacobian, i.e.
  treats each log-probability as a function of its own logit alone.  It
  is *not* the derivative of the forward value; every entry is strictly
  negative.  Provided for fidelity comparisons, selectable but never the
  default.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import InvalidClass, InvalidConfig, InvalidDimension
from .labels import (
    LabelScheme,
    RankWeights,
    VirtualLabel,
    check_logits,
    rank_weight_normalizer,
    softmax,
)


class GradientMode(str, Enum):
    ANALYTIC = "analytic"
    DIAGONAL = "diagonal"


@dataclass(frozen=True)
class LossConfig:
    """Loss hyperparameters.

    ``gen_weight`` trades off generated-sample loss against real-sample
    loss (1.0 unless a training schedule says otherwise).  ``rank_norm``
    is always recomputed from the class count, never stored.
    """

    n_classes: int
    gen_weight: float = 1.0
    gradient_mode: GradientMode = GradientMode.ANALYTIC

    def __post_init__(self):
        if self.n_classes < 1:
            raise InvalidConfig("n_classes must be >= 1")
        if not (np.isfinite(self.gen_weight) and self.gen_weight >= 0.0):
            raise InvalidConfig("gen_weight must be finite and >= 0")

    @property
    def rank_norm(self) -> float:
        """Normalizer 2/(1+K): scales the rank-weight mass (K+1)/2 to 1."""
        return rank_weight_normalizer(self.n_classes)


@dataclass(frozen=True)
class LossOutput:
    value: float
    grad_logits: np.ndarray


def log_sum_exp(logits: np.ndarray) -> float:
    """Stable log(sum(exp(x))) via max shift."""
    m = float(np.max(logits))
    return m + float(np.log(np.sum(np.exp(logits - m))))


def _neg_log_probs(x: np.ndarray) -> np.ndarray:
    """-log softmax(x), computed shift-first so every intermediate is
    O(spread + log K) rather than O(|x|)."""
    z = x - np.max(x)
    return float(np.log(np.sum(np.exp(z)))) - z


def real_ce_loss(logits, class_index: int) -> LossOutput:
    """Softmax cross-entropy for a real sample.

    ``class_index`` is the 0-based position of the ground-truth class.
    Value: -log p_c = log sum_j exp(x_j - x_c); gradient: p - onehot(c).
    The value goes through log1p when the target class dominates, so it
    stays accurate (and strictly positive) even at huge margins where
    the naive -x_c + logsumexp form cancels to zero.
    """
    x = check_logits(logits)
    if not 0 <= class_index < x.size:
        raise InvalidClass(f"class index {class_index} outside 0..{x.size - 1}")
    z = x - x[class_index]
    m = float(np.max(z))
    if m == 0.0:
        others = np.exp(np.delete(z, class_index))
        value = float(np.log1p(np.sum(others)))
    else:
        value = m + float(np.log(np.sum(np.exp(z - m))))
    grad = softmax(x)
    grad[class_index] -= 1.0
    return LossOutput(value, grad)


def lsro_loss(logits) -> LossOutput:
    """Cross-entropy against the uniform 1/K target.

    Value: -(1/K) sum_k log p_k; gradient: p - 1/K, which sums to zero.
    """
    x = check_logits(logits)
    k = x.size
    value = float(np.sum(_neg_log_probs(x))) / k
    grad = softmax(x) - 1.0 / k
    return LossOutput(value, grad)


def mprl_generated_loss(logits, alpha: RankWeights, cfg: LossConfig) -> LossOutput:
    """Rank-weighted cross-entropy for a generated sample.

    Value: -gen_weight * rank_norm * sum_k (rank_k / K) * log p_k.  The
    gradient follows ``cfg.gradient_mode``; rank weights are constants
    during differentiation.
    """
    x = check_logits(logits)
    if alpha.n_classes != x.size or x.size != cfg.n_classes:
        raise InvalidDimension(
            f"logits ({x.size}), ranks ({alpha.n_classes}) and config "
            f"({cfg.n_classes}) disagree on the class count"
        )
    w = alpha.ranks / cfg.n_classes
    scale = cfg.gen_weight * cfg.rank_norm
    value = scale * float(np.sum(w * _neg_log_probs(x)))
    p = softmax(x)
    if cfg.gradient_mode is GradientMode.ANALYTIC:
        grad = scale * (float(np.sum(w)) * p - w)
    else:
        grad = -scale * w * (1.0 - p)
    return LossOutput(value, grad)


@dataclass(frozen=True)
class CombinedLoss:
    """Aggregate loss over one mini-batch with per-sample gradients.

    ``real_loss`` is the mean cross-entropy over real items; ``gen_loss``
    the mean virtual-label loss over generated items *before* the
    gen_weight factor (so it is 0.0 when the epoch gate is closed).
    ``value`` = real_loss + gen_weight * gen_loss.  Row i of
    ``grad_logits`` is d(value)/d(logits of item i), so the mean
    reduction and gen_weight are already folded in.
    """

    value: float
    real_loss: float
    gen_loss: float
    n_real: int
    n_generated: int
    grad_logits: np.ndarray


def _generated_item_loss(x: np.ndarray, label: VirtualLabel, cfg: LossConfig) -> LossOutput:
    """Virtual-label loss for one generated item, before the gen_weight factor.

    Rank-weighted (MPRL) labels get the 2/(1+K) normalizer here; every
    other scheme's weights already sum to 1.  The diagonal gradient mode
    applies only to rank-weighted labels.
    """
    w = label.weights
    diagonal = False
    if label.scheme is LabelScheme.MPRL:
        if w.size != cfg.n_classes:
            raise InvalidDimension(
                f"rank-weighted label has {w.size} classes, config says {cfg.n_classes}"
            )
        w = cfg.rank_norm * w
        diagonal = cfg.gradient_mode is GradientMode.DIAGONAL
    value = float(np.sum(w * _neg_log_probs(x)))
    p = softmax(x)
    if diagonal:
        grad = -w * (1.0 - p)
    else:
        grad = float(np.sum(w)) * p - w
    return LossOutput(value, grad)


def combined_loss(
    items: Sequence[tuple[np.ndarray, VirtualLabel, bool]],
    cfg: LossConfig,
    gate_active: bool = True,
) -> CombinedLoss:
    """Mini-batch loss over (logits, label, is_generated) triples.

    Real items must carry GROUND_TRUTH labels and generated items a
    virtual-label scheme.  Reduction is per-origin mean, then
    value = mean(real) + gen_weight * mean(generated), so the trade-off
    factor keeps its meaning regardless of batch composition.  When
    ``gate_active`` is False, generated items contribute exactly zero
    loss and gradient (gradient rows are hard zeros).
    """
    if len(items) == 0:
        raise InvalidDimension("batch must contain at least one item")
    width = check_logits(items[0][0]).size
    n_real = sum(1 for _, _, gen in items if not gen)
    n_generated = len(items) - n_real

    grad_rows = np.zeros((len(items), width))
    real_sum = 0.0
    gen_sum = 0.0
    for i, (logits, label, is_generated) in enumerate(items):
        x = check_logits(logits)
        if x.size != width or label.weights.size != width:
            raise InvalidDimension(
                f"item {i}: logits ({x.size}) or label ({label.weights.size}) "
                f"width differs from the batch width {width}"
            )
        if is_generated:
            if label.scheme is LabelScheme.GROUND_TRUTH:
                raise InvalidClass(f"item {i}: generated item carries a ground-truth label")
            if not gate_active:
                continue
            out = _generated_item_loss(x, label, cfg)
            gen_sum += out.value
            grad_rows[i] = (cfg.gen_weight / n_generated) * out.grad_logits
        else:
            if label.scheme is not LabelScheme.GROUND_TRUTH or label.source_class is None:
                raise InvalidClass(f"item {i}: real item must carry a ground-truth label")
            out = real_ce_loss(x, label.source_class - 1)
            real_sum += out.value
            grad_rows[i] = out.grad_logits / n_real

    real_loss = real_sum / n_real if n_real else 0.0
    gen_loss = gen_sum / n_generated if (n_generated and gate_active) else 0.0
    value = real_loss + cfg.gen_weight * gen_loss
    return CombinedLoss(value, real_loss, gen_loss, n_real, n_generated, grad_rows)
