"""Training strategies over merged real + generated data.

Seven strategies cover a real-only baseline, three comparison virtual
labels (all-in-one extra class, one-hot pseudo, uniform LSRO) and the
three rank-weighted multi-pseudo variants:

* ``smprl``: labels assigned once by a pretrained model, frozen.
* ``dmprl1``: labels recomputed from the current forward pass at every
  visit, starting from the very first iteration (which uses random rank
  permutations, since the untrained model offers no signal).
* ``dmprl2``: like dmprl1 but generated samples contribute no gradient
  until a warm-up epoch is reached, and the generated-side loss weight
  defaults to 0.1.

Each epoch shuffles the merged sample list with an epoch-seeded RNG, so
identical configs reproduce identical parameter trajectories bit for
bit.  Epoch indices are 1-based; the warm-up gate opens at
``epoch >= warmup_epoch``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import InvalidConfig, InvalidDimension, NotRecorded
from .labels import (
    RankWeights,
    TiePolicy,
    VirtualLabel,
    all_in_one_label,
    ground_truth_label,
    lsro_label,
    mprl_alpha,
    mprl_label,
    one_hot_pseudo_label,
    softmax,
)
from .losses import CombinedLoss, GradientMode, LossConfig, combined_loss
from .net import (
    Activation,
    ModelParams,
    backward,
    forward,
    init_optimizer,
    init_params,
    sgd_step,
)
from .retrieval import EmbeddingSet
from .synthgen import Dataset, Sample


class Strategy(str, Enum):
    BASELINE = "baseline"
    ALL_IN_ONE = "all_in_one"
    ONE_HOT_PSEUDO = "one_hot_pseudo"
    LSRO = "lsro"
    SMPRL = "smprl"
    DMPRL1 = "dmprl1"
    DMPRL2 = "dmprl2"


GENERATED_AWARE = frozenset(Strategy) - {Strategy.BASELINE}

# sub-stream tags for deriving per-purpose RNG seeds from the run seed
_SEED_INIT = 0
_SEED_SHUFFLE = 1
_SEED_DROPOUT = 2
_SEED_FIRST_ITER = 3


@dataclass(frozen=True)
class TrainConfig:
    strategy: Strategy
    epochs: int = 50
    batch_size: int = 64
    lr_initial: float = 0.1
    lr_after_decay: float = 0.01
    decay_epoch: int = 40
    momentum: float = 0.9
    # trade-off between generated- and real-sample loss; None resolves to
    # 0.1 for dmprl2 and 1.0 for every other strategy
    gen_weight: float | None = None
    warmup_epoch: int = 20
    tie_policy: TiePolicy = TiePolicy.AVERAGE_RANK
    gradient_mode: GradientMode = GradientMode.ANALYTIC
    dropout_rate: float = 0.5
    hidden_sizes: tuple[int, ...] = (32, 16)
    init_scale: float = 1.0
    activation: Activation = Activation.RELU
    seed: int = 0
    # number of generated samples (lowest ids first) whose argmax class is
    # recorded each epoch; 0 disables trajectory logging
    track_trajectories: int = 0

    def resolved_gen_weight(self) -> float:
        if self.gen_weight is not None:
            return self.gen_weight
        return 0.1 if self.strategy is Strategy.DMPRL2 else 1.0

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidConfig("epochs and batch_size must be >= 1")
        if self.lr_initial <= 0 or self.lr_after_decay <= 0:
            raise InvalidConfig("learning rates must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidConfig("momentum must be in [0, 1)")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidConfig("dropout_rate must be in [0, 1)")
        if self.track_trajectories < 0:
            raise InvalidConfig("track_trajectories must be >= 0")
        if self.strategy is Strategy.DMPRL2 and not self.warmup_epoch < self.epochs:
            raise InvalidConfig(
                f"warmup_epoch ({self.warmup_epoch}) must be < epochs ({self.epochs}) "
                "or the warm-up gate never opens"
            )
        if self.strategy in GENERATED_AWARE and self.resolved_gen_weight() <= 0:
            raise InvalidConfig("generated-aware strategies need gen_weight > 0")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    real_loss: float  # l1: mean cross-entropy over real visits
    gen_loss: float  # l2: mean generated-label loss, before gen_weight
    combined: float  # l1 + gen_weight * l2
    train_acc: float
    lr: float
    gen_grad_norm: float  # accumulated norm of generated-side logit grads


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    tracked_ids: tuple[int, ...] = ()
    trajectories: dict[int, list[int]] = field(default_factory=dict)
    trajectory_enabled: bool = False

    def to_csv(self, path) -> None:
        lines = ["epoch,l1,l2,combined,train_acc,lr"]
        for r in self.records:
            lines.append(
                f"{r.epoch},{r.real_loss:.17g},{r.gen_loss:.17g},"
                f"{r.combined:.17g},{r.train_acc:.17g},{r.lr:.17g}"
            )
        Path(path).write_text("\n".join(lines) + "\n")

    def trajectory_csv(self, path) -> None:
        lines = ["sample_id,epoch,argmax_class"]
        for sid, series in log_label_trajectory(self).items():
            for epoch, cls in enumerate(series, start=1):
                lines.append(f"{sid},{epoch},{cls}")
        Path(path).write_text("\n".join(lines) + "\n")


def log_label_trajectory(history: TrainHistory) -> dict[int, list[int]]:
    """Per tracked generated sample: the argmax pre-defined class per epoch."""
    if not history.trajectory_enabled:
        raise NotRecorded("trajectory logging was not enabled in the train config")
    return history.trajectories


def epoch_shuffle_order(seed: int, epoch: int, n: int) -> np.ndarray:
    """Deterministic visit order for one epoch: a permutation of range(n)."""
    return np.random.default_rng((seed, _SEED_SHUFFLE, epoch)).permutation(n)


def _check_datasets(real: Dataset, generated: Dataset | None) -> None:
    if real.n_classes < 1 or not real.split("train"):
        raise InvalidConfig("real dataset needs classes and a train split")
    train_classes = {s.class_label for s in real.split("train")}
    if train_classes != set(range(1, real.n_classes + 1)):
        raise InvalidConfig("every class needs at least one train sample")
    if generated is not None and generated.samples:
        if generated.feature_dim != real.feature_dim:
            raise InvalidDimension(
                f"generated feature dim {generated.feature_dim} differs "
                f"from real {real.feature_dim}"
            )
        if any(s.origin != "generated" for s in generated.samples):
            raise InvalidConfig("generated dataset contains non-generated samples")


def _random_rank_label(n_classes: int, tie_policy: TiePolicy, rng) -> VirtualLabel:
    ranks = rng.permutation(n_classes).astype(np.float64) + 1.0
    return mprl_label(RankWeights(ranks, tie_policy), n_classes)


def train(
    real: Dataset,
    generated: Dataset | None,
    cfg: TrainConfig,
    static_labels: dict[int, VirtualLabel] | None = None,
    initial_params: ModelParams | None = None,
) -> tuple[ModelParams, TrainHistory]:
    """Run one training schedule and return final params plus history.

    ``static_labels`` (from :func:`assign_static_labels`) is required for
    the smprl strategy and ignored otherwise.  ``initial_params`` lets a
    pretrained checkpoint seed the run; by default parameters are
    initialized from the config seed.  All validation happens before the
    first epoch.
    """
    cfg.validate()
    _check_datasets(real, generated)
    n_classes = real.n_classes
    head_width = n_classes + 1 if cfg.strategy is Strategy.ALL_IN_ONE else n_classes

    real_train = real.split("train")
    gen_train = list(generated.samples) if (
        generated is not None and cfg.strategy is not Strategy.BASELINE
    ) else []
    if cfg.strategy is Strategy.SMPRL:
        if static_labels is None:
            raise InvalidConfig("smprl needs static_labels from assign_static_labels")
        missing = [s.id for s in gen_train if s.id not in static_labels]
        if missing:
            raise InvalidConfig(f"static_labels missing for generated ids {missing[:5]}...")

    layer_sizes = (real.feature_dim, *cfg.hidden_sizes, head_width)
    params = initial_params if initial_params is not None else init_params(
        layer_sizes, seed=(cfg.seed, _SEED_INIT), scale=cfg.init_scale,
        activation=cfg.activation,
    )
    if params.layer_sizes != layer_sizes:
        raise InvalidDimension(
            f"initial params have layer sizes {params.layer_sizes}, expected {layer_sizes}"
        )
    opt = init_optimizer(params, cfg.lr_initial, cfg.momentum)
    loss_cfg = LossConfig(n_classes, cfg.resolved_gen_weight(), cfg.gradient_mode)

    # tracked trajectory samples: lowest generated ids first, clipped
    all_generated = list(generated.samples) if generated is not None else []
    tracked_samples = sorted(all_generated, key=lambda s: s.id)[: cfg.track_trajectories]
    tracked = tuple(s.id for s in tracked_samples)
    history = TrainHistory(
        tracked_ids=tracked,
        trajectories={sid: [] for sid in tracked},
        trajectory_enabled=cfg.track_trajectories > 0,
    )

    merged: list[Sample] = list(real_train) + gen_train
    constant_label = None
    if cfg.strategy is Strategy.ALL_IN_ONE:
        constant_label = all_in_one_label(n_classes)
    elif cfg.strategy is Strategy.LSRO:
        constant_label = lsro_label(n_classes)

    real_train_feats = real.feature_matrix(real_train)
    real_train_classes = np.array([s.class_label for s in real_train])
    first_iter_rng = np.random.default_rng((cfg.seed, _SEED_FIRST_ITER))

    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.lr_initial if epoch <= cfg.decay_epoch else cfg.lr_after_decay
        opt.learning_rate = lr
        gate = epoch >= cfg.warmup_epoch if cfg.strategy is Strategy.DMPRL2 else True
        order = epoch_shuffle_order(cfg.seed, epoch, len(merged))

        real_sum = real_count = 0.0
        gen_sum = gen_count = 0.0
        gen_grad_norm = 0.0
        n_batches = math.ceil(len(order) / cfg.batch_size)
        for batch_idx in range(n_batches):
            batch = [merged[j] for j in
                     order[batch_idx * cfg.batch_size:(batch_idx + 1) * cfg.batch_size]]
            feats = np.stack([s.features for s in batch])
            logits, cache, _ = forward(
                params, feats, cfg.dropout_rate,
                dropout_seed=(cfg.seed, _SEED_DROPOUT, epoch, batch_idx),
                train_mode=True,
            )
            first_iteration = epoch == 1 and batch_idx == 0
            items = []
            for row, sample in enumerate(batch):
                if sample.origin == "real":
                    label = ground_truth_label(sample.class_label, head_width)
                    items.append((logits[row], label, False))
                    continue
                if not gate:
                    # placeholder; zeroed out by the gate inside combined_loss
                    label = lsro_label(n_classes)
                elif constant_label is not None:
                    label = constant_label
                elif cfg.strategy is Strategy.ONE_HOT_PSEUDO:
                    label = one_hot_pseudo_label(softmax(logits[row]))
                elif cfg.strategy is Strategy.SMPRL:
                    label = static_labels[sample.id]
                elif first_iteration and cfg.strategy is Strategy.DMPRL1:
                    label = _random_rank_label(n_classes, cfg.tie_policy, first_iter_rng)
                else:  # dmprl1 after the first iteration, dmprl2 past warm-up
                    alpha = mprl_alpha(softmax(logits[row]), cfg.tie_policy)
                    label = mprl_label(alpha, n_classes)
                items.append((logits[row], label, True))

            out: CombinedLoss = combined_loss(items, loss_cfg, gate_active=gate)
            grads = backward(params, cache, out.grad_logits)
            params = sgd_step(params, grads, opt)

            real_sum += out.real_loss * out.n_real
            real_count += out.n_real
            gen_sum += out.gen_loss * out.n_generated
            gen_count += out.n_generated
            gen_rows = [i for i, (_, _, g) in enumerate(items) if g]
            if gen_rows:
                gen_grad_norm += float(np.linalg.norm(out.grad_logits[gen_rows]))

        l1 = real_sum / real_count if real_count else 0.0
        l2 = gen_sum / gen_count if gen_count else 0.0
        train_acc = _accuracy(params, real_train_feats, real_train_classes, n_classes)
        history.records.append(EpochRecord(
            epoch, l1, l2, l1 + loss_cfg.gen_weight * l2, train_acc, lr, gen_grad_norm,
        ))

        if tracked_samples:
            t_logits, _, _ = forward(
                params, np.stack([s.features for s in tracked_samples]), train_mode=False
            )
            argmax = np.argmax(t_logits[:, :n_classes], axis=1) + 1
            for s, cls in zip(tracked_samples, argmax):
                history.trajectories[s.id].append(int(cls))

    return params, history


def _accuracy(params, feats, classes, n_classes) -> float:
    """Eval-mode accuracy on the pre-defined classes (the extra head
    column, when present, is excluded so strategies stay comparable)."""
    logits, _, _ = forward(params, feats, train_mode=False)
    predicted = np.argmax(logits[:, :n_classes], axis=1) + 1
    return float(np.mean(predicted == classes))


def assign_static_labels(
    pretrained: ModelParams,
    generated: Dataset,
    tie_policy: TiePolicy = TiePolicy.AVERAGE_RANK,
) -> dict[int, VirtualLabel]:
    """One frozen rank-weighted label per generated sample.

    The pretrained model (typically a baseline run over the real data)
    scores each generated sample once; the resulting labels never change
    afterwards.
    """
    if not generated.samples:
        return {}
    feats = generated.feature_matrix()
    logits, _, _ = forward(pretrained, feats, train_mode=False)
    n_classes = logits.shape[1]
    out: dict[int, VirtualLabel] = {}
    for sample, row in zip(generated.samples, logits):
        alpha = mprl_alpha(softmax(row), tie_policy)
        out[sample.id] = mprl_label(alpha, n_classes)
    return out


def extract_embeddings(params: ModelParams, dataset: Dataset, split: str) -> EmbeddingSet:
    """Eval-mode penultimate activations for one split of a dataset."""
    rows = dataset.split(split)
    if not rows:
        raise InvalidDimension(f"dataset has no samples in split {split!r}")
    feats = dataset.feature_matrix(rows)
    _, _, emb = forward(params, feats, train_mode=False)
    ids = np.array([s.id for s in rows])
    labels = np.array([s.class_label if s.class_label is not None else -1 for s in rows])
    return EmbeddingSet(ids, labels, emb)


def pretrain_baseline(real: Dataset, cfg: TrainConfig) -> ModelParams:
    """Train the baseline (real-only) model used to assign static labels."""
    base_cfg = replace(cfg, strategy=Strategy.BASELINE, gen_weight=None,
                       track_trajectories=0)
    params, _ = train(real, None, base_cfg)
    return params
