"""Normalization, class weighting, the training loop, metrics, and LOSO.

Signals are standardized per segment (self-contained, so nothing leaks across
subjects); hand-crafted features are standardized with statistics fitted on
each fold's training subjects only.  Every fold derives its randomness from
hash(global seed, held-out subject), so folds can run serially or in parallel
with identical results.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, UsageError
from .ingest import n_classes_for
from .nn import adam_step, backward, build_model, forward, predict, weighted_cce
from .nn.model import (
    DEFAULT_DROPOUT_BLOCK,
    DEFAULT_DROPOUT_FEATURE,
    DEFAULT_DROPOUT_INPUT,
)

log = logging.getLogger(__name__)


def zscore_segment(samples) -> np.ndarray:
    """Standardize one segment: (x - mean) / std, all zeros when std == 0.

    Constancy is tested as max == min, which is exact; the computed std of a
    constant array can land on a subnormal instead of 0.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0 or x.max() == x.min():
        return np.zeros_like(x)
    return (x - x.mean()) / x.std()


@dataclass
class FeatureScaler:
    """Per-feature mean/std fitted on training-fold features only."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray) -> "FeatureScaler":
        features = np.asarray(features, dtype=np.float64)
        std = features.std(axis=0)
        std = np.where(std == 0.0, 1.0, std)
        return cls(mean=features.mean(axis=0), std=std)

    def transform(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, dtype=np.float64) - self.mean) / self.std


def class_weights(counts, total: int, n_classes: int) -> np.ndarray:
    """Per-class loss weights w_i = total / (n_classes * count_i).

    Raises:
        ConfigError: a class is absent from the training fold, or the counts
            do not sum to the stated total.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if len(counts) != n_classes:
        raise ConfigError(f"expected {n_classes} class counts, got {len(counts)}")
    if counts.sum() != total:
        raise ConfigError(f"class counts sum to {counts.sum()}, not {total}")
    if np.any(counts <= 0):
        missing = np.flatnonzero(counts <= 0).tolist()
        raise ConfigError(f"classes {missing} absent from the training fold")
    return total / (n_classes * counts.astype(np.float64))


@dataclass
class TrainConfig:
    """Hyperparameters for one training run."""

    batch_size: int = 500
    max_epochs: int = 200
    patience: int = 70
    lr: float = 0.001
    seed: int = 0
    task: str = "3class"
    variant: str = "hcnn"
    validation_subject_count: int = 2
    dropout_input: float = DEFAULT_DROPOUT_INPUT
    dropout_block: float = DEFAULT_DROPOUT_BLOCK
    dropout_feature: float = DEFAULT_DROPOUT_FEATURE

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.patience < self.max_epochs:
            raise ConfigError(
                f"patience ({self.patience}) must be below max_epochs "
                f"({self.max_epochs})"
            )

    @property
    def n_classes(self) -> int:
        return n_classes_for(self.task)


@dataclass(frozen=True)
class FoldMetrics:
    """Confusion matrix with the metrics derived from it."""

    subject: str
    confusion: np.ndarray  # (n_c, n_c) ints, rows = true, cols = predicted
    accuracy: float
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    macro_f1: float

    @property
    def n_examples(self) -> int:
        return int(self.confusion.sum())

    def to_dict(self) -> dict:
        return {
            "subject": self.subject,
            "n_examples": self.n_examples,
            "confusion": self.confusion.tolist(),
            "accuracy": self.accuracy,
            "precision": list(self.precision),
            "recall": list(self.recall),
            "macro_f1": self.macro_f1,
        }


def compute_metrics(predictions, labels, n_classes: int, subject: str = "") -> FoldMetrics:
    """Accuracy, one-vs-rest precision/recall, and macro F1.

    A class with no predicted (or no true) examples gets precision (recall) 0,
    and its F1 is 0 whenever precision + recall is 0, so the macro F1 stays
    defined on degenerate prediction sets.

    Raises:
        UsageError: empty or mismatched inputs, or labels out of range.
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.size == 0:
        raise UsageError("cannot compute metrics on empty predictions")
    if predictions.shape != labels.shape:
        raise UsageError("predictions and labels must have equal length")
    if labels.min() < 0 or labels.max() >= n_classes or predictions.min() < 0 \
            or predictions.max() >= n_classes:
        raise UsageError(f"labels/predictions outside 0..{n_classes - 1}")

    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (labels, predictions), 1)

    accuracy = float(np.trace(confusion) / confusion.sum())
    precision, recall, f1 = [], [], []
    for i in range(n_classes):
        tp = confusion[i, i]
        p = tp / confusion[:, i].sum() if confusion[:, i].sum() else 0.0
        r = tp / confusion[i, :].sum() if confusion[i, :].sum() else 0.0
        precision.append(float(p))
        recall.append(float(r))
        f1.append(2.0 * p * r / (p + r) if p + r else 0.0)
    return FoldMetrics(
        subject=subject,
        confusion=confusion,
        accuracy=accuracy,
        precision=tuple(precision),
        recall=tuple(recall),
        macro_f1=float(np.mean(f1)),
    )


def macro_recall(predictions, labels, n_classes: int) -> float:
    """Mean per-class recall; the early-stopping monitor."""
    return float(
        np.mean(compute_metrics(predictions, labels, n_classes).recall)
    )


@dataclass
class SplitData:
    """Aligned arrays for one data split."""

    segments: np.ndarray  # (n, 3840) standardized float32
    features: np.ndarray  # (n, 19)
    labels: np.ndarray    # (n,) ints in 0..n_c-1

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, idx) -> "SplitData":
        return SplitData(self.segments[idx], self.features[idx], self.labels[idx])


def _forward_features(config: TrainConfig, features):
    return features if config.variant == "hcnn" else None


def train_model(config: TrainConfig, train: SplitData, val: SplitData):
    """Train one model with early stopping on validation macro recall.

    Every epoch shuffles the training segments (seeded), walks batches of
    config.batch_size (final partial batch kept), then scores validation
    macro recall in inference mode.  The parameters of the best epoch are
    restored before returning; ties keep the earliest epoch.  Stops when the
    monitor has not improved for config.patience epochs.

    Returns:
        (model, history) where history has per-epoch "train_loss" and
        "val_recall" lists plus "best_epoch" (0-based).

    Raises:
        ConfigError: empty training or validation data, or a class missing
            from the training fold.
    """
    if len(train) == 0:
        raise ConfigError("empty training set")
    if len(val) == 0:
        raise ConfigError("empty validation set")
    n_c = config.n_classes
    counts = np.bincount(train.labels, minlength=n_c)
    weights = class_weights(counts, len(train), n_c)
    onehot = np.eye(n_c, dtype=np.float32)

    seed_seq = np.random.SeedSequence(config.seed)
    init_seed, loop_seed = seed_seq.spawn(2)
    model = build_model(
        config.variant,
        n_c,
        seed=init_seed,
        dropout_input=config.dropout_input,
        dropout_block=config.dropout_block,
        dropout_feature=config.dropout_feature,
    )
    rng = np.random.default_rng(loop_seed)

    history = {"train_loss": [], "val_recall": [], "best_epoch": 0}
    best_recall = -np.inf
    best_weights = model.copy_weights()
    epochs_since_best = 0

    for epoch in range(config.max_epochs):
        order = rng.permutation(len(train))
        loss_sum = 0.0
        for lo in range(0, len(order), config.batch_size):
            batch = order[lo : lo + config.batch_size]
            segs = train.segments[batch]
            feats = _forward_features(config, train.features[batch])
            targets = onehot[train.labels[batch]]
            probs, trace = forward(model, segs, feats, mode="train", rng=rng)
            loss = weighted_cce(probs, targets, weights)
            loss_sum += loss * len(batch)
            grads = backward(model, trace, probs, targets, weights)
            adam_step(model, grads, lr=config.lr)
        history["train_loss"].append(loss_sum / len(train))

        val_pred = predict(
            model, val.segments, _forward_features(config, val.features)
        )
        recall = macro_recall(val_pred, val.labels, n_c)
        history["val_recall"].append(recall)

        if recall > best_recall:
            best_recall = recall
            best_weights = model.copy_weights()
            history["best_epoch"] = epoch
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= config.patience:
                break

    model.load_weights(best_weights)
    return model, history


def fold_seed(global_seed: int, subject_id: str) -> int:
    """Stable per-fold seed derived from the global seed and the test subject."""
    digest = hashlib.sha256(f"{global_seed}:{subject_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class FoldPlan:
    test_subject: str
    validation_subjects: tuple[str, ...]
    train_subjects: tuple[str, ...]


def plan_loso_folds(
    subjects: list[str],
    eligible: set[str],
    seed: int,
    validation_count: int = 2,
) -> tuple[list[FoldPlan], list[tuple[str, str]]]:
    """One fold per subject: held-out test, seeded validation draw, the rest train.

    Args:
        subjects: full roster, one fold attempted per entry.
        eligible: subjects that actually contributed segments.
        seed: global seed; each fold reseeds from (seed, test subject).
        validation_count: whole subjects drawn for validation.

    Returns:
        (plans, skipped) where skipped holds (subject, reason) records.

    Raises:
        ConfigError: fewer than validation_count + 2 eligible subjects.
    """
    subjects = list(subjects)
    if len(subjects) < 4:
        raise ConfigError(f"LOSO needs >= 4 subjects, got {len(subjects)}")
    plans: list[FoldPlan] = []
    skipped: list[tuple[str, str]] = []
    for test in subjects:
        if test not in eligible:
            skipped.append((test, "no accepted segments"))
            continue
        pool = sorted(eligible - {test})
        if len(pool) < validation_count + 1:
            raise ConfigError(
                f"fold {test}: {len(pool)} eligible subjects remain, need "
                f"{validation_count + 1}"
            )
        rng = np.random.default_rng(fold_seed(seed, test))
        val = tuple(sorted(rng.choice(pool, size=validation_count, replace=False)))
        train = tuple(s for s in pool if s not in val)
        if {test} & (set(val) | set(train)) or set(val) & set(train):
            raise UsageError(f"fold {test}: leaked subject between splits")
        plans.append(FoldPlan(test, val, train))
    return plans, skipped


@dataclass
class ArrayDataset:
    """All accepted segments of all subjects, flattened into aligned arrays."""

    segments: np.ndarray       # (n, 3840) standardized float32
    features: np.ndarray       # (n, 19) raw, scaled per fold
    labels: np.ndarray         # (n,)
    subjects: np.ndarray       # (n,) subject id per row
    roster: tuple[str, ...] = ()  # every subject seen, with or without segments

    def __post_init__(self):
        if not self.roster:
            seen = sorted(set(self.subjects.tolist()))
            self.roster = tuple(seen)

    def split_for(self, plan: FoldPlan, scaler: FeatureScaler, members) -> SplitData:
        mask = np.isin(self.subjects, list(members))
        return SplitData(
            segments=self.segments[mask].astype(np.float32),
            features=scaler.transform(self.features[mask]).astype(np.float32),
            labels=self.labels[mask],
        )


@dataclass
class FoldResult:
    plan: FoldPlan
    metrics: FoldMetrics
    history: dict
    model: object
    predictions: np.ndarray
    labels: np.ndarray


@dataclass
class LosoResult:
    folds: list[FoldResult]
    skipped: list[tuple[str, str]]
    pooled: FoldMetrics
    fold_accuracy_mean: float
    fold_accuracy_std: float
    fold_macro_f1_mean: float
    fold_macro_f1_std: float


def _run_fold(dataset: ArrayDataset, config: TrainConfig, plan: FoldPlan) -> FoldResult:
    train_mask = np.isin(dataset.subjects, list(plan.train_subjects))
    scaler = FeatureScaler.fit(dataset.features[train_mask])
    fold_config = replace(config, seed=fold_seed(config.seed, plan.test_subject))

    train = dataset.split_for(plan, scaler, plan.train_subjects)
    val = dataset.split_for(plan, scaler, plan.validation_subjects)
    test = dataset.split_for(plan, scaler, (plan.test_subject,))

    model, history = train_model(fold_config, train, val)
    preds = predict(model, test.segments, _forward_features(fold_config, test.features))
    metrics = compute_metrics(
        preds, test.labels, config.n_classes, subject=plan.test_subject
    )
    return FoldResult(
        plan=plan,
        metrics=metrics,
        history=history,
        model=model,
        predictions=preds,
        labels=test.labels,
    )


def run_loso(dataset: ArrayDataset, config: TrainConfig, workers: int = 1) -> LosoResult:
    """Leave-one-subject-out evaluation over the dataset's roster.

    Each fold holds one subject out for testing, draws validation subjects
    (seeded) from the remainder, fits the feature scaler and class weights on
    the training subjects only, trains, and scores the held-out subject.
    Pooled metrics concatenate every fold's test predictions; per-fold mean
    and standard deviation are reported alongside.
    """
    eligible = set(np.unique(dataset.subjects).tolist())
    plans, skipped = plan_loso_folds(
        list(dataset.roster), eligible, config.seed, config.validation_subject_count
    )
    for subject, reason in skipped:
        log.warning("skipping fold %s: %s", subject, reason)

    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            folds = list(pool.map(_run_fold_args, [(dataset, config, p) for p in plans]))
    else:
        folds = [_run_fold(dataset, config, plan) for plan in plans]

    all_preds = np.concatenate([f.predictions for f in folds])
    all_labels = np.concatenate([f.labels for f in folds])
    pooled = compute_metrics(all_preds, all_labels, config.n_classes, subject="pooled")
    accuracies = np.array([f.metrics.accuracy for f in folds])
    f1s = np.array([f.metrics.macro_f1 for f in folds])
    return LosoResult(
        folds=folds,
        skipped=skipped,
        pooled=pooled,
        fold_accuracy_mean=float(accuracies.mean()),
        fold_accuracy_std=float(accuracies.std()),
        fold_macro_f1_mean=float(f1s.mean()),
        fold_macro_f1_std=float(f1s.std()),
    )


def _run_fold_args(args):
    return _run_fold(*args)
