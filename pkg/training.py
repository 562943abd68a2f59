"""Loss, optimizer, stratified folds, the training loop and cross-validation."""

import logging
import time
from collections import namedtuple
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import logsumexp, softmax

from audio import MfccConfig, mfcc, prepare_clip
from errors import (DimensionError, InputContractError, LabelError, NumericError, ParameterError,
                    ProtocolError, StratificationError)
from metrics import compute_metrics, confusion_matrix, fold_mean
from models import N_CLASSES, EmotionLabel, FeatureBatch, ModelVariant, build_model
from tensor import Tape, Tensor, no_grad, record_op

logger = logging.getLogger(__name__)

Split = namedtuple("Split", "train test")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization protocol: 100 epochs of Adam at lr 0.001, batches of 32, 5 folds."""

    epochs: int = 100
    lr: float = 0.001
    batch_size: int = 32
    seed: int = 0
    k_folds: int = 5
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.optimizer != "adam":
            raise ParameterError(f"only the adam optimizer is supported, got {self.optimizer!r}")
        if self.epochs < 0:
            raise ParameterError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr <= 0:
            raise ParameterError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.k_folds < 2:
            raise ParameterError(f"k_folds must be >= 2, got {self.k_folds}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0) or self.eps <= 0:
            raise ParameterError("adam needs beta1, beta2 in [0, 1) and eps > 0")

    def to_dict(self):
        return asdict(self)


@dataclass
class FeatureSet:
    """Cached features for a whole manifest, row-aligned with ``labels``."""

    labels: np.ndarray
    mfcc: np.ndarray = None
    wave: np.ndarray = None
    paths: list = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        for name in ("mfcc", "wave"):
            values = getattr(self, name)
            if values is not None and len(values) != len(self.labels):
                raise DimensionError(f"{name} has {len(values)} rows for {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    def batch(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return FeatureBatch(
            mfcc=None if self.mfcc is None else self.mfcc[indices],
            wave=None if self.wave is None else self.wave[indices],
            labels=self.labels[indices],
        )

    def require(self, variant):
        variant = ModelVariant.parse(variant)
        for kind, needed in (("mfcc", variant.uses_mfcc), ("wave", variant.uses_wave)):
            if needed and getattr(self, kind) is None:
                raise InputContractError(f"{variant.value} needs {kind} features, which were not loaded")


##############################################################################
# Loss and optimizer


def cross_entropy(logits, labels):
    """Mean over the batch of ``-log softmax(logits)[label]`` (log-sum-exp form)."""

    labels = np.asarray(labels, dtype=np.int64).ravel()
    if logits.ndim != 2:
        raise DimensionError(f"logits must be (batch, classes), got {logits.shape}")
    batch, classes = logits.shape
    if labels.size != batch:
        raise ParameterError(f"{labels.size} labels for a batch of {batch}")
    bad = labels[(labels < 0) | (labels >= classes)]
    if bad.size:
        raise LabelError(f"label {int(bad[0])} outside 0..{classes - 1}")

    z = logits.data
    rows = np.arange(batch)
    losses = logsumexp(z, axis=1) - z[rows, labels]

    def rule(g):
        probs = softmax(z, axis=1)
        probs[rows, labels] -= 1.0
        return (g * probs / batch,)

    return record_op("cross_entropy", losses.mean(), (logits,), rule)


@dataclass
class AdamState:
    """First/second moments per parameter name and the step counter."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state, config):
    """One bias-corrected Adam update; returns ``(new_params, state)``.

    ``params`` and ``grads`` map names to arrays of matching shapes.
    """

    state.t += 1
    bc1 = 1.0 - config.beta1 ** state.t
    bc2 = 1.0 - config.beta2 ** state.t

    updated = {}
    for name, value in params.items():
        grad = np.asarray(grads[name], dtype=np.float64)
        if grad.shape != np.shape(value):
            raise DimensionError(f"{name}: gradient shape {grad.shape} != parameter shape {np.shape(value)}")

        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(grad)
            v = np.zeros_like(grad)
        elif m.shape != grad.shape:
            raise DimensionError(f"{name}: optimizer state shape {m.shape} != parameter shape {grad.shape}")

        m = config.beta1 * m + (1.0 - config.beta1) * grad
        v = config.beta2 * v + (1.0 - config.beta2) * grad * grad
        state.m[name], state.v[name] = m, v
        updated[name] = value - config.lr * (m / bc1) / (np.sqrt(v / bc2) + config.eps)

    return updated, state


class Adam:
    """Adam over a Layer's parameters, reading gradients from ``Tensor.grad``."""

    def __init__(self, model, config):
        self.model = model
        self.config = config
        self.state = AdamState()

    def step(self):
        named = dict(self.model.named_parameters())
        params = {name: tensor.data for name, tensor in named.items()}
        grads = {name: tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
                 for name, tensor in named.items()}
        updated, self.state = adam_step(params, grads, self.state, self.config)
        for name, tensor in named.items():
            tensor.data = updated[name]


##############################################################################
# Fold planning


@dataclass
class FoldPlan:
    """Fold id in ``0..k-1`` for every sample."""

    folds: np.ndarray
    labels: np.ndarray
    k: int

    def histograms(self, n_classes=N_CLASSES):
        """(k, n_classes) count of each class in each fold."""

        hist = np.zeros((self.k, n_classes), dtype=np.int64)
        np.add.at(hist, (self.folds, self.labels), 1)
        return hist

    def split(self, fold):
        if not 0 <= fold < self.k:
            raise ParameterError(f"fold {fold} outside 0..{self.k - 1}")
        return Split(train=np.flatnonzero(self.folds != fold), test=np.flatnonzero(self.folds == fold))


def _class_name(label):
    try:
        return EmotionLabel(label).label
    except ValueError:
        return str(label)


def stratified_kfold(labels, k, seed):
    """Shuffle each class with the seeded generator and deal it round-robin to k folds."""

    labels = np.asarray(labels, dtype=np.int64).ravel()
    if k < 2:
        raise ParameterError(f"k must be >= 2, got {k}")
    if labels.size == 0:
        raise StratificationError("no samples to split")

    classes, counts = np.unique(labels, return_counts=True)
    short = [(c, n) for c, n in zip(classes, counts) if n < k]
    if short:
        c, n = short[0]
        raise StratificationError(f"class {_class_name(c)} has {n} samples, needs at least {k} for {k} folds")

    rng = np.random.default_rng(seed)
    folds = np.empty(labels.size, dtype=np.int64)
    start = 0
    for c in classes:
        members = rng.permutation(np.flatnonzero(labels == c))
        folds[members] = (start + np.arange(members.size)) % k
        # next class continues where this one stopped so fold sizes stay even
        start = (start + members.size) % k

    return FoldPlan(folds=folds, labels=labels, k=k)


##############################################################################
# Training and evaluation


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    ua: float
    wa: float
    f1: float

    def to_dict(self):
        return asdict(self)


def minibatches(indices, batch_size, rng):
    """Shuffled minibatches; a trailing batch of one joins the previous batch."""

    order = rng.permutation(indices)
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = np.concatenate([batches[-2], batches.pop()])
    return batches


def train_step(model, optimizer, batch, seed):
    with Tape() as tape:
        loss = cross_entropy(model.forward(batch, "train", seed), batch.labels)
        model.zero_grad()
        tape.backward(loss)
    optimizer.step()
    return loss.item()


def train(model, dataset, config, fold):
    """Train ``model`` on ``fold.train``, scoring ``fold.test`` after every epoch.

    Returns ``(model, history)`` with one EpochRecord per epoch.
    """

    train_idx = np.asarray(fold.train, dtype=np.int64)
    test_idx = np.asarray(fold.test, dtype=np.int64)
    if train_idx.size == 0 or test_idx.size == 0:
        raise ProtocolError(f"empty split: {train_idx.size} train / {test_idx.size} test samples")
    dataset.require(model.variant)

    rng = np.random.default_rng(config.seed)
    optimizer = Adam(model, config)
    history = []

    for epoch in range(config.epochs):
        losses = []
        for batch_idx in minibatches(train_idx, config.batch_size, rng):
            loss = train_step(model, optimizer, dataset.batch(batch_idx), int(rng.integers(2**31)))
            if not np.isfinite(loss):
                raise NumericError(f"loss became {loss} in epoch {epoch + 1}")
            losses.append(loss * len(batch_idx))

        report = evaluate(model, dataset, test_idx, config.batch_size)
        record = EpochRecord(epoch + 1, float(np.sum(losses) / train_idx.size),
                             report.ua, report.wa, report.macro_f1)
        history.append(record)
        logger.info("epoch %d/%d loss %.4f UA %.3f WA %.3f F1 %.3f", record.epoch, config.epochs,
                    record.train_loss, record.ua, record.wa, record.f1)

    return model, history


def predict(model, dataset, indices=None, batch_size=32):
    """Eval-mode class probabilities and arg-max predictions."""

    indices = np.arange(len(dataset)) if indices is None else np.asarray(indices, dtype=np.int64)
    probs = []
    with no_grad():
        for start in range(0, indices.size, batch_size):
            logits = model.forward(dataset.batch(indices[start:start + batch_size]), "eval")
            probs.append(softmax(logits.data, axis=1))
    probs = np.concatenate(probs) if probs else np.zeros((0, N_CLASSES))
    return probs.argmax(axis=1), probs


def evaluate(model, dataset, indices=None, batch_size=32):
    """MetricsReport of eval-mode predictions against the dataset labels."""

    indices = np.arange(len(dataset)) if indices is None else np.asarray(indices, dtype=np.int64)
    preds, _ = predict(model, dataset, indices, batch_size)
    return compute_metrics(confusion_matrix(preds, dataset.labels[indices]))


def predict_clip(model, clip, audio_config=None):
    """Per-class probabilities for one clip and the arg-max EmotionLabel."""

    audio_config = audio_config or MfccConfig()
    prepared = prepare_clip(clip, audio_config)
    batch = FeatureBatch(
        mfcc=mfcc(prepared, audio_config).values[None] if model.variant.uses_mfcc else None,
        wave=prepared.samples[None] if model.variant.uses_wave else None,
    )
    with no_grad():
        probs = softmax(model.forward(batch, "eval").data, axis=1)[0]
    return probs, EmotionLabel(int(probs.argmax()))


##############################################################################
# Cross-validation


@dataclass
class FoldResult:
    fold: int
    seed: int
    report: object
    history: list
    test_size: int


@dataclass
class CrossValidation:
    """Per-fold reports, their unweighted mean and the pooled confusion matrix."""

    variant: ModelVariant
    folds: list
    mean: dict
    pooled: object
    seconds: float = 0.0

    def to_dict(self):
        return {
            "variant": self.variant.value,
            "folds": [
                {"fold": f.fold, "seed": f.seed, "test_size": f.test_size, "metrics": f.report.to_dict()}
                for f in self.folds
            ],
            "fold_mean": self.mean,
            "pooled": self.pooled.to_dict(),
            "seconds": self.seconds,
        }


def run_fold(variant, dataset, config, hyper, plan, fold):
    """Train a freshly seeded model (seed + fold) on one fold and score its held-out part."""

    fold_seed = config.seed + fold
    model = build_model(variant, hyper, seed=fold_seed)
    split = plan.split(fold)
    model, history = train(model, dataset, replace(config, seed=fold_seed), split)
    report = evaluate(model, dataset, split.test, config.batch_size)
    logger.info("fold %d/%d: UA %.3f WA %.3f F1 %.3f", fold + 1, plan.k, report.ua, report.wa, report.macro_f1)
    return FoldResult(fold, fold_seed, report, history, int(split.test.size))


def cross_validate(variant, dataset, config, hyper=None, workers=1):
    """Stratified k-fold training and evaluation of ``variant``."""

    variant = ModelVariant.parse(variant)
    dataset.require(variant)
    plan = stratified_kfold(dataset.labels, config.k_folds, config.seed)
    started = time.perf_counter()

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                lambda fold: run_fold(variant, dataset, config, hyper, plan, fold), range(plan.k)))
    else:
        results = [run_fold(variant, dataset, config, hyper, plan, fold) for fold in range(plan.k)]

    pooled = compute_metrics(sum(r.report.matrix for r in results))
    return CrossValidation(variant, results, fold_mean([r.report for r in results]), pooled,
                           time.perf_counter() - started)


def compare_variants(variants, dataset, config, hyper=None, workers=1):
    """Cross-validate each variant in turn; returns ``[CrossValidation, ...]`` in input order."""

    outcomes = []
    for variant in variants:
        variant = ModelVariant.parse(variant)
        logger.info("cross-validating %s", variant.value)
        outcomes.append(cross_validate(variant, dataset, config, hyper, workers))
    return outcomes
