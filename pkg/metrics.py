"""Confusion matrices and the UA / WA / precision / recall / F1 suite."""

import logging
from dataclasses import dataclass, field

import numpy as np

from errors import LabelError, ParameterError, ProtocolError

logger = logging.getLogger(__name__)


def confusion_matrix(preds, labels, n_classes=5):
    """Count matrix with rows = truth, columns = prediction."""

    preds = np.asarray(preds, dtype=np.int64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if preds.shape != labels.shape:
        raise ParameterError(f"{preds.size} predictions for {labels.size} labels")

    for name, values in (("prediction", preds), ("label", labels)):
        bad = values[(values < 0) | (values >= n_classes)]
        if bad.size:
            raise LabelError(f"{name} {int(bad[0])} outside 0..{n_classes - 1}")

    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


@dataclass
class MetricsReport:
    """Per-class and aggregate rates computed from one confusion matrix.

    ``flags`` lists every rate that had a zero denominator and was scored 0.
    """

    matrix: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    macro_f1: float
    ua: float
    wa: float
    flags: list = field(default_factory=list)

    @property
    def support(self):
        return self.matrix.sum(axis=1)

    def to_dict(self):
        return {
            "confusion_matrix": self.matrix.tolist(),
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "f1": self.f1.tolist(),
            "macro_f1": self.macro_f1,
            "ua": self.ua,
            "wa": self.wa,
            "flags": list(self.flags),
        }


def _safe_ratio(num, den, what, flags):
    out = np.zeros(len(num), dtype=np.float64)
    for o, (n, d) in enumerate(zip(num, den)):
        if d == 0:
            flags.append(f"{what}[{o}]")
        else:
            out[o] = n / d
    return out


def compute_metrics(cm):
    """Precision, recall and F1 per class; UA = mean recall, WA = trace / total."""

    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ParameterError(f"confusion matrix must be square, got shape {cm.shape}")
    if (cm < 0).any():
        raise ParameterError("confusion matrix has negative entries")
    total = cm.sum()
    if total == 0:
        raise ProtocolError("confusion matrix is all zero; nothing was evaluated")

    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp

    flags = []
    precision = _safe_ratio(tp, tp + fp, "precision", flags)
    recall = _safe_ratio(tp, tp + fn, "recall", flags)
    f1 = _safe_ratio(2.0 * precision * recall, precision + recall, "f1", flags)

    if flags:
        logger.warning("zero denominators scored as 0: %s", ", ".join(flags))

    return MetricsReport(
        matrix=cm.astype(np.int64),
        precision=precision,
        recall=recall,
        f1=f1,
        macro_f1=float(f1.mean()),
        ua=float(recall.mean()),
        wa=float(tp.sum() / total),
        flags=flags,
    )


def fold_mean(reports):
    """Unweighted mean of each rate over fold reports."""

    if not reports:
        raise ProtocolError("no fold reports to average")
    return {
        "ua": float(np.mean([r.ua for r in reports])),
        "wa": float(np.mean([r.wa for r in reports])),
        "macro_f1": float(np.mean([r.macro_f1 for r in reports])),
        "precision": np.mean([r.precision for r in reports], axis=0).tolist(),
        "recall": np.mean([r.recall for r in reports], axis=0).tolist(),
        "f1": np.mean([r.f1 for r in reports], axis=0).tolist(),
    }
