"""Confusion-matrix metrics and the softmax compatibility criterion.

The positive class is "compatible". Metrics are carried as exact rationals
and rendered to two decimals only at the edges, so table comparisons never
hinge on float rounding. Zero-denominator metrics are flagged undefined
rather than coerced to zero.
"""

import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import UsageError

POSITIVE_LABEL = "compatible"
NEGATIVE_LABEL = "incompatible"


def _to_binary(value):
    if isinstance(value, str):
        if value == POSITIVE_LABEL:
            return 1
        if value in (NEGATIVE_LABEL, "partially_compatible"):
            return 0
        raise UsageError(f"unknown class label {value!r}")
    iv = int(value)
    if iv not in (0, 1):
        raise UsageError(f"binary class value must be 0 or 1, got {value!r}")
    return iv


@dataclass
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise UsageError(f"confusion counts must be non-negative: {self}")

    @property
    def positives(self):
        return self.tp + self.fn

    @property
    def negatives(self):
        return self.tn + self.fp

    @property
    def total(self):
        return self.positives + self.negatives


def confusion_from_predictions(labels, decisions):
    """Tally TP/FP/FN/TN with compatible as the positive class."""
    if len(labels) != len(decisions):
        raise UsageError(f"{len(labels)} labels vs {len(decisions)} decisions")
    if len(labels) == 0:
        raise UsageError("confusion over an empty prediction set")
    tp = fp = fn = tn = 0
    for lab, dec in zip(labels, decisions):
        y, d = _to_binary(lab), _to_binary(dec)
        if y == 1 and d == 1:
            tp += 1
        elif y == 0 and d == 1:
            fp += 1
        elif y == 1 and d == 0:
            fn += 1
        else:
            tn += 1
    return ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn)


@dataclass
class MetricsReport:
    """Exact-rational metrics; None marks an undefined (0/0) entry."""
    accuracy: Fraction
    precision: Fraction
    recall: Fraction
    specificity: Fraction
    f1: Fraction

    def rendered(self):
        """Percent strings at two decimals; undefined entries render empty."""
        return {name: render_percent(getattr(self, name))
                for name in ("accuracy", "precision", "recall", "specificity", "f1")}


def compute_metrics(cm):
    """Accuracy, precision, recall, specificity, F1 from the four counts."""
    if cm.total < 1:
        raise UsageError("metrics over an empty confusion matrix")
    accuracy = Fraction(cm.tp + cm.tn, cm.total)
    precision = Fraction(cm.tp, cm.tp + cm.fp) if cm.tp + cm.fp > 0 else None
    recall = Fraction(cm.tp, cm.positives) if cm.positives > 0 else None
    specificity = Fraction(cm.tn, cm.negatives) if cm.negatives > 0 else None
    if precision is not None and recall is not None and precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1 = None
    return MetricsReport(accuracy=accuracy, precision=precision, recall=recall,
                         specificity=specificity, f1=f1)


def render_percent(value):
    """Exact rational -> percent string with two decimals, half-to-even."""
    if value is None:
        return ""
    frac = Fraction(value) * 10000
    q, rem = divmod(frac.numerator, frac.denominator)
    if 2 * rem > frac.denominator or (2 * rem == frac.denominator and q % 2):
        q += 1
    return f"{q // 100}.{q % 100:02d}"


# ---------------------------------------------------------------------------
# softmax compatibility criterion


@dataclass
class CompatPrediction:
    logit_incompatible: float
    logit_compatible: float
    p_incompatible: float
    decision: str


def compat_criterion(logit_incompatible, logit_compatible):
    """Two-class softmax probability of incompatibility, computed stably.

    p = e^{z_inc} / (e^{z_inc} + e^{z_comp}); the decision threshold is 0.5,
    equivalent to comparing the logits.
    """
    zi, zc = float(logit_incompatible), float(logit_compatible)
    if not (math.isfinite(zi) and math.isfinite(zc)):
        raise UsageError(f"logits must be finite, got ({logit_incompatible}, {logit_compatible})")
    d = zc - zi
    if d <= 0:
        p = 1.0 / (1.0 + math.exp(d))
    else:
        e = math.exp(-d)
        p = e / (1.0 + e)
    return CompatPrediction(
        logit_incompatible=zi, logit_compatible=zc, p_incompatible=p,
        decision=NEGATIVE_LABEL if zi >= zc else POSITIVE_LABEL)


# ---------------------------------------------------------------------------
# CSV surfaces (Table-2-shaped metrics row, case-study table)

METRICS_CSV_COLUMNS = ("model", "seed", "test_accu", "train_accu",
                       "precision", "recall", "specificity", "f1")
CASE_STUDY_COLUMNS = ("image", "label", "logit_incompatible", "logit_compatible",
                      "p_incompatible", "decision")


def metrics_csv(rows):
    """rows: dicts keyed by METRICS_CSV_COLUMNS; returns CSV text."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=METRICS_CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def metrics_csv_row(model_name, seed, report, train_accuracy=None, test_accuracy=None):
    rendered = report.rendered()
    return {
        "model": model_name,
        "seed": seed,
        "test_accu": render_percent(test_accuracy) if test_accuracy is not None else rendered["accuracy"],
        "train_accu": render_percent(train_accuracy) if train_accuracy is not None else "",
        "precision": rendered["precision"],
        "recall": rendered["recall"],
        "specificity": rendered["specificity"],
        "f1": rendered["f1"],
    }


def case_study_report(model, items, transform=None, extra_columns=()):
    """Per-image logits and incompatibility probability, input order kept.

    items: (name, image array or path, metadata dict) triples. Unreadable
    images become row-level errors; the remaining rows are still produced.
    Returns (rows, errors) where each row is a dict in CASE_STUDY_COLUMNS
    order plus any requested metadata columns.
    """
    from . import tensor as T
    from .data import center_crop, image_to_input, load_pgm

    transform = transform or (lambda img: image_to_input(center_crop(img)))
    rows = []
    errors = []
    model.eval()
    for name, image, meta in items:
        meta = meta or {}
        try:
            img = load_pgm(image) if isinstance(image, (str,)) else image
            x = transform(img)
            with T.no_grad():
                logits = model(T.Tensor(x[None, ...].astype(np.float32))).data[0]
            pred = compat_criterion(logits[0], logits[1])
        except Exception as exc:  # noqa: BLE001 - row-level isolation
            errors.append((name, f"{type(exc).__name__}: {exc}"))
            continue
        row = {
            "image": name,
            "label": meta.get("label", ""),
            "logit_incompatible": repr(pred.logit_incompatible),
            "logit_compatible": repr(pred.logit_compatible),
            "p_incompatible": repr(pred.p_incompatible),
            "decision": pred.decision,
        }
        for col in extra_columns:
            row[col] = meta.get(col, "")
        rows.append(row)
    return rows, errors


def case_study_csv(rows, extra_columns=()):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(CASE_STUDY_COLUMNS) + list(extra_columns),
                            lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()
