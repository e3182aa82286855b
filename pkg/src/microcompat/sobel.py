"""Non-learned edge baseline: fixed Sobel kernels, a scalar phase-separation
score, and a threshold classifier.

The score is the arithmetic mean of the gradient magnitude over the valid
(unpadded) region of the 0-255 image. Sharp phase boundaries push it up, so
scores at or above the boundary classify as incompatible; the boundary
defaults to 18 and is exposed as a flag.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, UsageError
from .metrics import compute_metrics, confusion_from_predictions

SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.int64)
SOBEL_Y = SOBEL_X.T
DEFAULT_BOUNDARY = 18.0


@dataclass
class SobelResult:
    gx: np.ndarray          # signed horizontal-gradient plane (int64)
    gy: np.ndarray          # signed vertical-gradient plane (int64)
    magnitude: np.ndarray   # sqrt(gx^2 + gy^2), float64
    score: float            # mean magnitude over the valid region


@dataclass
class SobelDecision:
    score: float
    boundary: float
    decision: str           # "compatible" | "incompatible"


def sobel_filter(img):
    """Valid-region cross-correlation with the fixed 3x3 Sobel pair.

    Pixel values are treated as 0-255 integers; the gradient planes are
    exact integer sums, the magnitude is computed in float64.
    """
    p = np.asarray(img)
    if p.ndim != 2 or p.shape[0] < 3 or p.shape[1] < 3:
        raise ShapeError(f"sobel_filter needs an image of at least 3x3, got {p.shape}")
    # 8-bit pixels stay exact in int64; float planes (synthetic tests) keep
    # their values so the score remains linear in contrast
    p = p.astype(np.int64) if np.issubdtype(p.dtype, np.integer) else p.astype(np.float64)
    h, w = p.shape
    gx = np.zeros((h - 2, w - 2), dtype=p.dtype)
    gy = np.zeros((h - 2, w - 2), dtype=p.dtype)
    for dy in range(3):
        for dx in range(3):
            window = p[dy:dy + h - 2, dx:dx + w - 2]
            if SOBEL_X[dy, dx]:
                gx += SOBEL_X[dy, dx] * window
            if SOBEL_Y[dy, dx]:
                gy += SOBEL_Y[dy, dx] * window
    magnitude = np.sqrt(gx.astype(np.float64) ** 2 + gy.astype(np.float64) ** 2)
    return SobelResult(gx=gx, gy=gy, magnitude=magnitude, score=float(magnitude.mean()))


def sobel_score(img):
    return sobel_filter(img).score


def sobel_classify(img, boundary=DEFAULT_BOUNDARY):
    """Mean-gradient threshold: score >= boundary means phase separation."""
    score = sobel_score(img)
    decision = "incompatible" if score >= boundary else "compatible"
    return SobelDecision(score=score, boundary=float(boundary), decision=decision)


@dataclass
class SweepRow:
    boundary: float
    report: object          # MetricsReport
    best: bool


def sweep_scores(scores, labels, boundaries):
    """Metrics per candidate boundary; the argmax-accuracy row is flagged.

    labels are manifest labels or binary indices (compatible positive).
    Ties on accuracy flag the lowest boundary.
    """
    if len(scores) == 0:
        raise UsageError("threshold sweep over an empty dataset")
    if len(scores) != len(labels):
        raise UsageError(f"{len(scores)} scores vs {len(labels)} labels")
    if len(boundaries) == 0:
        raise UsageError("no boundaries to sweep")
    rows = []
    for b in boundaries:
        decisions = ["incompatible" if s >= b else "compatible" for s in scores]
        cm = confusion_from_predictions(labels, decisions)
        rows.append(SweepRow(boundary=float(b), report=compute_metrics(cm), best=False))
    best = max(range(len(rows)), key=lambda i: (rows[i].report.accuracy, -i))
    rows[best].best = True
    return rows


def threshold_sweep(images_with_labels, boundaries):
    """Score each (image, label) pair once, then sweep the boundaries."""
    pairs = list(images_with_labels)
    if not pairs:
        raise UsageError("threshold sweep over an empty dataset")
    scores = [sobel_score(img) for img, _ in pairs]
    labels = [lab for _, lab in pairs]
    return sweep_scores(scores, labels, boundaries)
