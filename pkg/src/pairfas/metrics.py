"""Anti-spoofing error rates.

Live (bona fide) is the positive class and a sample is predicted live iff
``score >= threshold``. Hence APCER = FP / (FP + TN) is the share of attacks
accepted as live and BPCER = FN / (FN + TP) the share of lives rejected.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from .errors import DomainError, ParseError

LIVE, ATTACK = 1, 0


@dataclass(frozen=True)
class Counts:
    tp: int
    fp: int
    tn: int
    fn: int


@dataclass(frozen=True)
class EvalReport:
    threshold: float
    apcer: float
    bpcer: float
    acer: float
    eer: float
    eer_threshold: float
    accuracy: float
    auc: float
    counts: Counts

    def to_dict(self) -> dict:
        return asdict(self)


def _arrays(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(np.int64)
    if s.shape != y.shape:
        raise DomainError(f"scores {s.shape} and labels {y.shape} differ")
    if s.size == 0:
        raise DomainError("empty score set")
    if not np.all((y == LIVE) | (y == ATTACK)):
        raise DomainError("labels must be 1 (live) or 0 (attack)")
    return s, y


def _need_both(y):
    if not np.any(y == LIVE):
        raise DomainError("no live samples in score set")
    if not np.any(y == ATTACK):
        raise DomainError("no attack samples in score set")


def confusion_at(scores, labels, threshold: float) -> Counts:
    s, y = _arrays(scores, labels)
    pred_live = s >= threshold
    return Counts(
        tp=int(np.sum(pred_live & (y == LIVE))),
        fp=int(np.sum(pred_live & (y == ATTACK))),
        tn=int(np.sum(~pred_live & (y == ATTACK))),
        fn=int(np.sum(~pred_live & (y == LIVE))),
    )


def acer_at(scores, labels, threshold: float) -> Tuple[float, float, float]:
    """(APCER, BPCER, ACER) at ``threshold``."""
    c = confusion_at(scores, labels, threshold)
    if c.fp + c.tn == 0:
        raise DomainError("APCER undefined: no attack samples")
    if c.fn + c.tp == 0:
        raise DomainError("BPCER undefined: no live samples")
    apcer = c.fp / (c.fp + c.tn)
    bpcer = c.fn / (c.fn + c.tp)
    return apcer, bpcer, (apcer + bpcer) / 2


def accuracy_at(scores, labels, threshold: float) -> float:
    c = confusion_at(scores, labels, threshold)
    return (c.tp + c.tn) / (c.tp + c.tn + c.fp + c.fn)


def operating_points(scores, labels):
    """FAR (APCER) and FRR (BPCER) at every distinct score and one point above the max.

    Returns ``(thresholds, far, frr)`` with thresholds ascending.
    """
    s, y = _arrays(scores, labels)
    _need_both(y)
    distinct = np.unique(s)
    top = np.nextafter(distinct[-1], np.inf)
    thresholds = np.append(distinct, top)
    live = np.sort(s[y == LIVE])
    attack = np.sort(s[y == ATTACK])
    # attacks with score >= t / lives with score < t
    far = (attack.size - np.searchsorted(attack, thresholds, side="left")) / attack.size
    frr = np.searchsorted(live, thresholds, side="left") / live.size
    return thresholds, far, frr


def eer(scores, labels) -> Tuple[float, float]:
    """Equal error rate and its threshold.

    Walks the operating points to the first sign change of FAR - FRR and
    linearly interpolates both rates (and the threshold) to the crossing.
    """
    t, far, frr = operating_points(scores, labels)
    d = far - frr
    idx = int(np.argmax(d <= 0))  # d[-1] == -1, so a crossing always exists
    if d[idx] == 0:
        return float(far[idx]), float(t[idx])
    i0 = idx - 1  # d[0] = far[0] = 1 > 0, so idx >= 1 here
    frac = d[i0] / (d[i0] - d[idx])
    value = far[i0] + frac * (far[idx] - far[i0])
    thr = t[i0] + frac * (t[idx] - t[i0])
    return float(value), float(thr)


def auc(scores, labels) -> float:
    """Area under the ROC curve via the rank-sum statistic; ties count half."""
    s, y = _arrays(scores, labels)
    _need_both(y)
    ranks = rankdata(s)  # average ranks, so tied pairs contribute 1/2
    n_live = int(np.sum(y == LIVE))
    n_attack = s.size - n_live
    # 2*U is an integer, so this numerator is exact.
    twice_u = 2.0 * ranks[y == LIVE].sum() - n_live * (n_live + 1)
    return float(twice_u / (2.0 * n_live * n_attack))


def roc_polyline(scores, labels) -> List[Tuple[float, float]]:
    """ROC points (FAR, 1 - FRR), from (0, 0) upward, for external plotting."""
    _, far, frr = operating_points(scores, labels)
    pts = [(float(a), float(1 - r)) for a, r in zip(far, frr)]
    pts.reverse()
    return pts


def evaluate(scores, labels, threshold: float = 0.5) -> EvalReport:
    s, y = _arrays(scores, labels)
    _need_both(y)
    apcer, bpcer, acer = acer_at(s, y, threshold)
    e, et = eer(s, y)
    return EvalReport(
        threshold=float(threshold), apcer=apcer, bpcer=bpcer, acer=acer, eer=e, eer_threshold=et,
        accuracy=accuracy_at(s, y, threshold), auc=auc(s, y), counts=confusion_at(s, y, threshold),
    )


def read_scores_csv(path) -> Tuple[List[str], np.ndarray, np.ndarray]:
    """Parse ``id,score,label`` rows; label is ``Live``/``Attack`` or 1/0."""
    ids, scores, labels = [], [], []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = (r for r in csv.reader(fh) if r and not r[0].startswith("#"))
        for lineno, row in enumerate(rows, start=1):
            if lineno == 1 and row[:3] == ["id", "score", "label"]:
                continue
            if len(row) < 3:
                raise ParseError(f"{path}: row {lineno} needs id,score,label")
            lab = row[2].strip()
            if lab in ("Live", "1"):
                labels.append(LIVE)
            elif lab in ("Attack", "0"):
                labels.append(ATTACK)
            else:
                raise ParseError(f"{path}: row {lineno}: unknown label {lab!r}")
            ids.append(row[0])
            try:
                scores.append(float(row[1]))
            except ValueError:
                raise ParseError(f"{path}: row {lineno}: bad score {row[1]!r}") from None
    return ids, np.asarray(scores), np.asarray(labels)


def write_scores_csv(path, ids: Sequence[str], scores, labels, header: Optional[str] = None):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["id", "score", "label"])
        for i, s, y in zip(ids, scores, labels):
            w.writerow([i, repr(float(s)), "Live" if int(y) == LIVE else "Attack"])


def roc_svg(points: Sequence[Tuple[float, float]], size: int = 320) -> str:
    """Minimal standalone SVG of a ROC polyline."""
    pad = 30
    span = size - 2 * pad
    coords = " ".join(f"{pad + x * span:.2f},{size - pad - y * span:.2f}" for x, y in points)
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">'
        f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="#888"/>'
        f'<line x1="{pad}" y1="{size - pad}" x2="{size - pad}" y2="{pad}" stroke="#ccc" stroke-dasharray="4"/>'
        f'<polyline points="{coords}" fill="none" stroke="#1f77b4" stroke-width="2"/>'
        f'<text x="{size / 2}" y="{size - 8}" text-anchor="middle" font-size="12">APCER (FAR)</text>'
        f'<text x="12" y="{size / 2}" font-size="12" transform="rotate(-90 12 {size / 2})" '
        f'text-anchor="middle">1 - BPCER</text></svg>'
    )
