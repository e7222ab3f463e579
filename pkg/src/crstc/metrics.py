"""Frame accuracy/F1, event F1 and event IoU for binary cry detection."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .segmentation import CRY, Event


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def _ratio(a: float, b: float) -> float:
    return 0.0 if b == 0 else a / b


@dataclass
class FrameReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int, tn: int) -> "FrameReport":
        p, r = _ratio(tp, tp + fp), _ratio(tp, tp + fn)
        return cls(_ratio(tp + tn, tp + fp + fn + tn), p, r, _f1(p, r), tp, fp, fn, tn)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class EventReport:
    event_f1: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int
    event_iou: float = float("nan")
    matched_iou: float = float("nan")
    matches: list[tuple[int, int, float]] = field(default_factory=list)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["matches"] = [list(m) for m in self.matches]
        return d


def frame_metrics(pred, truth) -> FrameReport:
    p = np.asarray(pred).astype(np.int64)
    t = np.asarray(truth).astype(np.int64)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    for name, a in (("pred", p), ("truth", t)):
        if a.size and not np.isin(a, (0, 1)).all():
            raise ValueError(f"{name} labels must be binary")
    tp = int(np.sum((p == 1) & (t == 1)))
    fp = int(np.sum((p == 1) & (t == 0)))
    fn = int(np.sum((p == 0) & (t == 1)))
    tn = int(np.sum((p == 0) & (t == 0)))
    return FrameReport.from_counts(tp, fp, fn, tn)


def interval_iou(a: Event, b: Event) -> float:
    inter = max(0.0, min(a.offset_s, b.offset_s) - max(a.onset_s, b.onset_s))
    union = (a.offset_s - a.onset_s) + (b.offset_s - b.onset_s) - inter
    return 0.0 if union <= 0 else inter / union


def _positives(events, label: int) -> list[Event]:
    return sorted((e for e in events if e.label == label), key=lambda e: (e.onset_s, e.offset_s))


def event_f1(pred, truth, iou_threshold: float = 0.5, label: int = CRY) -> EventReport:
    """Greedy one-to-one matching in descending IoU; a pair counts iff IoU >= threshold."""
    if not 0 < iou_threshold <= 1:
        raise ValueError("iou_threshold must lie in (0, 1]")
    P, G = _positives(pred, label), _positives(truth, label)
    pairs = [(interval_iou(p, g), i, j) for i, p in enumerate(P) for j, g in enumerate(G)]
    pairs = [x for x in pairs if x[0] >= iou_threshold]
    pairs.sort(key=lambda x: (-x[0], x[1], x[2]))
    used_p, used_g, matches = set(), set(), []
    for iou, i, j in pairs:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        matches.append((i, j, iou))
    tp = len(matches)
    fp, fn = len(P) - tp, len(G) - tp
    prec, rec = _ratio(tp, tp + fp), _ratio(tp, tp + fn)
    if not P and not G:
        f1 = 1.0
    else:
        f1 = _f1(prec, rec)
    matched = float(np.mean([m[2] for m in matches])) if matches else 0.0
    return EventReport(f1, prec, rec, tp, fp, fn, matched_iou=matched, matches=matches)


def _coverage(events, label: int) -> list[tuple[float, float]]:
    spans = sorted((e.onset_s, e.offset_s) for e in events if e.label == label)
    merged: list[list[float]] = []
    for lo, hi in spans:
        if merged and lo <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return [(lo, hi) for lo, hi in merged]


def _length(spans) -> float:
    return float(sum(hi - lo for lo, hi in spans))


def event_iou(pred, truth, label: int = CRY) -> float:
    """IoU of the time covered by predicted vs true events; 1.0 when both are empty."""
    a, b = _coverage(pred, label), _coverage(truth, label)
    inter = 0.0
    i = j = 0
    while i < len(a) and j < len(b):
        lo, hi = max(a[i][0], b[j][0]), min(a[i][1], b[j][1])
        inter += max(0.0, hi - lo)
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    union = _length(a) + _length(b) - inter
    if union <= 0:
        return 1.0
    return inter / union


def evaluate_file(pred_labels, truth_labels, pred_events, truth_events,
                  iou_threshold: float = 0.5) -> dict:
    frame = frame_metrics(pred_labels, truth_labels)
    ev = event_f1(pred_events, truth_events, iou_threshold)
    ev.event_iou = event_iou(pred_events, truth_events)
    return {"frame": frame.as_dict(), "event": ev.as_dict()}


def evaluate_corpus(files, iou_threshold: float = 0.5) -> dict:
    """Pool per-file results.

    ``files`` is a sequence of ``(pred_labels, truth_labels, pred_events,
    truth_events)``. Frame metrics and event F1 are micro-averaged over pooled
    counts; event IoU (coverage and matched-pair variants) is averaged per file.
    """
    files = list(files)
    if not files:
        raise ValueError("evaluate_corpus needs at least one file")
    counts = np.zeros(4, dtype=np.int64)
    etp = efp = efn = 0
    ious, matched = [], []
    for pl, tl, pe, te in files:
        fr = frame_metrics(pl, tl)
        counts += (fr.tp, fr.fp, fr.fn, fr.tn)
        ev = event_f1(pe, te, iou_threshold)
        etp, efp, efn = etp + ev.tp, efp + ev.fp, efn + ev.fn
        ious.append(event_iou(pe, te))
        matched.append(ev.matched_iou)
    frame = FrameReport.from_counts(*map(int, counts))
    prec, rec = _ratio(etp, etp + efp), _ratio(etp, etp + efn)
    ef1 = 1.0 if etp + efp + efn == 0 else _f1(prec, rec)
    return {
        "n_files": len(files),
        "frame_accuracy": frame.accuracy,
        "frame_f1": frame.f1,
        "event_f1": ef1,
        "event_iou": float(np.mean(ious)),
        "frame": frame.as_dict(),
        "event": {"event_f1": ef1, "precision": prec, "recall": rec, "tp": etp, "fp": efp,
                  "fn": efn, "event_iou": float(np.mean(ious)),
                  "matched_iou": float(np.mean(matched))},
        "iou_threshold": iou_threshold,
    }
