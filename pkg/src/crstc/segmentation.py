"""From per-frame cluster labels to cry events."""
from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass

import numpy as np

from .dsp import FrameGrid

CRY, NON_CRY = 1, 0
MAX_EXHAUSTIVE_K = 8


@dataclass(frozen=True, order=True)
class Event:
    onset_s: float
    offset_s: float
    label: int = CRY

    def __post_init__(self):
        if not self.onset_s < self.offset_s:
            raise ValueError(f"event onset {self.onset_s} must precede offset {self.offset_s}")
        if self.onset_s < 0:
            raise ValueError("event onset must be >= 0")

    @property
    def duration(self) -> float:
        return self.offset_s - self.onset_s


def sort_events(events) -> list[Event]:
    return sorted(events, key=lambda e: (e.onset_s, e.offset_s, e.label))


def validate_events(events, clip_len_s: float | None = None) -> list[Event]:
    """Sort and check that same-label events do not overlap (and fit the clip)."""
    evs = sort_events(events)
    last_off: dict[int, float] = {}
    for e in evs:
        if clip_len_s is not None and e.offset_s > clip_len_s + 1e-9:
            raise ValueError(f"event {e} extends past the clip ({clip_len_s} s)")
        if e.onset_s < last_off.get(e.label, -np.inf) - 1e-12:
            raise ValueError(f"overlapping events with label {e.label} at {e.onset_s} s")
        last_off[e.label] = max(last_off.get(e.label, -np.inf), e.offset_s)
    return evs


# ---------------------------------------------------------------- frame-level ops

def smooth(labels, window: int = 5) -> np.ndarray:
    """Centered majority vote; edge windows are truncated and ties keep the original label."""
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be an odd number >= 1")
    lab = np.asarray(labels)
    if window == 1 or lab.size == 0:
        return lab.copy()
    half = window // 2
    out = lab.copy()
    for t in range(len(lab)):
        vals, counts = np.unique(lab[max(0, t - half):t + half + 1], return_counts=True)
        winners = vals[counts == counts.max()]
        if len(winners) == 1:
            out[t] = winners[0]
    return out


def _accuracy(pred, ref) -> float:
    return float(np.mean(pred == ref)) if len(ref) else 1.0


def map_clusters(labels, mode: str = "eval", reference=None, energies=None,
                 return_mapping: bool = False):
    """Collapse cluster ids to binary cry / non-cry frame labels.

    ``eval`` searches all 2^k cluster-to-class assignments for the best frame
    accuracy against ``reference`` (first maximum in enumeration order, which
    starts from all non-cry). ``heuristic`` marks clusters whose mean frame
    energy exceeds the median frame energy as cry.
    """
    lab = np.asarray(labels)
    clusters = np.unique(lab)
    if mode == "eval":
        if reference is None:
            raise ValueError("eval mode needs reference labels")
        ref = np.asarray(reference)
        if ref.shape != lab.shape:
            raise ValueError("reference and labels differ in length")
        if len(clusters) > MAX_EXHAUSTIVE_K:
            raise ValueError(f"{len(clusters)} clusters exceed the exhaustive limit of {MAX_EXHAUSTIVE_K}")
        # with a per-cluster score the optimum decomposes, but enumerate to keep tie order explicit
        best, best_acc = None, -1.0
        for bits in itertools.product((NON_CRY, CRY), repeat=len(clusters)):
            mapping = dict(zip(clusters.tolist(), bits))
            acc = _accuracy(np.array([mapping[c] for c in lab.tolist()]), ref)
            if acc > best_acc + 1e-15:
                best, best_acc = mapping, acc
        mapping = best
    elif mode == "heuristic":
        if energies is None:
            raise ValueError("heuristic mode needs per-frame energies")
        e = np.asarray(energies, dtype=np.float64)
        if e.shape != lab.shape:
            raise ValueError("energies and labels differ in length")
        med = float(np.median(e))
        mapping = {int(c): int(e[lab == c].mean() > med) for c in clusters}
    else:
        raise ValueError(f"unknown mapping mode {mode!r}")
    out = np.array([mapping[c] for c in lab.tolist()], dtype=np.int64)
    return (out, mapping) if return_mapping else out


# ---------------------------------------------------------------- labels <-> events

def labels_to_events(labels, grid: FrameGrid | float = 0.05) -> list[Event]:
    """Maximal runs of 1 become cry events on the frame grid."""
    step = grid.frame_len_s if isinstance(grid, FrameGrid) else float(grid)
    lab = np.asarray(labels).astype(np.int64)
    if lab.size and not np.isin(lab, (0, 1)).all():
        raise ValueError("labels_to_events expects binary labels")
    padded = np.concatenate([[0], lab, [0]])
    diff = np.diff(padded)
    starts = np.flatnonzero(diff == 1)
    ends = np.flatnonzero(diff == -1)
    return [Event(round(s * step, 10), round(e * step, 10), CRY) for s, e in zip(starts, ends)]


def events_to_labels(events, grid: FrameGrid) -> np.ndarray:
    """Frame is cry iff cry events cover at least half of it."""
    cover = np.zeros(grid.n_frames)
    starts = np.arange(grid.n_frames) * grid.frame_len_s
    for e in events:
        if e.onset_s < -1e-9 or e.offset_s > grid.clip_len_s + 1e-9:
            raise ValueError(f"event {e} lies outside the {grid.clip_len_s} s clip")
        if e.label != CRY:
            continue
        lo = np.maximum(starts, e.onset_s)
        hi = np.minimum(starts + grid.frame_len_s, e.offset_s)
        cover += np.clip(hi - lo, 0.0, None)
    return (cover >= 0.5 * grid.frame_len_s - 1e-9).astype(np.int64)


def min_duration_filter(events, min_s: float = 0.1, max_gap_s: float = 0.1) -> list[Event]:
    """Merge same-label events separated by less than ``max_gap_s``, then drop short ones."""
    by_label: dict[int, list[Event]] = {}
    for e in sort_events(events):
        run = by_label.setdefault(e.label, [])
        if run and e.onset_s - run[-1].offset_s < max_gap_s:
            prev = run[-1]
            run[-1] = Event(prev.onset_s, max(prev.offset_s, e.offset_s), e.label)
        else:
            run.append(e)
    kept = [e for run in by_label.values() for e in run if e.duration >= min_s - 1e-12]
    return sort_events(kept)


# ---------------------------------------------------------------- serialization

def events_to_csv(events) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["onset_s", "offset_s", "label"])
    for e in sort_events(events):
        w.writerow([repr(float(e.onset_s)), repr(float(e.offset_s)), int(e.label)])
    return buf.getvalue()


def events_from_csv(text: str) -> list[Event]:
    rows = list(csv.DictReader(io.StringIO(text)))
    return validate_events(Event(float(r["onset_s"]), float(r["offset_s"]), int(r["label"]))
                           for r in rows)


def events_to_json(events) -> str:
    return json.dumps([{"onset_s": e.onset_s, "offset_s": e.offset_s, "label": e.label}
                       for e in sort_events(events)], indent=2)


def events_from_json(text: str) -> list[Event]:
    return validate_events(Event(float(d["onset_s"]), float(d["offset_s"]), int(d["label"]))
                           for d in json.loads(text))
