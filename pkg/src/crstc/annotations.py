"""Ground-truth annotations: Praat TextGrids, CSV event tables, voting and splits."""
from __future__ import annotations

import csv
import io
import json
import re
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dsp import FrameGrid
from .segmentation import CRY, NON_CRY, Event, events_to_labels, validate_events

NON_CRY_TEXTS = frozenset({"", "silence", "noise"})


@dataclass
class Interval:
    start_s: float
    end_s: float
    text: str = ""


@dataclass
class AnnotationTier:
    name: str
    intervals: list[Interval]
    xmin: float = 0.0
    xmax: float | None = None

    def __post_init__(self):
        if self.xmax is None:
            self.xmax = self.intervals[-1].end_s if self.intervals else self.xmin

    def events(self, non_cry_texts=NON_CRY_TEXTS) -> list[Event]:
        """Intervals whose text is not a non-cry word become cry events (adjacent ones merged)."""
        out: list[Event] = []
        for iv in self.intervals:
            if text_label(iv.text, non_cry_texts) != CRY:
                continue
            if out and abs(out[-1].offset_s - iv.start_s) < 1e-12:
                out[-1] = Event(out[-1].onset_s, iv.end_s, CRY)
            else:
                out.append(Event(iv.start_s, iv.end_s, CRY))
        return out


def text_label(text: str, non_cry_texts=NON_CRY_TEXTS) -> int:
    return NON_CRY if text.strip().lower() in non_cry_texts else CRY


# ---------------------------------------------------------------- TextGrid

_KV = re.compile(r'^\s*([A-Za-z_]+)\s*=\s*(.*?)\s*$')
_ITEM = re.compile(r'^\s*item\s*\[(\d+)\]\s*:\s*$')
_INTERVAL = re.compile(r'^\s*(intervals|points)\s*\[(\d+)\]\s*:\s*$')


def _decode(data) -> str:
    if isinstance(data, str):
        return data
    for bom, enc in ((b"\xef\xbb\xbf", "utf-8-sig"), (b"\xff\xfe", "utf-16"), (b"\xfe\xff", "utf-16")):
        if data.startswith(bom):
            return data.decode(enc)
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ValueError("unknown TextGrid encoding (expected UTF-8 or UTF-16 with BOM)") from exc


def _unquote(raw: str) -> str:
    if len(raw) < 2 or raw[0] != '"' or raw[-1] != '"':
        raise ValueError(f"expected a quoted string, got {raw!r}")
    return raw[1:-1].replace('""', '"')


def _number(raw: str, what: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ValueError(f"malformed numeric field {what} = {raw!r}") from None


def parse_textgrid(data) -> list[AnnotationTier]:
    """Parse a long-format TextGrid. Point tiers are skipped with a warning."""
    text = _decode(data)
    if "ooTextFile" not in text[:200]:
        raise ValueError("not a long-format TextGrid (missing ooTextFile header)")
    tiers: list[AnnotationTier] = []
    cur: dict | None = None
    iv: dict | None = None

    def close_interval():
        nonlocal iv
        if cur is not None and iv is not None and cur["class"] == "IntervalTier":
            missing = {"xmin", "xmax", "text"} - set(iv)
            if missing:
                raise ValueError(f"interval in tier {cur.get('name')!r} lacks {sorted(missing)}")
            cur["intervals"].append(Interval(iv["xmin"], iv["xmax"], iv["text"]))
        iv = None

    def close_tier():
        nonlocal cur
        close_interval()
        if cur is None:
            return
        if cur["class"] == "IntervalTier":
            tiers.append(_checked_tier(cur))
        else:
            warnings.warn(f"skipping non-interval tier {cur.get('name')!r} ({cur['class']})")
        cur = None

    for line in text.splitlines():
        if _ITEM.match(line):
            close_tier()
            cur = {"class": None, "intervals": []}
            continue
        if _INTERVAL.match(line):
            close_interval()
            iv = {}
            continue
        m = _KV.match(line)
        if not m or cur is None:
            continue
        key, raw = m.group(1), m.group(2)
        target = iv if iv is not None else cur
        if key == "class":
            cur["class"] = _unquote(raw)
        elif key == "name":
            cur["name"] = _unquote(raw)
        elif key in ("xmin", "xmax", "number"):
            target[key] = _number(raw, key)
        elif key in ("text", "mark"):
            target["text"] = _unquote(raw)
    close_tier()
    return tiers


def _checked_tier(raw: dict) -> AnnotationTier:
    ivs = raw["intervals"]
    name = raw.get("name", "")
    for a in ivs:
        if not a.start_s < a.end_s:
            raise ValueError(f"tier {name!r}: interval [{a.start_s}, {a.end_s}] has start >= end")
    for a, b in zip(ivs, ivs[1:]):
        if abs(a.end_s - b.start_s) > 1e-9:
            raise ValueError(f"tier {name!r}: intervals not contiguous at {a.end_s} / {b.start_s}")
    xmin = raw.get("xmin", ivs[0].start_s if ivs else 0.0)
    xmax = raw.get("xmax", ivs[-1].end_s if ivs else xmin)
    if ivs and (abs(ivs[0].start_s - xmin) > 1e-9 or abs(ivs[-1].end_s - xmax) > 1e-9):
        raise ValueError(f"tier {name!r}: intervals do not cover [{xmin}, {xmax}]")
    return AnnotationTier(name, ivs, xmin, xmax)


def _fmt(x: float) -> str:
    return repr(float(x)) if x != int(x) else str(int(x))


def _quote(s: str) -> str:
    return '"' + s.replace('"', '""') + '"'


def serialize_textgrid(tiers: list[AnnotationTier]) -> str:
    xmin = min((t.xmin for t in tiers), default=0.0)
    xmax = max((t.xmax for t in tiers), default=0.0)
    lines = ['File type = "ooTextFile"', 'Object class = "TextGrid"', "",
             f"xmin = {_fmt(xmin)} ", f"xmax = {_fmt(xmax)} ", "tiers? <exists> ",
             f"size = {len(tiers)} ", "item []: "]
    for i, t in enumerate(tiers, 1):
        lines += [f"    item [{i}]:", '        class = "IntervalTier" ',
                  f"        name = {_quote(t.name)} ", f"        xmin = {_fmt(t.xmin)} ",
                  f"        xmax = {_fmt(t.xmax)} ", f"        intervals: size = {len(t.intervals)} "]
        for j, iv in enumerate(t.intervals, 1):
            lines += [f"        intervals [{j}]:", f"            xmin = {_fmt(iv.start_s)} ",
                      f"            xmax = {_fmt(iv.end_s)} ", f"            text = {_quote(iv.text)} "]
    return "\n".join(lines) + "\n"


def tier_from_events(events, clip_len_s: float, name: str = "cry",
                     cry_text: str = "cry") -> AnnotationTier:
    """Contiguous interval tier with cry events labelled and gaps left empty."""
    ivs: list[Interval] = []
    t = 0.0
    for e in validate_events(events, clip_len_s):
        if e.label != CRY:
            continue
        if e.onset_s > t:
            ivs.append(Interval(t, e.onset_s, ""))
        ivs.append(Interval(e.onset_s, e.offset_s, cry_text))
        t = e.offset_s
    if t < clip_len_s:
        ivs.append(Interval(t, clip_len_s, ""))
    return AnnotationTier(name, ivs, 0.0, clip_len_s)


# ---------------------------------------------------------------- CSV

CSV_HEADER = ["file", "onset_s", "offset_s", "label"]


def parse_csv_annotations(text: str) -> dict[str, list[Event]]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != CSV_HEADER:
        raise ValueError(f"annotation CSV header must be {','.join(CSV_HEADER)}")
    per_file: dict[str, list[Event]] = {}
    for n, row in enumerate(reader, start=2):
        try:
            on, off, lab = float(row["onset_s"]), float(row["offset_s"]), int(row["label"])
        except (TypeError, ValueError):
            raise ValueError(f"line {n}: malformed row {row}") from None
        if off <= on:
            raise ValueError(f"line {n}: offset {off} <= onset {on}")
        per_file.setdefault(row["file"], []).append(Event(on, off, lab))
    return {f: validate_events(evs) for f, evs in per_file.items()}


def annotations_to_csv(per_file: dict[str, list[Event]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for f in sorted(per_file):
        for e in validate_events(per_file[f]):
            w.writerow([f, repr(float(e.onset_s)), repr(float(e.offset_s)), int(e.label)])
    return buf.getvalue()


# ---------------------------------------------------------------- voting / split

def majority_vote(annotators) -> np.ndarray:
    """Per-frame strict majority of cry votes; exact ties go to non-cry."""
    arr = np.asarray([np.asarray(a) for a in annotators]) if len(annotators) else None
    if arr is None:
        raise ValueError("majority_vote needs at least one annotator")
    if arr.ndim != 2:
        raise ValueError("annotator label sequences must share a length")
    votes = (arr == CRY).sum(axis=0)
    return (2 * votes > len(arr)).astype(np.int64)


def vote_files(per_annotator: list[dict[str, list[Event]]], grid: FrameGrid) -> dict[str, np.ndarray]:
    """Vote every file that appears in any annotator's table (missing = no cry)."""
    files = sorted(set().union(*[d.keys() for d in per_annotator]))
    return {f: majority_vote([events_to_labels(d.get(f, []), grid) for d in per_annotator])
            for f in files}


def split(ids, train_frac: float = 0.8, seed: int = 0) -> tuple[list[str], list[str]]:
    """Seeded shuffle of the sorted ids, then a ``round(train_frac * n)`` prefix for training."""
    if not 0 < train_frac < 1:
        raise ValueError("train_frac must lie in (0, 1)")
    ids = sorted(ids)
    if not ids:
        raise ValueError("no ids to split")
    order = np.random.default_rng(seed).permutation(len(ids))
    n_train = int(round(train_frac * len(ids)))
    shuffled = [ids[i] for i in order]
    return shuffled[:n_train], shuffled[n_train:]


def split_manifest(ids, train_frac: float = 0.8, seed: int = 0) -> str:
    train, test = split(ids, train_frac, seed)
    return json.dumps({"seed": seed, "train_frac": train_frac, "train": train, "test": test},
                      indent=2) + "\n"
