"""Frame and event metrics on a toy clip, step by step."""
import numpy as np

from crstc import metrics, segmentation
from crstc.dsp import FrameGrid
from crstc.segmentation import Event

grid = FrameGrid.from_frames(160, 0.05)  # 8 s clip, 50 ms frames

# ground truth: two cries
truth_events = [Event(1.0, 2.5, 1), Event(5.0, 6.0, 1)]
truth = segmentation.events_to_labels(truth_events, grid)

# a prediction that finds the first cry late and splits the second one
pred_events = [Event(1.3, 2.5, 1), Event(5.0, 5.4, 1), Event(5.4, 6.2, 1)]
pred = segmentation.events_to_labels(pred_events, grid)

fr = metrics.frame_metrics(pred, truth)
print(f"frames   acc {fr.accuracy:.3f}  f1 {fr.f1:.3f}  (tp {fr.tp}, fp {fr.fp}, fn {fr.fn})")

# events are matched one-to-one by IoU >= 0.5
ev = metrics.event_f1(pred_events, truth_events, iou_threshold=0.5)
print(f"events   f1 {ev.event_f1:.3f}  matches {ev.matches}")

# coverage IoU does not care how a cry is split
print(f"coverage IoU {metrics.event_iou(pred_events, truth_events):.3f}")
merged = segmentation.labels_to_events(pred, grid)
print(f"same after merging runs: {metrics.event_iou(merged, truth_events):.3f}")

# corpus numbers pool frames and event counts over files
rng = np.random.default_rng(0)
files = []
for _ in range(5):
    noisy = np.where(rng.random(160) < 0.05, 1 - truth, truth)
    files.append((noisy, truth, segmentation.labels_to_events(noisy, grid), truth_events))
rep = metrics.evaluate_corpus(files)
print({k: round(rep[k], 3) for k in ("frame_accuracy", "frame_f1", "event_f1", "event_iou")})
