"""Segment- and event-level F-scores for audio-visual video parsing.

Per video, five scores are computed at each level:

* A, V: audio / visual predictions against the matching ground truth.
* AV: binarised p_av against the AND of the audio and visual ground truth.
* Type@AV: mean of A, V and AV.
* Event@AV: audio and visual decisions pooled into one count (TP, FP and FN summed
  over both modalities).

Corpus scores are means over videos. A video with nothing predicted and nothing
to find scores 1.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .predictor import Prediction, predict_events

FIELDS = ("seg_a", "seg_v", "seg_av", "seg_type", "seg_event",
          "evt_a", "evt_v", "evt_av", "evt_type", "evt_event")


@dataclass(frozen=True, order=True)
class EventInterval:
    cls: int
    start: int
    end: int
    modality: str = "audio"

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"invalid interval [{self.start}, {self.end})")


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def f1(self) -> float:
        if self.tp == 0 and self.fp == 0 and self.fn == 0:
            return 1.0
        return 2 * self.tp / (2 * self.tp + self.fp + self.fn)


def extract_events(grid: np.ndarray, modality: str = "audio") -> list[EventInterval]:
    """Maximal runs of positive segments, per class, sorted by (class, start)."""
    grid = np.asarray(grid).astype(bool)
    events = []
    for c in range(grid.shape[1]):
        col = np.concatenate([[False], grid[:, c], [False]]).astype(np.int8)
        edges = np.flatnonzero(np.diff(col))
        for start, end in zip(edges[::2], edges[1::2]):
            events.append(EventInterval(c, int(start), int(end), modality))
    return events


def rasterize(events: Iterable[EventInterval], T: int, C: int) -> np.ndarray:
    grid = np.zeros((T, C), np.uint8)
    for e in events:
        grid[e.start:e.end, e.cls] = 1
    return grid


def segment_counts(pred_grid, gt_grid) -> Counts:
    pred = np.asarray(pred_grid).astype(bool)
    gt = np.asarray(gt_grid).astype(bool)
    if pred.shape != gt.shape:
        raise ValueError(f"segment_f1: shapes {pred.shape} and {gt.shape} differ")
    return Counts(int(np.sum(pred & gt)), int(np.sum(pred & ~gt)), int(np.sum(~pred & gt)))


def segment_f1(pred_grid, gt_grid) -> float:
    return segment_counts(pred_grid, gt_grid).f1()


def temporal_iou(a: EventInterval, b: EventInterval) -> float:
    inter = max(0, min(a.end, b.end) - max(a.start, b.start))
    union = (a.end - a.start) + (b.end - b.start) - inter
    return inter / union


def match_events(pred: Sequence[EventInterval], gt: Sequence[EventInterval],
                 iou_threshold: float = 0.5) -> list[tuple[int, int]]:
    """Greedy one-to-one matching within each class, highest IoU first.
    Ties go to the lower (pred, gt) index pair."""
    candidates = []
    for i, p in enumerate(pred):
        for j, g in enumerate(gt):
            if p.cls == g.cls:
                iou = temporal_iou(p, g)
                if iou >= iou_threshold:
                    candidates.append((-iou, i, j))
    candidates.sort()
    used_p, used_g, pairs = set(), set(), []
    for _, i, j in candidates:
        if i not in used_p and j not in used_g:
            used_p.add(i)
            used_g.add(j)
            pairs.append((i, j))
    return pairs


def event_counts(pred_events, gt_events, iou_threshold: float = 0.5) -> Counts:
    tp = len(match_events(pred_events, gt_events, iou_threshold))
    return Counts(tp, len(pred_events) - tp, len(gt_events) - tp)


def event_f1(pred_events, gt_events, iou_threshold: float = 0.5) -> float:
    return event_counts(pred_events, gt_events, iou_threshold).f1()


@dataclass
class MetricsReport:
    seg_a: float
    seg_v: float
    seg_av: float
    seg_type: float
    seg_event: float
    evt_a: float
    evt_v: float
    evt_av: float
    evt_type: float
    evt_event: float

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(FIELDS)
            w.writerow([repr(getattr(self, f)) for f in FIELDS])


def type_at_av(a: float, v: float, av: float) -> float:
    return (a + v + av) / 3.0


def video_scores(grids, sample, iou_threshold: float = 0.5) -> dict[str, float]:
    gt_a = np.asarray(sample.audio_gt).astype(bool)
    gt_v = np.asarray(sample.visual_gt).astype(bool)
    gt_av = gt_a & gt_v
    if grids.audio.shape != gt_a.shape:
        raise ValueError(f"prediction shape {grids.audio.shape} vs ground truth {gt_a.shape} for {sample.id}")

    seg_a = segment_counts(grids.audio, gt_a)
    seg_v = segment_counts(grids.visual, gt_v)
    seg_av = segment_counts(grids.av, gt_av)

    ev = {}
    for key, pg, gg in (("a", grids.audio, gt_a), ("v", grids.visual, gt_v), ("av", grids.av, gt_av)):
        ev[key] = event_counts(extract_events(pg), extract_events(gg), iou_threshold)

    out = {
        "seg_a": seg_a.f1(), "seg_v": seg_v.f1(), "seg_av": seg_av.f1(),
        "seg_event": (seg_a + seg_v).f1(),
        "evt_a": ev["a"].f1(), "evt_v": ev["v"].f1(), "evt_av": ev["av"].f1(),
        "evt_event": (ev["a"] + ev["v"]).f1(),
    }
    out["seg_type"] = type_at_av(out["seg_a"], out["seg_v"], out["seg_av"])
    out["evt_type"] = type_at_av(out["evt_a"], out["evt_v"], out["evt_av"])
    return out


def evaluate(corpus: Iterable[tuple[Prediction, object]], threshold: float = 0.5,
             iou_threshold: float = 0.5) -> MetricsReport:
    """Mean per-video scores over ``(prediction, sample)`` pairs."""
    per_video = [video_scores(predict_events(pred, threshold), sample, iou_threshold)
                 for pred, sample in corpus]
    if not per_video:
        raise ValueError("cannot evaluate an empty corpus")
    n = len(per_video)
    # fsum keeps the mean independent of corpus order
    means = {k: math.fsum(v[k] for v in per_video) / n for k in FIELDS}
    return MetricsReport(**means)
