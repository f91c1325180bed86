"""Synthetic audio-visual corpus: what the generator produces and how it is stored."""

import tempfile
from pathlib import Path

import numpy as np

from link_avvp.dataset import GenConfig, generate, load, misaligned_event_count, save

# Ten segments, five classes, 32-dim features per modality.
cfg = GenConfig(num_videos=8, alignment_rate=0.5, pseudo_corruption_rate=0.1, seed=1)
samples = generate(cfg)
print("classes:", cfg.resolved_class_names())

first = samples[0]
print("video", first.id, "features", first.audio_features.shape, first.audio_features.dtype)
print("weak label (video-level):", first.weak_label)
for e in first.events:
    where = "audio+visual" if e.audio and e.visual else ("audio only" if e.audio else "visual only")
    print(f"  event {cfg.resolved_class_names()[e.cls]!r} segments [{e.start}, {e.end}) {where}")

# Rows are segments, columns classes.
print("audio ground truth:\n", first.audio_gt.T)
print("visual ground truth:\n", first.visual_gt.T)
print("audio pseudo labels (10% cells flipped):\n", first.audio_pseudo.T)

print("events heard but not seen (or vice versa):", misaligned_event_count(samples))

# A segment's feature is closest to the prototype of the class active there.
active = np.flatnonzero(first.audio_gt.any(axis=1))
print("segments with audible events:", active)

with tempfile.TemporaryDirectory() as tmp:
    save(samples, tmp, gen_config=cfg)
    print("on disk:", sorted(p.name for p in Path(tmp).iterdir()))
    print("round trip exact:", load(tmp) == samples)
