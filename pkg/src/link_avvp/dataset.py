"""Synthetic LLP-shaped videos and their on-disk format.

Layout of a dataset directory::

    manifest.json          ids, shapes, class names, generator config
    videos/<id>.bin        "LNK1", u32 T, d, C, audio f32[T*d], visual f32[T*d],
                           audio_gt, visual_gt, audio_pseudo, visual_pseudo (u8[T*C] each),
                           weak label u8[C]; all little-endian
"""

from __future__ import annotations

import json
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"LNK1"
MANIFEST_VERSION = 1
DEFAULT_CLASS_NAMES = ("dog", "speech", "car", "guitar", "baby_cry")


class DatasetFormatError(ValueError):
    """Malformed or truncated dataset file."""


class MissingVideoError(FileNotFoundError):
    """The manifest references a video file that does not exist."""


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass
class GenConfig:
    num_videos: int = 64
    T: int = 10
    d: int = 32
    C: int = 5
    events_per_video: tuple[int, int] = (1, 3)
    alignment_rate: float = 0.7
    pseudo_corruption_rate: float = 0.0
    feature_noise_sigma: float = 0.05
    seed: int = 0
    class_names: list[str] | None = None

    def validate(self) -> None:
        for name in ("num_videos", "T", "d", "C"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(name, f"must be an integer >= 1, got {v!r}")
        for name in ("alignment_rate", "pseudo_corruption_rate"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not 0.0 <= v <= 1.0:
                raise ConfigError(name, f"must lie in [0, 1], got {v!r}")
        if not isinstance(self.feature_noise_sigma, (int, float)) or self.feature_noise_sigma < 0:
            raise ConfigError("feature_noise_sigma", f"must be >= 0, got {self.feature_noise_sigma!r}")
        lo, hi = self.events_per_video
        if not 1 <= lo <= hi:
            raise ConfigError("events_per_video", f"need 1 <= min <= max, got {self.events_per_video!r}")
        if hi > self.C:
            raise ConfigError("events_per_video",
                              f"max {hi} exceeds the number of distinct classes C={self.C}")
        names = self.resolved_class_names()
        if len(names) != self.C:
            raise ConfigError("class_names", f"expected {self.C} names, got {len(names)}")
        if len(set(names)) != len(names):
            raise ConfigError("class_names", "duplicate class names")

    def resolved_class_names(self) -> list[str]:
        if self.class_names is not None:
            return list(self.class_names)
        if self.C <= len(DEFAULT_CLASS_NAMES):
            return list(DEFAULT_CLASS_NAMES[: self.C])
        return [f"class_{i}" for i in range(self.C)]

    @classmethod
    def from_dict(cls, raw: dict) -> "GenConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown field")
        raw = dict(raw)
        if "events_per_video" in raw:
            epv = raw["events_per_video"]
            if not (isinstance(epv, (list, tuple)) and len(epv) == 2):
                raise ConfigError("events_per_video", "must be a [min, max] pair")
            raw["events_per_video"] = (int(epv[0]), int(epv[1]))
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        out = asdict(self)
        out["events_per_video"] = list(self.events_per_video)
        return out


@dataclass
class Event:
    cls: int
    start: int
    end: int
    audio: bool
    visual: bool


@dataclass(eq=False)
class VideoSample:
    id: str
    audio_features: np.ndarray   # (T, d) float32
    visual_features: np.ndarray  # (T, d) float32
    audio_gt: np.ndarray         # (T, C) uint8
    visual_gt: np.ndarray
    audio_pseudo: np.ndarray
    visual_pseudo: np.ndarray
    weak_label: np.ndarray       # (C,) uint8
    events: list[Event] = field(default_factory=list)

    @property
    def T(self) -> int:
        return self.audio_features.shape[0]

    @property
    def d(self) -> int:
        return self.audio_features.shape[1]

    @property
    def C(self) -> int:
        return self.audio_gt.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, VideoSample):
            return NotImplemented
        return self.id == other.id and all(
            a.dtype == b.dtype and np.array_equal(a, b)
            for a, b in zip(self._arrays(), other._arrays()))

    def _arrays(self):
        return (self.audio_features, self.visual_features, self.audio_gt, self.visual_gt,
                self.audio_pseudo, self.visual_pseudo, self.weak_label)


def union_label(*grids: np.ndarray) -> np.ndarray:
    """Video-level label: class present at any segment of any grid."""
    return np.any(np.stack([g.astype(bool).any(axis=0) for g in grids]), axis=0).astype(np.uint8)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def class_prototypes(C: int, d: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    # audio and visual prototypes of a class share a common direction so that
    # co-occurring events produce correlated cross-modal features
    shared = _unit(rng.standard_normal((C, d)))
    audio = _unit(shared + _unit(rng.standard_normal((C, d))))
    visual = _unit(shared + _unit(rng.standard_normal((C, d))))
    return audio, visual


def _render(grid: np.ndarray, protos: np.ndarray, sigma: float, rng) -> np.ndarray:
    T = grid.shape[0]
    feats = grid.astype(np.float64) @ protos
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    feats = np.divide(feats, norms, out=np.zeros_like(feats), where=norms > 0)
    if sigma > 0:
        feats = feats + sigma * rng.standard_normal((T, protos.shape[1]))
    return feats.astype(np.float32)


def generate(cfg: GenConfig) -> list[VideoSample]:
    """Generate ``cfg.num_videos`` synthetic videos, deterministically from ``cfg.seed``."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    T, C = cfg.T, cfg.C
    proto_a, proto_v = class_prototypes(C, cfg.d, rng)
    lo, hi = cfg.events_per_video
    width = len(str(max(cfg.num_videos - 1, 1)))
    samples = []
    for n in range(cfg.num_videos):
        k = int(rng.integers(lo, hi + 1))
        classes = rng.choice(C, size=k, replace=False)
        audio_gt = np.zeros((T, C), np.uint8)
        visual_gt = np.zeros((T, C), np.uint8)
        events = []
        for c in classes:
            length = int(rng.integers(1, T + 1))
            start = int(rng.integers(0, T - length + 1))
            if rng.random() < cfg.alignment_rate:
                in_a = in_v = True
            else:
                in_a = bool(rng.random() < 0.5)
                in_v = not in_a
            if in_a:
                audio_gt[start:start + length, c] = 1
            if in_v:
                visual_gt[start:start + length, c] = 1
            events.append(Event(int(c), start, start + length, in_a, in_v))
        events.sort(key=lambda e: (e.cls, e.start))
        audio = _render(audio_gt, proto_a, cfg.feature_noise_sigma, rng)
        visual = _render(visual_gt, proto_v, cfg.feature_noise_sigma, rng)
        q = cfg.pseudo_corruption_rate
        audio_pseudo = audio_gt ^ (rng.random((T, C)) < q).astype(np.uint8)
        visual_pseudo = visual_gt ^ (rng.random((T, C)) < q).astype(np.uint8)
        samples.append(VideoSample(
            id=f"vid{n:0{width}d}",
            audio_features=audio, visual_features=visual,
            audio_gt=audio_gt, visual_gt=visual_gt,
            audio_pseudo=audio_pseudo, visual_pseudo=visual_pseudo,
            weak_label=union_label(audio_gt, visual_gt),
            events=events,
        ))
    return samples


def misaligned_event_count(samples) -> int:
    return sum(1 for s in samples for e in s.events if e.audio != e.visual)


# ---------------------------------------------------------------- persistence

_HEADER = struct.Struct("<4sIII")


def encode_video(s: VideoSample) -> bytes:
    parts = [_HEADER.pack(MAGIC, s.T, s.d, s.C)]
    for feats in (s.audio_features, s.visual_features):
        parts.append(np.ascontiguousarray(feats, dtype="<f4").tobytes())
    for grid in (s.audio_gt, s.visual_gt, s.audio_pseudo, s.visual_pseudo, s.weak_label):
        parts.append(np.ascontiguousarray(grid, dtype=np.uint8).tobytes())
    return b"".join(parts)


def decode_video(vid: str, payload: bytes) -> VideoSample:
    if len(payload) < _HEADER.size:
        raise DatasetFormatError(f"{vid}: truncated header ({len(payload)} bytes)")
    magic, T, d, C = _HEADER.unpack_from(payload)
    if magic != MAGIC:
        raise DatasetFormatError(f"{vid}: bad magic {magic!r}, expected {MAGIC!r}")
    expected = _HEADER.size + 2 * 4 * T * d + 4 * T * C + C
    if len(payload) != expected:
        raise DatasetFormatError(f"{vid}: payload is {len(payload)} bytes, expected {expected}")
    off = _HEADER.size

    def take(count, dtype, shape):
        nonlocal off
        arr = np.frombuffer(payload, dtype=dtype, count=count, offset=off).reshape(shape)
        off += count * np.dtype(dtype).itemsize
        return arr.astype(np.dtype(dtype).newbyteorder("="))

    audio = take(T * d, "<f4", (T, d))
    visual = take(T * d, "<f4", (T, d))
    grids = [take(T * C, np.uint8, (T, C)) for _ in range(4)]
    weak = take(C, np.uint8, (C,))
    return VideoSample(vid, audio, visual, *grids, weak_label=weak)


def save(samples, directory, class_names=None, gen_config: GenConfig | None = None) -> Path:
    directory = Path(directory)
    (directory / "videos").mkdir(parents=True, exist_ok=True)
    if not samples:
        raise ValueError("cannot save an empty dataset")
    first = samples[0]
    if class_names is None:
        class_names = gen_config.resolved_class_names() if gen_config else [f"class_{i}" for i in range(first.C)]
    for s in samples:
        (directory / "videos" / f"{s.id}.bin").write_bytes(encode_video(s))
    manifest = {
        "format_version": MANIFEST_VERSION,
        "T": first.T, "d": first.d, "C": first.C,
        "class_names": list(class_names),
        "ids": [s.id for s in samples],
        "events": {s.id: [asdict(e) for e in s.events] for s in samples},
        "gen_config": gen_config.to_dict() if gen_config else None,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return directory


def read_manifest(directory) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.is_file():
        raise MissingVideoError(f"no manifest.json in {directory}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"manifest.json is not valid JSON: {exc}") from None
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise DatasetFormatError(f"unsupported manifest version {manifest.get('format_version')!r}")
    return manifest


def load(directory, threads: int | None = None) -> list[VideoSample]:
    directory = Path(directory)
    manifest = read_manifest(directory)
    T, d, C = manifest["T"], manifest["d"], manifest["C"]
    events = manifest.get("events", {})
    if threads is None:
        threads = int(os.environ.get("LINK_THREADS", "1"))

    def load_one(vid: str) -> VideoSample:
        path = directory / "videos" / f"{vid}.bin"
        if not path.is_file():
            raise MissingVideoError(f"video {vid!r} listed in manifest but {path} is missing")
        s = decode_video(vid, path.read_bytes())
        if (s.T, s.d, s.C) != (T, d, C):
            raise DatasetFormatError(
                f"{vid}: file shape T={s.T}, d={s.d}, C={s.C} disagrees with manifest T={T}, d={d}, C={C}")
        s.events = [Event(**e) for e in events.get(vid, [])]
        return s

    ids = manifest["ids"]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(load_one, ids))
    return [load_one(v) for v in ids]


def split(samples, train_fraction: float, seed: int):
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(samples)
    n_train = int(round(train_fraction * n))
    if n_train == 0 or n_train == n:
        raise ValueError(f"split of {n} samples at {train_fraction} leaves one side empty")
    order = np.random.default_rng(seed).permutation(n)
    train = [samples[i] for i in sorted(order[:n_train])]
    held = [samples[i] for i in sorted(order[n_train:])]
    return train, held
