"""Pseudo-label semantic interaction (PLSIM).

Each segment's pseudo-labelled classes are looked up in a frozen caption
embedding table. The embedding drives two MLPs per modality, one giving a
scale and one a bias, which modulate the fused feature with a residual:
``F = f * scale + bias + f``.

The table is a deterministic fixture that stands in for frozen text encoders.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numerics as nx
from .numerics import Parameter, Tensor

VISUAL_PREFIX = "A photo of"
AUDIO_PREFIX = "this is a sound of"
MODALITIES = ("audio", "visual")
EMBED_MAGIC = b"LNKT"


class CaptionTableError(ValueError):
    pass


@dataclass(frozen=True)
class CaptionTable:
    class_names: tuple[str, ...]
    audio_captions: tuple[str, ...]
    visual_captions: tuple[str, ...]
    audio_embeddings: np.ndarray   # (C, d_text), read-only
    visual_embeddings: np.ndarray

    @property
    def d_text(self) -> int:
        return self.audio_embeddings.shape[1]

    def embeddings(self, modality: str) -> np.ndarray:
        if modality == "audio":
            return self.audio_embeddings
        if modality == "visual":
            return self.visual_embeddings
        raise ValueError(f"modality must be 'audio' or 'visual', got {modality!r}")

    def captions(self, modality: str) -> tuple[str, ...]:
        return self.audio_captions if modality == "audio" else self.visual_captions

    def __eq__(self, other):
        if not isinstance(other, CaptionTable):
            return NotImplemented
        return (self.class_names == other.class_names
                and self.audio_captions == other.audio_captions
                and self.visual_captions == other.visual_captions
                and np.array_equal(self.audio_embeddings, other.audio_embeddings)
                and np.array_equal(self.visual_embeddings, other.visual_embeddings))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def caption(class_name: str, modality: str) -> str:
    prefix = AUDIO_PREFIX if modality == "audio" else VISUAL_PREFIX
    return f"{prefix} {class_name}"


def build_fixture_table(class_names, d_text: int, seed: int) -> CaptionTable:
    names = tuple(class_names)
    if not names:
        raise CaptionTableError("class list is empty")
    if len(set(names)) != len(names):
        raise CaptionTableError("duplicate class names")
    rng = np.random.default_rng(seed)
    embs = []
    for _ in MODALITIES:
        e = rng.standard_normal((len(names), d_text))
        embs.append(_frozen(e / np.linalg.norm(e, axis=1, keepdims=True)))
    return CaptionTable(
        class_names=names,
        audio_captions=tuple(caption(n, "audio") for n in names),
        visual_captions=tuple(caption(n, "visual") for n in names),
        audio_embeddings=embs[0],
        visual_embeddings=embs[1],
    )


def save_table(table: CaptionTable, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "class_names": list(table.class_names),
        "audio_captions": list(table.audio_captions),
        "visual_captions": list(table.visual_captions),
        "d_text": table.d_text,
    }
    (directory / "captions.json").write_text(json.dumps(meta, indent=2))
    C, dt = table.audio_embeddings.shape
    header = EMBED_MAGIC + np.array([C, dt], dtype="<u4").tobytes()
    body = np.concatenate([table.audio_embeddings, table.visual_embeddings]).astype("<f8").tobytes()
    (directory / "captions.bin").write_bytes(header + body)


def load_table(directory) -> CaptionTable:
    directory = Path(directory)
    meta = json.loads((directory / "captions.json").read_text())
    raw = (directory / "captions.bin").read_bytes()
    if raw[:4] != EMBED_MAGIC:
        raise CaptionTableError(f"captions.bin: bad magic {raw[:4]!r}")
    C, dt = (int(x) for x in np.frombuffer(raw, "<u4", count=2, offset=4))
    if len(raw) != 12 + 2 * C * dt * 8 or C != len(meta["class_names"]):
        raise CaptionTableError("captions.bin: size disagrees with captions.json")
    emb = np.frombuffer(raw, "<f8", offset=12).reshape(2 * C, dt)
    return CaptionTable(
        class_names=tuple(meta["class_names"]),
        audio_captions=tuple(meta["audio_captions"]),
        visual_captions=tuple(meta["visual_captions"]),
        audio_embeddings=_frozen(emb[:C]),
        visual_embeddings=_frozen(emb[C:]),
    )


def semantic_features(pseudo: np.ndarray, table: CaptionTable, modality: str) -> np.ndarray:
    """Mean caption embedding of each segment's active classes; zero when none.

    ``pseudo`` is (T, C) or (B, T, C) and {0, 1}-valued.
    """
    emb = table.embeddings(modality)
    pseudo = np.asarray(pseudo)
    if pseudo.shape[-1] > emb.shape[0]:
        raise IndexError(f"pseudo labels cover {pseudo.shape[-1]} classes, table has {emb.shape[0]}")
    mask = pseudo.astype(np.float64)
    counts = mask.sum(axis=-1, keepdims=True)
    total = mask @ emb[: pseudo.shape[-1]]
    return np.divide(total, counts, out=np.zeros_like(total), where=counts > 0)


@dataclass
class Mlp:
    w1: Parameter
    b1: Parameter
    w2: Parameter
    b2: Parameter

    def __call__(self, x: Tensor) -> Tensor:
        return nx.linear(nx.relu(nx.linear(x, self.w1, self.b1)), self.w2, self.b2)


def init_mlp(d_in: int, hidden: int, d_out: int, rng, prefix: str, zero_last: bool = True) -> Mlp:
    w2 = np.zeros((hidden, d_out)) if zero_last else nx.uniform_init(rng, hidden, (hidden, d_out))
    b2 = np.zeros(d_out) if zero_last else nx.uniform_init(rng, hidden, (d_out,))
    return Mlp(
        w1=Parameter(nx.uniform_init(rng, d_in, (d_in, hidden)), f"{prefix}.w1"),
        b1=Parameter(nx.uniform_init(rng, d_in, (hidden,)), f"{prefix}.b1"),
        w2=Parameter(w2, f"{prefix}.w2"),
        b2=Parameter(b2, f"{prefix}.b2"),
    )


@dataclass
class PlsimParams:
    audio_scale: Mlp
    audio_bias: Mlp
    visual_scale: Mlp
    visual_bias: Mlp

    def pair(self, modality: str) -> tuple[Mlp, Mlp]:
        if modality == "audio":
            return self.audio_scale, self.audio_bias
        return self.visual_scale, self.visual_bias


def init_plsim(d_text: int, d: int, rng, prefix: str = "plsim", hidden: int | None = None) -> PlsimParams:
    hidden = hidden or d
    return PlsimParams(*(init_mlp(d_text, hidden, d, rng, f"{prefix}.{name}")
                         for name in ("audio_scale", "audio_bias", "visual_scale", "visual_bias")))


def fuse_semantics(f_out: Tensor, semantic: Tensor, p: PlsimParams, modality: str) -> Tensor:
    if f_out.shape[:-1] != semantic.shape[:-1]:
        raise nx.ShapeError(f"fuse_semantics: features {f_out.shape} vs semantics {semantic.shape}")
    scale_mlp, bias_mlp = p.pair(modality)
    gamma = scale_mlp(semantic)
    bias = bias_mlp(semantic)
    if gamma.shape != f_out.shape:
        raise nx.ShapeError(f"fuse_semantics: MLP output {gamma.shape} vs features {f_out.shape}")
    return nx.add(nx.add(nx.mul(f_out, gamma), bias), f_out)
