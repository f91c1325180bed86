"""Full forward pass: features -> TSAM -> CMIM -> PLSIM -> per-modality heads.

Segment probabilities come from a sigmoid linear head per modality. The
audio-visual probability is the product of the two, and the video-level
probability is the max over segments and both modalities.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields, is_dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nx
from .attention import TsamParams, apply_tsam, init_tsam
from .dataset import VideoSample
from .interaction import CmimParams, cmim_forward, init_cmim
from .numerics import Parameter, Tensor
from .semantics import CaptionTable, PlsimParams, fuse_semantics, init_plsim, semantic_features

CHECKPOINT_MAGIC = b"LNKP"
CHECKPOINT_VERSION = 1
MU_INIT = 0.5


class CheckpointError(ValueError):
    pass


@dataclass
class HeadParams:
    w: Parameter  # (d, C)
    b: Parameter  # (C,)


@dataclass
class ModelParameters:
    tsam_audio: TsamParams
    tsam_visual: TsamParams
    cmim: CmimParams
    plsim: PlsimParams
    head_audio: HeadParams
    head_visual: HeadParams
    mu: Parameter

    def named_parameters(self) -> list[tuple[str, Parameter]]:
        out = []

        def walk(node):
            if isinstance(node, Parameter):
                out.append((node.name, node))
            elif is_dataclass(node):
                for f in fields(node):
                    walk(getattr(node, f.name))

        walk(self)
        names = [n for n, _ in out]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names in model")
        return out

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise CheckpointError(f"parameter names differ: missing={missing}, unexpected={extra}")
        for name, p in own.items():
            if p.shape != state[name].shape:
                raise CheckpointError(f"{name}: checkpoint shape {state[name].shape} vs model {p.shape}")
            p.data = np.array(state[name], dtype=np.float64)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    @property
    def dims(self) -> dict[str, int]:
        T = self.tsam_audio.temporal_w1.shape[0]
        d = self.tsam_audio.spatial_w.shape[1]
        C = self.head_audio.w.shape[1]
        d_text = self.plsim.audio_scale.w1.shape[0]
        return {"T": T, "d": d, "C": C, "d_text": d_text}

    def count(self) -> int:
        return sum(p.data.size for p in self.parameters())


def init_model(dims: dict, seed: int, reduction: int = 2, plsim_hidden: int | None = None,
               tsam_hidden: int | None = None) -> ModelParameters:
    T, d, C = dims["T"], dims["d"], dims["C"]
    d_text = dims.get("d_text", d)
    for k, v in (("T", T), ("d", d), ("C", C), ("d_text", d_text)):
        if v < 1:
            raise ValueError(f"{k} must be positive, got {v}")
    rng = np.random.default_rng(seed)
    return ModelParameters(
        tsam_audio=init_tsam(T, d, rng, "tsam.audio", reduction, tsam_hidden),
        tsam_visual=init_tsam(T, d, rng, "tsam.visual", reduction, tsam_hidden),
        cmim=init_cmim(),
        plsim=init_plsim(d_text, d, rng, hidden=plsim_hidden),
        head_audio=HeadParams(Parameter(nx.uniform_init(rng, d, (d, C)), "head.audio.w"),
                              Parameter(nx.uniform_init(rng, d, (C,)), "head.audio.b")),
        head_visual=HeadParams(Parameter(nx.uniform_init(rng, d, (d, C)), "head.visual.w"),
                               Parameter(nx.uniform_init(rng, d, (C,)), "head.visual.b")),
        mu=Parameter(MU_INIT, "loss.mu"),
    )


# ---------------------------------------------------------------- batching

@dataclass
class Batch:
    ids: list[str]
    audio: np.ndarray          # (B, T, d) float64
    visual: np.ndarray
    audio_pseudo: np.ndarray   # (B, T, C) float64 in {0,1}
    visual_pseudo: np.ndarray
    weak_label: np.ndarray     # (B, C)

    @property
    def size(self) -> int:
        return len(self.ids)


def collate(samples: Sequence[VideoSample]) -> Batch:
    if isinstance(samples, VideoSample):
        samples = [samples]
    if not samples:
        raise ValueError("cannot collate an empty list of samples")
    shapes = {(s.T, s.d, s.C) for s in samples}
    if len(shapes) > 1:
        raise nx.ShapeError(f"samples have inconsistent (T, d, C): {sorted(shapes)}")

    def stack(attr):
        return np.stack([getattr(s, attr) for s in samples]).astype(np.float64)

    return Batch([s.id for s in samples], stack("audio_features"), stack("visual_features"),
                 stack("audio_pseudo"), stack("visual_pseudo"), stack("weak_label"))


@dataclass
class Prediction:
    """Per-video probabilities as plain arrays."""
    p_a: np.ndarray    # (T, C)
    p_v: np.ndarray
    p_av: np.ndarray
    p_video: np.ndarray  # (C,)


@dataclass
class BatchOutput:
    p_a: Tensor      # (B, T, C)
    p_v: Tensor
    p_av: Tensor
    p_video: Tensor  # (B, C)

    def unbatch(self) -> list[Prediction]:
        return [Prediction(self.p_a.data[i].copy(), self.p_v.data[i].copy(),
                           self.p_av.data[i].copy(), self.p_video.data[i].copy())
                for i in range(self.p_a.shape[0])]


@dataclass
class Intermediates:
    fa_hat: Tensor   # after TSAM
    fv_hat: Tensor
    fa_out: Tensor   # after CMIM
    fv_out: Tensor
    Fa: Tensor       # after PLSIM
    Fv: Tensor


def _check_dims(batch: Batch, params: ModelParameters, table: CaptionTable) -> None:
    dims = params.dims
    B, T, d = batch.audio.shape
    C = batch.audio_pseudo.shape[-1]
    if (T, d, C) != (dims["T"], dims["d"], dims["C"]) or table.d_text != dims["d_text"] \
            or len(table.class_names) < C:
        raise nx.ShapeError(
            f"data (T={T}, d={d}, C={C}, d_text={table.d_text}) does not match model "
            f"(T={dims['T']}, d={dims['d']}, C={dims['C']}, d_text={dims['d_text']})")


def forward(batch: Batch | VideoSample | Sequence[VideoSample], params: ModelParameters,
            table: CaptionTable, softmax_scale: bool = False) -> tuple[BatchOutput, Intermediates]:
    if not isinstance(batch, Batch):
        batch = collate(batch)
    _check_dims(batch, params, table)
    fa = Tensor(batch.audio)
    fv = Tensor(batch.visual)
    fa_hat = apply_tsam(fa, params.tsam_audio)
    fv_hat = apply_tsam(fv, params.tsam_visual)
    fa_out, fv_out = cmim_forward(fa_hat, fv_hat, params.cmim, softmax_scale)
    sem_a = Tensor(semantic_features(batch.audio_pseudo, table, "audio"))
    sem_v = Tensor(semantic_features(batch.visual_pseudo, table, "visual"))
    Fa = fuse_semantics(fa_out, sem_a, params.plsim, "audio")
    Fv = fuse_semantics(fv_out, sem_v, params.plsim, "visual")
    p_a = nx.sigmoid(nx.linear(Fa, params.head_audio.w, params.head_audio.b))
    p_v = nx.sigmoid(nx.linear(Fv, params.head_visual.w, params.head_visual.b))
    p_av = nx.mul(p_a, p_v)
    p_video = nx.pool_over_axis(nx.concat([p_a, p_v], axis=1), 1, "max")
    return BatchOutput(p_a, p_v, p_av, p_video), Intermediates(fa_hat, fv_hat, fa_out, fv_out, Fa, Fv)


def predict(samples: Sequence[VideoSample], params: ModelParameters, table: CaptionTable,
            softmax_scale: bool = False) -> list[Prediction]:
    out, _ = forward(collate(samples), params, table, softmax_scale)
    return out.unbatch()


@dataclass
class EventGrids:
    audio: np.ndarray   # (T, C) uint8
    visual: np.ndarray
    av: np.ndarray


def predict_events(pred: Prediction, threshold: float = 0.5) -> EventGrids:
    return EventGrids((pred.p_a >= threshold).astype(np.uint8),
                      (pred.p_v >= threshold).astype(np.uint8),
                      (pred.p_av >= threshold).astype(np.uint8))


# ---------------------------------------------------------------- checkpoints

def encode_checkpoint(params: ModelParameters) -> bytes:
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(params.named_parameters()))]
    for name, p in params.named_parameters():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<I", p.ndim) + struct.pack(f"<{p.ndim}I", *p.shape))
        parts.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_checkpoint(payload: bytes) -> dict[str, np.ndarray]:
    if payload[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {payload[:4]!r}")
    try:
        version, count = struct.unpack_from("<II", payload, 4)
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        off = 12
        state = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", payload, off)
            off += 4
            name = payload[off:off + n].decode("utf-8")
            off += n
            (rank,) = struct.unpack_from("<I", payload, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}I", payload, off)
            off += 4 * rank
            size = int(np.prod(shape, dtype=np.int64))
            if off + 8 * size > len(payload):
                raise CheckpointError(f"truncated payload for tensor {name!r}")
            state[name] = np.frombuffer(payload, "<f8", count=size, offset=off).reshape(shape).astype(np.float64)
            off += 8 * size
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    if off != len(payload):
        raise CheckpointError(f"{len(payload) - off} trailing bytes after the last tensor")
    return state


def save_checkpoint(params: ModelParameters, path) -> None:
    Path(path).write_bytes(encode_checkpoint(params))


def load_checkpoint(path) -> ModelParameters:
    return model_from_state(decode_checkpoint(Path(path).read_bytes()))


def model_from_state(state: dict[str, np.ndarray]) -> ModelParameters:
    try:
        T, h = state["tsam.audio.temporal_w1"].shape
        d, C = state["head.audio.w"].shape
        d_text, hidden = state["plsim.audio_scale.w1"].shape
    except KeyError as exc:
        raise CheckpointError(f"checkpoint lacks tensor {exc}") from None
    params = init_model({"T": T, "d": d, "C": C, "d_text": d_text}, seed=0,
                        tsam_hidden=h, plsim_hidden=hidden)
    params.load_state_dict(state)
    return params
