"""Temporal-spatial attention (TSAM), applied to each modality separately.

Temporal attention pools every segment over its features and runs the two
resulting length-T vectors through one shared two-layer MLP; spatial
attention pools over segments and projects the concatenated pools back to d.
They are applied in sequence, temporal first, as in CBAM.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import Parameter, Tensor


@dataclass
class TsamParams:
    temporal_w1: Parameter  # (T, h)
    temporal_b1: Parameter  # (h,)
    temporal_w2: Parameter  # (h, T)
    temporal_b2: Parameter  # (T,)
    spatial_w: Parameter    # (2d, d)
    spatial_b: Parameter    # (d,)


def hidden_size(T: int, reduction: int) -> int:
    return max(1, T // reduction)


def init_tsam(T: int, d: int, rng: np.random.Generator, prefix: str, reduction: int = 2,
              hidden: int | None = None) -> TsamParams:
    h = hidden or hidden_size(T, reduction)
    return TsamParams(
        temporal_w1=Parameter(nx.uniform_init(rng, T, (T, h)), f"{prefix}.temporal_w1"),
        temporal_b1=Parameter(nx.uniform_init(rng, T, (h,)), f"{prefix}.temporal_b1"),
        temporal_w2=Parameter(nx.uniform_init(rng, h, (h, T)), f"{prefix}.temporal_w2"),
        temporal_b2=Parameter(nx.uniform_init(rng, h, (T,)), f"{prefix}.temporal_b2"),
        spatial_w=Parameter(nx.uniform_init(rng, 2 * d, (2 * d, d)), f"{prefix}.spatial_w"),
        spatial_b=Parameter(nx.uniform_init(rng, 2 * d, (d,)), f"{prefix}.spatial_b"),
    )


def _check(f: Tensor, p: TsamParams) -> None:
    T, d = f.shape[-2], f.shape[-1]
    if p.temporal_w1.shape[0] != T or p.spatial_w.shape != (2 * d, d):
        raise nx.ShapeError(
            f"features of shape {f.shape} do not match TSAM parameters "
            f"(T={p.temporal_w1.shape[0]}, d={p.spatial_w.shape[1]})")


def _shared_mlp(x: Tensor, p: TsamParams) -> Tensor:
    hid = nx.relu(nx.linear(x, p.temporal_w1, p.temporal_b1))
    return nx.linear(hid, p.temporal_w2, p.temporal_b2)


def temporal_attention(f: Tensor, p: TsamParams) -> Tensor:
    """Per-segment weights in (0, 1): shape (..., T)."""
    _check(f, p)
    avg = nx.pool_over_axis(f, -1, "mean")
    mx = nx.pool_over_axis(f, -1, "max")
    return nx.sigmoid(nx.add(_shared_mlp(avg, p), _shared_mlp(mx, p)))


def spatial_attention(f: Tensor, p: TsamParams) -> Tensor:
    """Per-feature weights in (0, 1): shape (..., d)."""
    _check(f, p)
    axis = f.ndim - 2
    pooled = nx.concat([nx.pool_over_axis(f, axis, "mean"), nx.pool_over_axis(f, axis, "max")], axis=-1)
    return nx.sigmoid(nx.linear(pooled, p.spatial_w, p.spatial_b))


def _along_features(w: Tensor, shape) -> Tensor:
    return nx.expand(nx.reshape(w, w.shape + (1,)), shape)


def _along_segments(s: Tensor, shape) -> Tensor:
    return nx.expand(nx.reshape(s, s.shape[:-1] + (1, s.shape[-1])), shape)


def apply_tsam(f: Tensor, p: TsamParams) -> Tensor:
    refined = nx.mul(_along_features(temporal_attention(f, p), f.shape), f)
    return nx.mul(_along_segments(spatial_attention(refined, p), f.shape), refined)
