"""Cross-modal interaction (CMIM) gated by four trainable scalars."""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import numerics as nx
from .numerics import Parameter, Tensor


@dataclass
class CmimParams:
    alpha1: Parameter
    alpha2: Parameter
    beta1: Parameter
    beta2: Parameter


def init_cmim(prefix: str = "cmim") -> CmimParams:
    # residual-identity start: no cross-modal flow until the loss asks for it
    return CmimParams(
        alpha1=Parameter(0.0, f"{prefix}.alpha1"),
        alpha2=Parameter(0.0, f"{prefix}.alpha2"),
        beta1=Parameter(1.0, f"{prefix}.beta1"),
        beta2=Parameter(1.0, f"{prefix}.beta2"),
    )


def cross_attention(query: Tensor, key: Tensor, softmax_scale: bool = False) -> Tensor:
    """Row-stochastic (..., T, T) attention of query segments over key segments."""
    logits = nx.matmul(query, nx.transpose(key))
    if softmax_scale:
        logits = nx.scale(logits, 1.0 / math.sqrt(query.shape[-1]))
    return nx.softmax_rows(logits)


def _gated(a: Tensor, other: Tensor, alpha: Tensor, beta: Tensor, softmax_scale: bool) -> Tensor:
    attn = cross_attention(a, other, softmax_scale)
    values = nx.mul(nx.expand(beta, other.shape), other)
    mixed = nx.matmul(attn, values)
    return nx.add(a, nx.mul(nx.expand(alpha, mixed.shape), mixed))


def cmim_forward(fa: Tensor, fv: Tensor, p: CmimParams, softmax_scale: bool = False):
    """Return (audio_out, visual_out); each output is ``f + f_cross`` where
    ``f_cross = f + alpha * softmax(f other^T) (beta * other)``."""
    if fa.shape != fv.shape:
        raise nx.ShapeError(f"cmim: audio {fa.shape} and visual {fv.shape} shapes differ")
    fac = _gated(fa, fv, p.alpha2, p.beta2, softmax_scale)
    fvc = _gated(fv, fa, p.alpha1, p.beta1, softmax_scale)
    return nx.add(fa, fac), nx.add(fv, fvc)
