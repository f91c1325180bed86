"""Five-term training objective with similarity-weighted alignment loss.

    total = L_video + L_video^a + L_video^v + L_label + mean_ij(lambda_ij * (s_ij - r_ij)^2)

``s`` is the cosine similarity of every (audio segment, visual segment) pair
of TSAM-enhanced features, ``r`` the IoU of the two segments' pseudo-label
class sets, and ``lambda`` a piecewise weight of ``s`` controlled by the
trainable ``mu``:

    lambda = 1                             s <= -0.2
             e^|1-mu|                      -0.2 < s < 0
             e^|1-mu| + (1 - e^|1-mu|) s   s >= 0

``s`` enters ``lambda`` gradient-stopped, so ``mu`` is the only path into the weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .dataset import union_label
from .numerics import BCE_EPS, Tensor

LOW_CUTOFF = -0.2


def video_loss(p_video: Tensor, y) -> Tensor:
    return nx.bce(p_video, y)


def segment_pseudo_loss(p_m: Tensor, pseudo) -> Tensor:
    """Sum over segments of the per-segment mean BCE; averaged over a batch axis if present."""
    T = p_m.shape[-2]
    return nx.scale(nx.bce(p_m, pseudo), float(T))


def video_pseudo_label(audio_pseudo: np.ndarray, visual_pseudo: np.ndarray) -> np.ndarray:
    if audio_pseudo.ndim == 3:
        return np.stack([union_label(a, v) for a, v in zip(audio_pseudo, visual_pseudo)])
    return union_label(audio_pseudo, visual_pseudo)


def label_loss(Y, y) -> float:
    """BCE of the (hard, clamped) pseudo video label against the true one. Constant
    w.r.t. the model."""
    p = np.clip(np.asarray(Y, dtype=np.float64), BCE_EPS, 1.0 - BCE_EPS)
    y = np.asarray(y, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def event_iou_grid(audio_pseudo: np.ndarray, visual_pseudo: np.ndarray) -> np.ndarray:
    """r[..., i, j] = |A_i & V_j| / |A_i | V_j| over class sets; 0 for an empty union."""
    a = np.asarray(audio_pseudo, dtype=np.float64)
    v = np.asarray(visual_pseudo, dtype=np.float64)
    inter = a @ np.swapaxes(v, -1, -2)
    union = a.sum(-1)[..., :, None] + v.sum(-1)[..., None, :] - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


def _branch_coefficients(s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # lambda = const + coef * e^|1-mu|, with both pieces functions of s only
    s = np.asarray(s, dtype=np.float64)
    low = s <= LOW_CUTOFF
    high = s >= 0
    mid = ~low & ~high
    const = np.where(low, 1.0, 0.0) + np.where(high, s, 0.0)
    coef = np.where(mid, 1.0, 0.0) + np.where(high, 1.0 - s, 0.0)
    return const, coef


def lambda_weight(s, mu: Tensor) -> Tensor:
    """Elementwise weight for similarity value(s) ``s`` (treated as constants)."""
    if isinstance(s, Tensor):
        s = s.data
    const, coef = _branch_coefficients(s)
    peak = nx.exp(nx.absolute(nx.sub(nx.Tensor(np.ones(mu.shape)), mu)))
    if const.ndim == 0:
        return nx.add(nx.Tensor(const), nx.mul(nx.Tensor(coef), peak))
    return nx.add(nx.Tensor(const), nx.mul(nx.Tensor(coef), nx.expand(peak, const.shape)))


def avss_loss(fa_seg: Tensor, fv_seg: Tensor, audio_pseudo, visual_pseudo, mu: Tensor,
              frozen_s: np.ndarray | None = None):
    """Weighted alignment loss; returns (loss, lambda, s, r).

    ``frozen_s`` optionally supplies the similarity values fed to ``lambda``
    (used when finite-differencing, where the stopped branch must stay fixed).
    """
    if fa_seg.shape != fv_seg.shape:
        raise nx.ShapeError(f"avss: audio {fa_seg.shape} and visual {fv_seg.shape} shapes differ")
    s = nx.cosine_rows(fa_seg, fv_seg)
    r = event_iou_grid(audio_pseudo, visual_pseudo)
    lam = lambda_weight(s.data if frozen_s is None else frozen_s, mu)
    sq = nx.square(nx.sub(s, nx.Tensor(r)))
    return nx.mean_all(nx.mul(lam, sq)), lam.data, s.data, r


@dataclass
class LossBreakdown:
    l_video: Tensor
    l_a_video: Tensor
    l_v_video: Tensor
    l_label: float
    l_avss_weighted: Tensor
    total: Tensor
    lambda_grid: np.ndarray
    s_grid: np.ndarray
    r_grid: np.ndarray
    label_included: bool = True

    def as_dict(self) -> dict[str, float]:
        return {
            "l_video": self.l_video.item(),
            "l_a_video": self.l_a_video.item(),
            "l_v_video": self.l_v_video.item(),
            "l_label": self.l_label,
            "l_avss_weighted": self.l_avss_weighted.item(),
            "total": self.total.item(),
        }

    def lambda_stats(self) -> dict[str, float]:
        lam = self.lambda_grid
        return {"lambda_min": float(lam.min()), "lambda_max": float(lam.max()),
                "lambda_mean": float(lam.mean())}


def total_loss(batch, prediction, intermediates, params, include_label_loss: bool = True,
               frozen_s: np.ndarray | None = None) -> LossBreakdown:
    """Assemble the objective for a batch (each term is a mean over videos)."""
    l_video = video_loss(prediction.p_video, batch.weak_label)
    l_a = segment_pseudo_loss(prediction.p_a, batch.audio_pseudo)
    l_v = segment_pseudo_loss(prediction.p_v, batch.visual_pseudo)
    Y = video_pseudo_label(batch.audio_pseudo, batch.visual_pseudo)
    l_label = label_loss(Y, batch.weak_label)
    l_avss, lam, s, r = avss_loss(intermediates.fa_hat, intermediates.fv_hat,
                                  batch.audio_pseudo, batch.visual_pseudo, params.mu, frozen_s)
    total = nx.add(nx.add(nx.add(l_video, l_a), l_v), l_avss)
    if include_label_loss:
        total = nx.add(total, nx.Tensor(l_label))
    return LossBreakdown(l_video, l_a, l_v, l_label, l_avss, total, lam, s, r, include_label_loss)
