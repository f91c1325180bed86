"""Temporal-spatial attention, cross-modal interaction and semantic fusion on one video."""

import numpy as np

from link_avvp import numerics as nx
from link_avvp.attention import apply_tsam, init_tsam, spatial_attention, temporal_attention
from link_avvp.dataset import GenConfig, generate
from link_avvp.interaction import cmim_forward, init_cmim
from link_avvp.numerics import Tensor
from link_avvp.semantics import build_fixture_table, fuse_semantics, init_plsim, semantic_features

np.set_printoptions(precision=3, suppress=True)
rng = np.random.default_rng(0)
cfg = GenConfig(num_videos=1, T=6, d=8, C=3, seed=2)
video = generate(cfg)[0]
fa, fv = Tensor(video.audio_features), Tensor(video.visual_features)

# Segment weights W (one per segment) and feature weights S (one per dimension).
tsam = init_tsam(cfg.T, cfg.d, rng, prefix="tsam.audio")
W = temporal_attention(fa, tsam)
print("temporal weights:", W.data)
# spatial weights are computed from the segment-weighted features
f_tilde = nx.mul(fa, nx.expand(nx.reshape(W, (cfg.T, 1)), fa.shape))
print("spatial weights: ", spatial_attention(f_tilde, tsam).data)
fa_hat = apply_tsam(fa, tsam)
print("attention only shrinks values:", bool(np.all(np.abs(fa_hat.data) <= np.abs(fa.data))))

# Each modality attends to the other; alpha gates how much of it is mixed in.
fv_hat = apply_tsam(fv, init_tsam(cfg.T, cfg.d, rng, prefix="tsam.visual"))
cmim = init_cmim()
out_a, _ = cmim_forward(fa_hat, fv_hat, cmim)
print("alpha = 0 gives exactly twice the input:", np.array_equal(out_a.data, 2 * fa_hat.data))
cmim.alpha2.data = 0.5
out_a, _ = cmim_forward(fa_hat, fv_hat, cmim)
print("alpha2 = 0.5, change vs doubling:", np.abs(out_a.data - 2 * fa_hat.data).max())

# Pseudo labels pick caption embeddings; two MLPs turn them into scale and shift.
table = build_fixture_table(cfg.resolved_class_names(), d_text=8, seed=0)
print("captions:", table.audio_captions)
sem = Tensor(semantic_features(video.audio_pseudo, table, "audio"))
plsim = init_plsim(8, cfg.d, rng)
fused = fuse_semantics(out_a, sem, plsim, "audio")
print("fresh fusion is the identity:", np.array_equal(fused.data, out_a.data))
