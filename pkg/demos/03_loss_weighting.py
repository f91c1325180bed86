"""The similarity-dependent weight on the audio-visual alignment term."""

import numpy as np

from link_avvp.losses import avss_loss, event_iou_grid, lambda_weight
from link_avvp.numerics import Parameter, Tensor

np.set_printoptions(precision=3, suppress=True)
s = np.array([-0.6, -0.2, -0.1, 0.0, 0.25, 0.5, 0.75, 1.0])
print("cosine similarity s:", s)
for mu in (0.0, 0.5, 1.0, 1.5):
    print(f"lambda(s; mu={mu}):", lambda_weight(s, Parameter(mu, "mu")).data)
# Strongly dissimilar pairs get weight 1; near-orthogonal pairs get the peak
# e^|1-mu|, decaying linearly back to 1 at s = 1. mu = 1 switches weighting off.

# Target for each (audio segment, visual segment) pair: IoU of their label sets.
audio = np.array([[1, 0, 0], [1, 1, 0], [0, 0, 1]])
visual = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 0]])
print("label-set IoU grid:\n", event_iou_grid(audio, visual))

rng = np.random.default_rng(3)
fa = Parameter(rng.standard_normal((3, 4)), "fa")
fv = Tensor(rng.standard_normal((3, 4)))
mu = Parameter(0.5, "mu")
loss, lam, sim, target = avss_loss(fa, fv, audio, visual, mu)
print("similarities:\n", sim)
print("weights:\n", lam)
print("weighted loss:", loss.item())
loss.backward()
print("d loss / d mu:", mu.grad, " (weights are treated as constants for the features)")
