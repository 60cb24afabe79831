"""
Snapshot compressive imaging: the measurement model
===================================================

A video cube of T frames is modulated by a per-frame binary mask and summed
into one 2D snapshot. The operator is never built as a matrix; this script
checks the fast paths against a small dense copy.
"""

import numpy as np

from sciunfold import build_operator, generate_mask, simulate_measurement
from sciunfold.data_io import moving_rectangles
from sciunfold.operator import dense_phi

# a synthetic clip and a Bernoulli(0.5) mask
video = moving_rectangles(1, (32, 32, 8), seed=0)[0]
mask = generate_mask(video.shape, 0.5, seed=1)
op = build_operator(mask)

y = simulate_measurement(video, op, noise_std=0.01, seed=2)
print("cube", video.shape, "-> snapshot", y.shape)

# psi counts how many frames see each pixel, so Phi Phi^T is diagonal
print("psi range:", op.psi.min(), "to", op.psi.max())

# dense check on a tiny instance
small = generate_mask((4, 4, 3), 0.5, seed=3)
phi = dense_phi(build_operator(small))
gram = phi @ phi.T
print("Phi Phi^T diagonal:", np.array_equal(gram, np.diag(np.diag(gram))))

# adjoint identity <Phi x, y> = <x, Phi^T y>
rng = np.random.default_rng(4)
x = rng.standard_normal(video.shape)
r = rng.standard_normal(y.shape)
print("adjoint gap:", abs(np.vdot(op(x), r) - np.vdot(x, op.T(r))))

# the back-projection is a poor but cheap first guess
x0 = op.T(y)
print("back-projection error:", np.linalg.norm(x0 - video) / np.linalg.norm(video))
