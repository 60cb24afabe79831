"""
Learning the noise schedule by deep unfolding
=============================================

Treats K solver iterations as a network whose only weights are the K
denoiser strengths, trains them with Adam and compares the learned
schedule with the hand-designed ones on held-out clips.
"""

import numpy as np

from sciunfold import (DenoiserSpec, SolverConfig, TrainConfig, build_dataset, build_operator,
                       generate_mask, named_schedule, reconstruct, train, video_report)
from sciunfold.data_io import moving_rectangles

shape = (32, 32, 8)
op = build_operator(generate_mask(shape, 0.5, seed=70))
train_set = build_dataset(moving_rectangles(20, shape, seed=71), op, noise_std=0.01, seed=72)
held_out = build_dataset(moving_rectangles(5, shape, seed=73), op, noise_std=0.01, seed=74)
den = DenoiserSpec("gaussian_blend")

cfg = TrainConfig(epochs=10, minibatch=5, K=20, rho=0.01, variant="admm")
params, log = train(train_set, op, den, cfg)
print("initial loss", round(log.initial_loss, 5))
for epoch, loss in enumerate(log.epoch_losses, 1):
    print(f"epoch {epoch:2d}  mean loss {loss:.5f}")

print("learned sigma (x255):", np.round(params.sigmas * 255, 1))

solver = SolverConfig("admm", rho=0.01, iterations=cfg.K, record_trace=False)


def held_out_psnr(sched):
    return np.mean([video_report(reconstruct(s.y, op, den, sched, solver)[0], s.truth).mean_psnr
                    for s in held_out])


print(f"learned      {held_out_psnr(params.to_schedule()):.2f} dB")
for name in ("step", "exponential", "constant"):
    print(f"{name:12s} {held_out_psnr(named_schedule(name, cfg.K)):.2f} dB")
