"""
Per-frame quality reports
=========================

PSNR and SSIM per frame, a video summary, and a table across videos.
"""

import numpy as np

from sciunfold import (DenoiserSpec, SolverConfig, aggregate_reports, build_operator, generate_mask,
                       named_schedule, psnr, reconstruct, simulate_measurement, ssim, video_report)
from sciunfold.data_io import moving_rectangles

# sanity values
a = np.full((16, 16), 0.3)
print("PSNR of a uniform 0.1 error:", psnr(a + 0.1, a))
print("SSIM of identical frames:", ssim(a, a))

op = build_operator(generate_mask((32, 32, 8), 0.5, seed=20))
den = DenoiserSpec("haar_soft_threshold")
reports = []
for i, video in enumerate(moving_rectangles(3, (32, 32, 8), seed=21)):
    y = simulate_measurement(video, op, noise_std=0.01, seed=22 + i)
    x, _ = reconstruct(y, op, den, named_schedule("step", 60), SolverConfig("gap_accelerated"))
    rep = video_report(x, video)
    reports.append(rep)
    print(f"video {i}: frame PSNR", np.round(rep.psnr, 2), "SSIM", np.round(rep.ssim, 3))

for row in aggregate_reports(reports, [f"video{i}" for i in range(3)]):
    print(row)
