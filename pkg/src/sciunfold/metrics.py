"""PSNR / SSIM and per-video quality reports."""

import csv
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

__all__ = ["psnr", "ssim", "gaussian_window", "QualityReport", "video_report", "aggregate_reports"]

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WINDOW = 11
SSIM_STD = 1.5


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak=1.0):
    """Peak signal-to-noise ratio in dB; ``inf`` when the inputs are identical."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size=SSIM_WINDOW, std=SSIM_STD):
    """Normalized 1-D Gaussian taps of odd length ``size``."""
    t = np.arange(size, dtype=np.float64) - (size - 1) / 2
    w = np.exp(-0.5 * (t / std) ** 2)
    return w / w.sum()


def _filter_valid(img, w):
    rows = sliding_window_view(img, w.size, axis=0) @ w
    return sliding_window_view(rows, w.size, axis=1) @ w


def ssim(a, b, data_range=1.0):
    """Mean structural similarity of two 2-D frames.

    Local statistics use an 11x11 Gaussian window (std 1.5) evaluated only
    where the window fits inside the frame.  Frames smaller than 11 pixels
    along an axis use the largest odd window that fits.
    """
    a, b = _pair(a, b)
    if a.ndim != 2:
        raise ShapeError(f"ssim expects 2-D frames, got shape {a.shape}")
    size = min(SSIM_WINDOW, *a.shape)
    if size % 2 == 0:
        size -= 1
    w = gaussian_window(size)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a = _filter_valid(a, w)
    mu_b = _filter_valid(b, w)
    var_a = _filter_valid(a * a, w) - mu_a * mu_a
    var_b = _filter_valid(b * b, w) - mu_b * mu_b
    cov = _filter_valid(a * b, w) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class QualityReport:
    """Per-frame PSNR (dB) and SSIM for one reconstructed video."""

    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)
    name: str = ""
    metadata: dict = field(default_factory=dict)

    @property
    def mean_psnr(self):
        return float(np.mean(self.psnr))

    @property
    def mean_ssim(self):
        return float(np.mean(self.ssim))

    def to_dict(self):
        d = asdict(self)
        d["mean_psnr"] = self.mean_psnr
        d["mean_ssim"] = self.mean_ssim
        return d

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            d = json.load(fh)
        return cls(psnr=list(d["psnr"]), ssim=list(d["ssim"]),
                   name=d.get("name", ""), metadata=d.get("metadata", {}))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["frame", "psnr", "ssim"])
            for i, (p, s) in enumerate(zip(self.psnr, self.ssim)):
                writer.writerow([i, repr(float(p)), repr(float(s))])
            writer.writerow(["mean", repr(self.mean_psnr), repr(self.mean_ssim)])


def video_report(x_hat, truth, peak=1.0):
    """Per-frame metrics of ``x_hat`` against ``truth`` (shape rows x cols x frames)."""
    x_hat, truth = _pair(x_hat, truth)
    if x_hat.ndim != 3:
        raise ShapeError(f"video_report expects rank-3 cubes, got {x_hat.shape}")
    n = x_hat.shape[2]
    return QualityReport(
        psnr=[psnr(x_hat[:, :, t], truth[:, :, t], peak) for t in range(n)],
        ssim=[ssim(x_hat[:, :, t], truth[:, :, t], peak) for t in range(n)],
    )


def aggregate_reports(reports, names=None):
    """Table rows ``(name, psnr, ssim)`` per video plus an ``average`` row.

    The average is the unweighted mean of the per-video means.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to aggregate")
    if names is None:
        names = [r.name or f"video{i}" for i, r in enumerate(reports)]
    rows = [(n, r.mean_psnr, r.mean_ssim) for n, r in zip(names, reports)]
    rows.append(("average",
                 float(np.mean([r[1] for r in rows])),
                 float(np.mean([r[2] for r in rows]))))
    return rows
