"""Differentiable plug-in denoisers ``D_sigma``.

Two analytic per-frame denoisers stand in for a learned video denoiser.  Both
expose an exact vector-Jacobian product so gradients can flow back through an
unrolled solver into the noise level ``sigma``:

``gaussian_blend``
    ``D_sigma(z) = z + sigma * (B z - z)`` where ``B`` is a separable Gaussian
    blur (std 1, half-sample symmetric boundary).  Affine in ``sigma``.
``haar_soft_threshold``
    One level of the orthonormal 2-D Haar transform per frame, soft
    thresholding of the three detail bands at ``kappa * sigma``, inverse
    transform.  Odd trailing rows/columns pass through unchanged.
"""

from dataclasses import dataclass, asdict
from functools import lru_cache

import numpy as np

from .errors import ShapeError

__all__ = [
    "DenoiserSpec",
    "DenoiseVjp",
    "denoise",
    "denoise_vjp",
    "blur_matrix",
    "gaussian_blur",
    "haar_forward",
    "haar_inverse",
    "soft_threshold",
]

GAUSSIAN_BLEND = "gaussian_blend"
HAAR = "haar_soft_threshold"

_ALIASES = {
    "gaussian_blend": GAUSSIAN_BLEND,
    "gaussian-blend": GAUSSIAN_BLEND,
    "gaussian": GAUSSIAN_BLEND,
    "haar_soft_threshold": HAAR,
    "haar-soft-threshold": HAAR,
    "haar": HAAR,
}


@dataclass(frozen=True)
class DenoiserSpec:
    """Which denoiser to run and its fixed settings.

    ``radius`` applies to ``gaussian_blend`` and ``kappa`` (threshold per unit
    sigma) to ``haar_soft_threshold``; the other field is ignored.
    """

    kind: str = GAUSSIAN_BLEND
    radius: int = 2
    kappa: float = 1.0

    def __post_init__(self):
        kind = _ALIASES.get(str(self.kind).lower())
        if kind is None:
            raise ValueError(f"unknown denoiser kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if int(self.radius) != self.radius or self.radius < 1:
            raise ValueError(f"kernel radius must be an integer >= 1, got {self.radius}")
        object.__setattr__(self, "radius", int(self.radius))
        if not (np.isfinite(self.kappa) and self.kappa > 0):
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        object.__setattr__(self, "kappa", float(self.kappa))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class DenoiseVjp:
    grad_input: np.ndarray
    grad_sigma: float


def _check(z, sigma):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 3:
        raise ShapeError(f"denoiser input must be rank 3, got shape {z.shape}")
    if not (0.0 < sigma < 1.0):
        raise ValueError(f"sigma must lie in (0, 1), got {sigma}")
    if not np.all(np.isfinite(z)):
        raise ValueError("denoiser input contains non-finite values")
    return z


# --- Gaussian blur -----------------------------------------------------------

@lru_cache(maxsize=64)
def _blur_matrix_cached(n, radius, std):
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-0.5 * (t / std) ** 2)
    w /= w.sum()
    padded = np.pad(np.eye(n), ((radius, radius), (0, 0)), mode="symmetric")
    a = np.empty((n, n))
    for i in range(n):
        a[i] = w @ padded[i:i + 2 * radius + 1]
    a.flags.writeable = False
    return a


def blur_matrix(n, radius=2, std=1.0):
    """1-D blur as an ``n x n`` matrix, boundary handled by half-sample reflection.

    Rows are non-negative and sum to one.  With this boundary rule the matrix
    is also symmetric, so the blur is self-adjoint and non-expansive.
    """
    return _blur_matrix_cached(int(n), int(radius), float(std))


def gaussian_blur(z, radius=2, std=1.0, transpose=False):
    """Separable blur of every frame of ``z`` (shape ``(rows, cols, frames)``)."""
    n_rows, n_cols, _ = z.shape
    a_r = blur_matrix(n_rows, radius, std)
    a_c = blur_matrix(n_cols, radius, std)
    if transpose:
        a_r, a_c = a_r.T, a_c.T
    frames = np.moveaxis(z, 2, 0)
    out = a_r @ frames @ a_c.T
    return np.ascontiguousarray(np.moveaxis(out, 0, 2))


# --- Haar soft threshold -----------------------------------------------------

def haar_forward(z):
    """Single-level orthonormal Haar transform of the even part of each frame.

    Returns ``(approx, details)`` where ``details`` stacks the horizontal,
    vertical and diagonal bands along a new leading axis.  Shapes are
    ``(rows//2, cols//2, frames)`` and ``(3, rows//2, cols//2, frames)``.
    """
    r2, c2 = z.shape[0] // 2 * 2, z.shape[1] // 2 * 2
    p00 = z[0:r2:2, 0:c2:2]
    p01 = z[0:r2:2, 1:c2:2]
    p10 = z[1:r2:2, 0:c2:2]
    p11 = z[1:r2:2, 1:c2:2]
    approx = 0.5 * (p00 + p01 + p10 + p11)
    details = np.stack([
        0.5 * (p00 - p01 + p10 - p11),
        0.5 * (p00 + p01 - p10 - p11),
        0.5 * (p00 - p01 - p10 + p11),
    ])
    return approx, details


def haar_inverse(approx, details, template):
    """Invert :func:`haar_forward`; pixels outside the even region come from ``template``."""
    out = np.array(template, dtype=np.float64, copy=True)
    h, v, d = details
    r2, c2 = approx.shape[0] * 2, approx.shape[1] * 2
    out[0:r2:2, 0:c2:2] = 0.5 * (approx + h + v + d)
    out[0:r2:2, 1:c2:2] = 0.5 * (approx - h + v - d)
    out[1:r2:2, 0:c2:2] = 0.5 * (approx + h - v - d)
    out[1:r2:2, 1:c2:2] = 0.5 * (approx - h - v + d)
    return out


def soft_threshold(x, tau):
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


# --- public API --------------------------------------------------------------

def denoise(spec, z, sigma):
    """Apply ``D_sigma`` to a video cube.

    Parameters
    ----------
    spec : DenoiserSpec
    z : ndarray, shape (rows, cols, frames)
    sigma : float
        Noise level in the open interval (0, 1).
    """
    z = _check(z, sigma)
    if spec.kind == GAUSSIAN_BLEND:
        bz = gaussian_blur(z, spec.radius)
        return z + sigma * (bz - z)
    approx, details = haar_forward(z)
    return haar_inverse(approx, soft_threshold(details, spec.kappa * sigma), z)


def denoise_vjp(spec, z, sigma, cotangent):
    """Pull a cotangent back through ``D_sigma`` at ``(z, sigma)``.

    Returns the input cotangent ``J_z^T g`` and the scalar ``<dD/dsigma, g>``.
    For the Haar denoiser the subgradient at ``|c| == tau`` is taken as 0.
    """
    z = _check(z, sigma)
    g = np.asarray(cotangent, dtype=np.float64)
    if g.shape != z.shape:
        raise ShapeError(f"cotangent shape {g.shape} does not match input {z.shape}")
    if spec.kind == GAUSSIAN_BLEND:
        bz = gaussian_blur(z, spec.radius)
        grad_sigma = float(np.vdot(bz - z, g))
        grad_input = g + sigma * (gaussian_blur(g, spec.radius, transpose=True) - g)
        return DenoiseVjp(grad_input, grad_sigma)

    tau = spec.kappa * sigma
    _, details = haar_forward(z)
    active = np.abs(details) > tau
    # the Haar transform is orthonormal, so its adjoint is its inverse
    g_approx, g_details = haar_forward(g)
    grad_sigma = float(-spec.kappa * np.sum(np.sign(details) * active * g_details))
    grad_input = haar_inverse(g_approx, g_details * active, g)
    return DenoiseVjp(grad_input, grad_sigma)
