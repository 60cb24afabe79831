"""Video snapshot measurement model.

A video cube ``x`` of shape ``(n_rows, n_cols, n_frames)`` is modulated by a
binary mask of the same shape and summed over frames into a single 2-D
measurement::

    y[r, c] = sum_t mask[r, c, t] * x[r, c, t] + noise[r, c]

The linear map ``x -> y`` (``Phi``) is never formed as a matrix.  Because every
row of ``Phi`` touches a single pixel column, ``Phi Phi^T`` is diagonal with
entries ``psi[r, c] = sum_t mask[r, c, t]``, and every solver update reduces to
per-pixel arithmetic.
"""

import numpy as np

from .errors import ShapeError

__all__ = [
    "SciOperator",
    "as_video",
    "as_mask",
    "build_operator",
    "apply_phi",
    "apply_phi_transpose",
    "simulate_measurement",
    "gaussian_noise",
    "pixel_index",
    "dense_phi",
    "vec",
    "unvec",
]


def as_video(data):
    """Validate and return a float64 video cube."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise ShapeError(f"video cube must be rank 3 with non-empty dims, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("video cube contains non-finite values")
    return arr


def as_mask(data):
    """Validate a binary mask and return it as float64 (values 0.0 / 1.0)."""
    arr = np.asarray(data)
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise ShapeError(f"mask must be rank 3 with non-empty dims, got {arr.shape}")
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError("mask entries must be 0 or 1")
    return arr.astype(np.float64)


class SciOperator:
    """Mask-induced measurement operator with cached per-pixel overlap counts.

    Parameters
    ----------
    mask : array_like, shape (n_rows, n_cols, n_frames)
        Binary modulation mask.  A private copy is stored.

    Attributes
    ----------
    mask : ndarray
        Read-only float64 copy of the mask.
    psi : ndarray, shape (n_rows, n_cols)
        Number of frames in which each pixel is observed, i.e. the diagonal
        of ``Phi Phi^T``.
    """

    def __init__(self, mask):
        mask = as_mask(mask).copy()
        mask.flags.writeable = False
        psi = mask.sum(axis=2)
        psi.flags.writeable = False
        self._mask = mask
        self._psi = psi
        # pseudo-inverse of psi: unobserved pixels map to 0
        inv = np.zeros_like(psi)
        np.divide(1.0, psi, out=inv, where=psi > 0)
        inv.flags.writeable = False
        self._psi_pinv = inv

    @property
    def mask(self):
        return self._mask

    @property
    def psi(self):
        return self._psi

    @property
    def psi_pinv(self):
        """``1 / psi`` with the convention ``1/0 := 0``."""
        return self._psi_pinv

    @property
    def shape(self):
        return self._mask.shape

    @property
    def frame_shape(self):
        return self._mask.shape[:2]

    def __call__(self, cube):
        return apply_phi(self, cube)

    def forward(self, cube):
        """Unchecked ``Phi x`` for internal hot loops."""
        return np.einsum("ijk,ijk->ij", cube, self._mask)

    def adjoint(self, meas):
        """Unchecked ``Phi^T y`` for internal hot loops."""
        return self._mask * meas[:, :, None]

    def T(self, meas):
        return apply_phi_transpose(self, meas)

    def __repr__(self):
        return f"SciOperator(shape={self.shape}, observed={int(np.count_nonzero(self._psi))}/{self._psi.size})"


def build_operator(mask):
    """Construct a :class:`SciOperator` from a binary mask."""
    return SciOperator(mask)


def apply_phi(op, cube):
    """Compress a video cube into a 2-D measurement, ``sum_t mask * cube``."""
    cube = np.asarray(cube, dtype=np.float64)
    if cube.shape != op.shape:
        raise ShapeError(f"cube shape {cube.shape} does not match mask shape {op.shape}")
    return op.forward(cube)


def apply_phi_transpose(op, meas):
    """Adjoint of :func:`apply_phi`: ``out[r, c, t] = mask[r, c, t] * meas[r, c]``."""
    meas = np.asarray(meas, dtype=np.float64)
    if meas.shape != op.frame_shape:
        raise ShapeError(f"measurement shape {meas.shape} does not match {op.frame_shape}")
    return op.adjoint(meas)


def gaussian_noise(shape, seed):
    """I.i.d. standard normal samples drawn reproducibly from ``seed``.

    Uniforms come from the counter-based Philox generator; normals are formed
    with the Box-Muller transform so the stream does not depend on numpy's
    choice of normal sampler.
    """
    n = int(np.prod(shape))
    m = (n + 1) // 2
    gen = np.random.Generator(np.random.Philox(seed))
    u1 = 1.0 - gen.random(m)  # (0, 1], keeps log finite
    u2 = gen.random(m)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    z = np.empty(2 * m)
    z[0::2] = radius * np.cos(angle)
    z[1::2] = radius * np.sin(angle)
    return z[:n].reshape(shape)


def simulate_measurement(video, mask, noise_std, seed):
    """Noisy snapshot measurement ``Phi x + e`` with ``e ~ N(0, noise_std^2)``.

    Parameters
    ----------
    video : array_like, shape (n_rows, n_cols, n_frames)
    mask : array_like or SciOperator
    noise_std : float
        Standard deviation of the additive Gaussian noise, ``>= 0``.
    seed : int
        Seed for the noise stream; the result is a pure function of the
        arguments.
    """
    noise_std = float(noise_std)
    if not np.isfinite(noise_std) or noise_std < 0:
        raise ValueError(f"noise_std must be finite and non-negative, got {noise_std}")
    op = mask if isinstance(mask, SciOperator) else SciOperator(mask)
    y = apply_phi(op, as_video(video))
    if noise_std > 0:
        y = y + noise_std * gaussian_noise(y.shape, seed)
    return y


def pixel_index(r, c, n_rows):
    """Column-stacked linear index of pixel ``(r, c)``: ``n = r + c * n_rows``.

    This is the ordering of ``vec(.)`` used by dense reference matrices; the
    arrays themselves stay in numpy's row-major layout.
    """
    return r + c * n_rows


def dense_phi(op):
    """Materialize ``Phi`` as a dense matrix (for testing small instances only).

    Rows follow :func:`pixel_index`; columns are frame-major, each frame block
    ordered by :func:`pixel_index`, matching ``Phi = [D_1 ... D_T]``.
    """
    n_rows, n_cols, n_frames = op.shape
    npix = n_rows * n_cols
    phi = np.zeros((npix, npix * n_frames))
    for t in range(n_frames):
        for c in range(n_cols):
            for r in range(n_rows):
                n = pixel_index(r, c, n_rows)
                phi[n, t * npix + n] = op.mask[r, c, t]
    return phi


def vec(cube):
    """Column-stacked vectorization matching :func:`dense_phi` (frames concatenated)."""
    arr = np.asarray(cube)
    if arr.ndim == 2:
        return arr.reshape(-1, order="F")
    return np.concatenate([arr[:, :, t].reshape(-1, order="F") for t in range(arr.shape[2])])


def unvec(vector, shape):
    """Inverse of :func:`vec`."""
    if len(shape) == 2:
        return np.asarray(vector).reshape(shape, order="F")
    n_rows, n_cols, n_frames = shape
    npix = n_rows * n_cols
    frames = [np.asarray(vector[t * npix:(t + 1) * npix]).reshape((n_rows, n_cols), order="F")
              for t in range(n_frames)]
    return np.stack(frames, axis=2)
