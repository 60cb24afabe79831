"""Plug-and-play ADMM and GAP reconstruction for snapshot video measurements.

Both solvers start from ``v0 = Phi^T y`` and alternate a closed-form data step,
which is per-pixel arithmetic because ``Phi Phi^T = diag(psi)``, with a
denoising step ``D_sigma_k``.  The per-iteration update functions
(:func:`admm_iteration`, :func:`gap_iteration`) are shared with the unrolled
trainer so both paths perform identical arithmetic.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .denoise import denoise
from .errors import DivergenceError, ShapeError
from .metrics import video_report

__all__ = [
    "ADMM",
    "GAP",
    "GAP_ACCELERATED",
    "SolverConfig",
    "NoiseSchedule",
    "SolverState",
    "TraceRow",
    "ReconTrace",
    "schedule_step",
    "schedule_exponential",
    "schedule_constant",
    "named_schedule",
    "admm_weights",
    "admm_iteration",
    "gap_iteration",
    "admm_reconstruct",
    "gap_reconstruct",
    "reconstruct",
    "residual",
]

ADMM = "admm"
GAP = "gap"
GAP_ACCELERATED = "gap_accelerated"
_VARIANTS = {
    "admm": ADMM,
    "gap": GAP,
    "gap_accelerated": GAP_ACCELERATED,
    "gap-accel": GAP_ACCELERATED,
    "gap_accel": GAP_ACCELERATED,
    "gap-accelerated": GAP_ACCELERATED,
}

DIVERGENCE_LIMIT = 1e6

SIGMA_HIGH = 50 / 255
SIGMA_MID = 25 / 255
SIGMA_LOW = 12 / 255
EXPONENTIAL_DECAY = 0.97


@dataclass(frozen=True)
class SolverConfig:
    variant: str = ADMM
    rho: float = 0.01
    iterations: int = 60
    record_trace: bool = True

    def __post_init__(self):
        variant = _VARIANTS.get(str(self.variant).lower())
        if variant is None:
            raise ValueError(f"unknown solver variant {self.variant!r}")
        object.__setattr__(self, "variant", variant)
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ValueError(f"iterations must be a positive integer, got {self.iterations}")
        object.__setattr__(self, "iterations", int(self.iterations))
        if variant == ADMM and not (np.isfinite(self.rho) and self.rho > 0):
            raise ValueError(f"rho must be positive for ADMM, got {self.rho}")


class NoiseSchedule:
    """Per-iteration noise levels ``sigma_0 .. sigma_{K-1}``, each in (0, 1)."""

    def __init__(self, sigmas):
        arr = np.array(sigmas, dtype=np.float64).reshape(-1)
        if arr.size == 0:
            raise ValueError("noise schedule must not be empty")
        if not np.all((arr > 0) & (arr < 1)):
            raise ValueError("every noise level must lie in (0, 1)")
        arr.flags.writeable = False
        self.sigmas = arr

    def __len__(self):
        return self.sigmas.size

    def __getitem__(self, k):
        return self.sigmas[k]

    def __iter__(self):
        return iter(self.sigmas.tolist())

    def __eq__(self, other):
        return isinstance(other, NoiseSchedule) and np.array_equal(self.sigmas, other.sigmas)

    def __repr__(self):
        return f"NoiseSchedule(K={len(self)}, first={self.sigmas[0]:.5g}, last={self.sigmas[-1]:.5g})"

    def tolist(self):
        return self.sigmas.tolist()


def schedule_step(K):
    """Three equal blocks at 50/255, 25/255 and 12/255; any remainder joins the last block."""
    K = _positive(K)
    block = K // 3
    sig = np.full(K, SIGMA_LOW)
    sig[:block] = SIGMA_HIGH
    sig[block:2 * block] = SIGMA_MID
    return NoiseSchedule(sig)


def schedule_exponential(K):
    """``sigma_0 = 50/255`` and ``sigma_k = 0.97 sigma_{k-1}``."""
    K = _positive(K)
    sig = np.empty(K)
    sig[0] = SIGMA_HIGH
    for k in range(1, K):
        sig[k] = EXPONENTIAL_DECAY * sig[k - 1]
    return NoiseSchedule(sig)


def schedule_constant(K):
    return NoiseSchedule(np.full(_positive(K), SIGMA_LOW))


_NAMED = {"step": schedule_step, "exponential": schedule_exponential, "constant": schedule_constant}


def named_schedule(name, K):
    try:
        return _NAMED[name](K)
    except KeyError:
        raise ValueError(f"unknown schedule {name!r}; expected one of {sorted(_NAMED)}") from None


def _positive(K):
    if int(K) != K or K < 1:
        raise ValueError(f"K must be a positive integer, got {K}")
    return int(K)


@dataclass
class SolverState:
    x: np.ndarray
    v: np.ndarray
    u: np.ndarray = None
    y_acc: np.ndarray = None
    iteration: int = 0


@dataclass
class TraceRow:
    iteration: int
    residual: float
    psnr: float = None


@dataclass
class ReconTrace:
    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def append(self, iteration, residual, psnr=None):
        self.rows.append(TraceRow(iteration, residual, psnr))

    @property
    def psnr(self):
        return np.array([r.psnr if r.psnr is not None else np.nan for r in self.rows])

    @property
    def residuals(self):
        return np.array([r.residual for r in self.rows])

    def to_csv(self, path):
        """Write ``iteration,residual,psnr`` rows; psnr is blank when unknown."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["iteration", "residual", "psnr"])
            for r in self.rows:
                writer.writerow([r.iteration, repr(float(r.residual)),
                                 "" if r.psnr is None else repr(float(r.psnr))])

    @classmethod
    def from_csv(cls, path):
        trace = cls()
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                trace.append(int(rec["iteration"]), float(rec["residual"]),
                             float(rec["psnr"]) if rec["psnr"] else None)
        return trace


def residual(y, op, v):
    """``||y - Phi v||_2``."""
    return float(np.linalg.norm(np.asarray(y, dtype=np.float64) - op(v)))


# --- shared iteration kernels ------------------------------------------------

def _denoise(den, z, sigma):
    # den=None bypasses the denoiser entirely (v = input); sigma is then unused
    if den is None:
        return z
    return denoise(den, z, sigma)


def admm_weights(op, rho):
    """Diagonal of ``Psi``: ``1 / (rho + psi)`` per pixel."""
    return 1.0 / (rho + op.psi)


def admm_iteration(op, y, weights, den, sigma, v, u):
    """One PnP-ADMM update; returns ``(x, v_next, u_next)``."""
    a = v - u
    w = y - op.forward(a)
    x = a + op.adjoint(weights * w)
    v_next = _denoise(den, x + u, sigma)
    u_next = u + x - v_next
    return x, v_next, u_next


def gap_iteration(op, y, den, sigma, v, y_acc=None):
    """One PnP-GAP update; returns ``(x, v_next, y_acc_next)``.

    With ``y_acc=None`` this is the plain projection step.  Otherwise the
    accelerated form is used, accumulating the measurement residual into
    ``y_acc`` before projecting.
    """
    phi_v = op.forward(v)
    if y_acc is None:
        y_next = None
        w = y - phi_v
    else:
        y_next = y_acc + (y - phi_v)
        w = y_next - phi_v
    x = v + op.adjoint(op.psi_pinv * w)
    v_next = _denoise(den, x, sigma)
    return x, v_next, y_next


def _guard(iteration, *arrays):
    for a in arrays:
        if a is None:
            continue
        if not np.all(np.isfinite(a)):
            raise DivergenceError(f"non-finite solver state at iteration {iteration}", iteration)
        peak = float(np.max(np.abs(a)))
        if peak > DIVERGENCE_LIMIT:
            raise DivergenceError(
                f"solver state magnitude {peak:.3g} exceeds {DIVERGENCE_LIMIT:g} at iteration {iteration}",
                iteration)


def _prepare(y, op, sched, cfg, truth):
    y = np.asarray(y, dtype=np.float64)
    if y.shape != op.frame_shape:
        raise ShapeError(f"measurement shape {y.shape} does not match {op.frame_shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError("measurement contains non-finite values")
    sigmas = sched.sigmas if isinstance(sched, NoiseSchedule) else NoiseSchedule(sched).sigmas
    if len(sigmas) != cfg.iterations:
        raise ValueError(f"schedule has {len(sigmas)} entries but config asks for {cfg.iterations} iterations")
    if truth is not None:
        truth = np.asarray(truth, dtype=np.float64)
        if truth.shape != op.shape:
            raise ShapeError(f"truth shape {truth.shape} does not match {op.shape}")
    return y, sigmas, truth


def _record(trace, cfg, k, y, op, v, x, truth):
    if not cfg.record_trace:
        return
    res = float(np.linalg.norm(y - op.forward(v)))
    psnr = video_report(x, truth).mean_psnr if truth is not None else None
    trace.append(k, res, psnr)


def admm_reconstruct(y, op, den, sched, cfg, truth=None, callback=None):
    """Run ``cfg.iterations`` PnP-ADMM iterations and return ``(x_K, trace)``.

    ``callback(state)``, if given, receives a :class:`SolverState` after
    every iteration.
    """
    if cfg.variant != ADMM:
        raise ValueError(f"admm_reconstruct needs variant 'admm', got {cfg.variant!r}")
    y, sigmas, truth = _prepare(y, op, sched, cfg, truth)
    weights = admm_weights(op, cfg.rho)
    v = op.adjoint(y)
    u = np.zeros_like(v)
    x = v
    trace = ReconTrace()
    for k, sigma in enumerate(sigmas):
        x, v, u = admm_iteration(op, y, weights, den, sigma, v, u)
        _guard(k + 1, x, v, u)
        _record(trace, cfg, k + 1, y, op, v, x, truth)
        if callback is not None:
            callback(SolverState(x=x, v=v, u=u, iteration=k + 1))
    return x, trace


def gap_reconstruct(y, op, den, sched, cfg, truth=None, callback=None):
    """Run plain or accelerated PnP-GAP and return ``(x_K, trace)``.

    Pixels never observed by the mask (``psi == 0``) receive no data
    correction; ``1/psi`` is taken as 0 there.
    """
    if cfg.variant not in (GAP, GAP_ACCELERATED):
        raise ValueError(f"gap_reconstruct needs a GAP variant, got {cfg.variant!r}")
    y, sigmas, truth = _prepare(y, op, sched, cfg, truth)
    v = op.adjoint(y)
    y_acc = np.zeros_like(y) if cfg.variant == GAP_ACCELERATED else None
    x = v
    trace = ReconTrace()
    for k, sigma in enumerate(sigmas):
        x, v, y_acc = gap_iteration(op, y, den, sigma, v, y_acc)
        _guard(k + 1, x, v, y_acc)
        _record(trace, cfg, k + 1, y, op, v, x, truth)
        if callback is not None:
            callback(SolverState(x=x, v=v, y_acc=y_acc, iteration=k + 1))
    return x, trace


def reconstruct(y, op, den, sched, cfg, truth=None, callback=None):
    """Dispatch to the solver named by ``cfg.variant``."""
    if cfg.variant == ADMM:
        return admm_reconstruct(y, op, den, sched, cfg, truth, callback)
    return gap_reconstruct(y, op, den, sched, cfg, truth, callback)
