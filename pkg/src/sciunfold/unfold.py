"""Deep unfolding of the PnP solvers: learn the noise-level schedule.

The ``K`` solver iterations are treated as ``K`` layers whose only trainable
parameters are the logits ``p_k`` with ``sigma_k = sigmoid(p_k)``.  Gradients of
the final-iterate MSE with respect to ``p`` are obtained by an explicit reverse
sweep through the (affine) data steps and the denoiser vector-Jacobian
products.  Forward states are kept only at checkpoint boundaries; each segment
is replayed from its checkpoint during the backward pass.
"""

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, logit

from .denoise import denoise_vjp
from .errors import DivergenceError, ShapeError, TapeConsumedError
from .solvers import (
    ADMM,
    GAP,
    GAP_ACCELERATED,
    NoiseSchedule,
    SolverConfig,
    _guard,
    admm_iteration,
    admm_weights,
    gap_iteration,
    schedule_step,
)

__all__ = [
    "sigmoid_reparam",
    "logit",
    "TrainableSchedule",
    "init_logits_step",
    "loss_mse",
    "CheckpointPlan",
    "UnrollTape",
    "forward_unrolled",
    "backward_through_unroll",
    "loss_and_grad",
    "AdamState",
    "adam_step",
    "TrainConfig",
    "TrainingLog",
    "train",
    "evaluate_loss",
]


_SIGMA_MIN = np.finfo(np.float64).tiny
_SIGMA_MAX = 1.0 - np.finfo(np.float64).epsneg


def sigmoid_reparam(p):
    """``1 / (1 + exp(-p))``, evaluated without overflow.

    The result is clipped to the open interval (0, 1); in float64 the exact
    sigmoid rounds to 1.0 once ``p`` exceeds about 37.
    """
    return np.clip(expit(p), _SIGMA_MIN, _SIGMA_MAX)


class TrainableSchedule:
    """Unconstrained logits ``p`` defining noise levels ``sigmoid(p)``."""

    def __init__(self, logits):
        p = np.array(logits, dtype=np.float64).reshape(-1)
        if p.size == 0 or not np.all(np.isfinite(p)):
            raise ValueError("logits must be a non-empty finite vector")
        self.logits = p

    def __len__(self):
        return self.logits.size

    @property
    def sigmas(self):
        return sigmoid_reparam(self.logits)

    def to_schedule(self):
        return NoiseSchedule(self.sigmas)

    def copy(self):
        return TrainableSchedule(self.logits.copy())

    def to_json(self, path):
        """Write ``{"sigma": [...], "logits": [...]}``."""
        with open(path, "w") as fh:
            json.dump({"sigma": self.sigmas.tolist(), "logits": self.logits.tolist()}, fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            d = json.load(fh)
        if isinstance(d, dict) and "logits" in d:
            return cls(d["logits"])
        sig = d["sigma"] if isinstance(d, dict) else d
        return cls(logit(np.asarray(sig, dtype=np.float64)))

    @classmethod
    def from_schedule(cls, sched):
        sig = sched.sigmas if isinstance(sched, NoiseSchedule) else np.asarray(sched, dtype=np.float64)
        return cls(logit(sig))


def init_logits_step(K):
    """Logits reproducing :func:`schedule_step` through the sigmoid."""
    return TrainableSchedule.from_schedule(schedule_step(K))


def loss_mse(x_hat, x_star):
    """Mean over all elements of ``(x_hat - x_star)**2``."""
    x_hat = np.asarray(x_hat, dtype=np.float64)
    x_star = np.asarray(x_star, dtype=np.float64)
    if x_hat.shape != x_star.shape:
        raise ShapeError(f"shape mismatch {x_hat.shape} vs {x_star.shape}")
    return float(np.mean((x_hat - x_star) ** 2))


# --- checkpointed unroll -----------------------------------------------------

class CheckpointPlan:
    """Iterations at which the forward pass keeps a copy of the solver state.

    Boundaries are ``0, C, 2C, ...`` below ``K``; segment ``i`` covers
    iterations ``[boundaries[i], boundaries[i+1])``.  ``C = 1`` caches every
    iteration, ``C = K`` keeps only the initial state.
    """

    def __init__(self, K, segment=None):
        K = int(K)
        if K < 1:
            raise ValueError("K must be positive")
        C = math.isqrt(K - 1) + 1 if segment is None else int(segment)  # ceil(sqrt(K))
        if C < 1:
            raise ValueError("segment length must be positive")
        self.K = K
        self.segment = min(C, K)
        self.boundaries = list(range(0, K, self.segment))

    def segments(self):
        ends = self.boundaries[1:] + [self.K]
        return list(zip(self.boundaries, ends))

    @property
    def max_states(self):
        """Upper bound on simultaneously stored solver states."""
        return len(self.boundaries) + self.segment + 2

    def __repr__(self):
        return f"CheckpointPlan(K={self.K}, segment={self.segment})"


class _Unroller:
    """Binds one sample to a backbone and exposes step / step_vjp on tuple states."""

    def __init__(self, variant, op, y, den, rho):
        self.variant = variant
        self.op = op
        self.y = y
        self.den = den
        if variant == ADMM:
            self.weights = admm_weights(op, rho)

    def initial_state(self):
        v = self.op.adjoint(self.y)
        if self.variant == ADMM:
            return (v, np.zeros_like(v))
        if self.variant == GAP_ACCELERATED:
            return (v, np.zeros_like(self.y))
        return (v,)

    def step(self, state, sigma):
        """Advance one iteration; returns ``(x, next_state)``."""
        op, y, den = self.op, self.y, self.den
        if self.variant == ADMM:
            x, v, u = admm_iteration(op, y, self.weights, den, sigma, *state)
            return x, (v, u)
        if self.variant == GAP_ACCELERATED:
            x, v, y_acc = gap_iteration(op, y, den, sigma, state[0], state[1])
            return x, (v, y_acc)
        x, v, _ = gap_iteration(op, y, den, sigma, state[0])
        return x, (v,)

    def _den_vjp(self, z, sigma, g):
        if self.den is None:
            return g, 0.0
        r = denoise_vjp(self.den, z, sigma, g)
        return r.grad_input, r.grad_sigma

    def step_vjp(self, state, sigma, g_x, g_next):
        """Cotangent of one iteration's input state and of ``sigma``.

        ``g_x`` is the cotangent of the iterate ``x`` (or ``None``) and
        ``g_next`` the cotangents of the returned state tuple.
        """
        op = self.op
        if self.variant == ADMM:
            v, u = state
            g_v_next, g_u_next = g_next
            a = v - u
            w = self.y - op.forward(a)
            x = a + op.adjoint(self.weights * w)
            # v' = D(x + u),  u' = u + x - v'
            g_z, g_sigma = self._den_vjp(x + u, sigma, g_v_next - g_u_next)
            g_xt = g_u_next + g_z if g_x is None else g_x + g_u_next + g_z
            g_u = g_u_next + g_z
            # x = a + Phi^T (W (y - Phi a))
            g_a = g_xt - op.adjoint(self.weights * op.forward(g_xt))
            return (g_a, g_u - g_a), g_sigma

        v = state[0]
        phi_v = op.forward(v)
        if self.variant == GAP_ACCELERATED:
            y_next = state[1] + (self.y - phi_v)
            w = y_next - phi_v
        else:
            w = self.y - phi_v
        x = v + op.adjoint(op.psi_pinv * w)
        g_xd, g_sigma = self._den_vjp(x, sigma, g_next[0])
        g_xt = g_xd if g_x is None else g_x + g_xd
        g_w = op.psi_pinv * op.forward(g_xt)
        if self.variant == GAP_ACCELERATED:
            g_y_next = g_next[1] + g_w
            g_phi_v = -g_w - g_y_next
            return (g_xt + op.adjoint(g_phi_v), g_y_next), g_sigma
        return (g_xt - op.adjoint(g_w),), g_sigma


class UnrollTape:
    """Forward record of an unrolled solve: checkpointed states plus the final iterate.

    ``peak_states`` counts the largest number of solver states held at once
    (checkpoints, one replayed segment and the final iterate).
    """

    def __init__(self, unroller, sigmas, plan, truth):
        self.unroller = unroller
        self.sigmas = sigmas
        self.plan = plan
        self.truth = truth
        self.checkpoints = {}
        self.x_final = None
        self.loss = None
        self.consumed = False
        self.replays = []
        self._live = 0
        self.peak_states = 0

    def _hold(self, n=1):
        self._live += n
        self.peak_states = max(self.peak_states, self._live)

    def _release(self, n=1):
        self._live -= n


def _split_sample(sample):
    if hasattr(sample, "y"):
        return sample.y, sample.truth
    y, truth = sample
    return y, truth


def forward_unrolled(sample, op, den, sched_params, cfg, plan=None):
    """Run the unrolled solver with ``sigma = sigmoid(p)`` and return ``(loss, tape)``.

    Parameters
    ----------
    sample : (y, truth) pair or object with ``y`` and ``truth`` attributes
    op : SciOperator
    den : DenoiserSpec or None
        ``None`` bypasses the denoiser (the iterate passes through unchanged).
    sched_params : TrainableSchedule
    cfg : TrainConfig or SolverConfig
    plan : CheckpointPlan, optional
        Defaults to segments of length ``ceil(sqrt(K))``.
    """
    K = cfg.iterations if isinstance(cfg, SolverConfig) else cfg.K
    if plan is None:
        plan = CheckpointPlan(K)
    if len(sched_params) != K or plan.K != K:
        raise ValueError(f"inconsistent lengths: K={K}, logits={len(sched_params)}, plan.K={plan.K}")
    y, truth = _split_sample(sample)
    y = np.asarray(y, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if y.shape != op.frame_shape or truth.shape != op.shape:
        raise ShapeError("sample dimensions do not match the operator")

    unroller = _Unroller(cfg.variant, op, y, den, cfg.rho)
    sigmas = sched_params.sigmas
    tape = UnrollTape(unroller, sigmas, plan, truth)
    boundaries = set(plan.boundaries)
    state = unroller.initial_state()
    x = None
    for k in range(K):
        if k in boundaries:
            tape.checkpoints[k] = state
            tape._hold()
        x, state = unroller.step(state, sigmas[k])
        _guard(k + 1, x, *state)
    tape.x_final = x
    tape._hold()
    tape.loss = loss_mse(x, truth)
    return tape.loss, tape


def backward_through_unroll(tape):
    """Gradient of the tape's loss with respect to the logits ``p``.

    Each segment is replayed from its checkpoint (most recent first); the
    per-iteration cotangents are then propagated backwards through the
    segment.  The sigmoid chain rule is applied at the end.
    """
    if tape.consumed:
        raise TapeConsumedError("tape has already been used for a backward pass")
    tape.consumed = True
    unroller, sigmas, plan = tape.unroller, tape.sigmas, tape.plan
    K = plan.K
    g_sigma = np.zeros(K)
    g_x = 2.0 * (tape.x_final - tape.truth) / tape.x_final.size
    g_state = None
    for start, end in reversed(plan.segments()):
        # replay: states[i] is the input state of iteration start + i
        states = [tape.checkpoints[start]]
        for k in range(start, end - 1):
            _, nxt = unroller.step(states[-1], sigmas[k])
            states.append(nxt)
            tape._hold()
        tape.replays.append((start, end))
        for k in range(end - 1, start - 1, -1):
            st = states[k - start]
            if g_state is None:
                g_state = tuple(np.zeros_like(s) for s in st)
            g_state, g_sigma[k] = unroller.step_vjp(st, sigmas[k], g_x if k == K - 1 else None, g_state)
        tape._release(len(states) - 1)
        del tape.checkpoints[start]
        tape._release()
    return g_sigma * sigmas * (1.0 - sigmas)


def loss_and_grad(sample, op, den, params, cfg, plan=None):
    loss, tape = forward_unrolled(sample, op, den, params, cfg, plan)
    return loss, backward_through_unroll(tape)


# --- optimizer ---------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(np.zeros(n), np.zeros(n), 0, lr, beta1, beta2, eps)


def adam_step(state, params, grad):
    """One bias-corrected Adam update; returns new ``(state, params)``."""
    g = np.asarray(grad, dtype=np.float64)
    if g.shape != params.logits.shape:
        raise ShapeError(f"gradient shape {g.shape} does not match logits {params.logits.shape}")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    p = params.logits - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, m=m, v=v, t=t), TrainableSchedule(p)


# --- training loop -----------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    minibatch: int = 5
    K: int = 60
    rho: float = 0.01
    variant: str = ADMM
    seed: int = 0
    lr: float = 0.01
    shuffle: bool = True
    segment: int = None

    def __post_init__(self):
        for name in ("epochs", "minibatch", "K"):
            val = getattr(self, name)
            if int(val) != val or val < 1:
                raise ValueError(f"{name} must be a positive integer, got {val}")
        # reuse SolverConfig validation for variant / rho
        object.__setattr__(self, "variant", self.solver_config().variant)

    @property
    def iterations(self):
        return self.K

    def solver_config(self, record_trace=False):
        return SolverConfig(self.variant, self.rho, self.K, record_trace)


@dataclass
class TrainingLog:
    initial_loss: float = None
    epoch_losses: list = field(default_factory=list)
    steps: int = 0

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "mean_loss"])
            for i, loss in enumerate(self.epoch_losses, start=1):
                writer.writerow([i, repr(float(loss))])


def _workers(workers):
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("SCI_UNFOLD_THREADS")
    return max(1, int(env)) if env else 1


def evaluate_loss(dataset, op, den, params, cfg):
    """Mean final-iterate MSE over ``dataset`` (forward only, full state not kept)."""
    plan = CheckpointPlan(cfg.K, cfg.K)
    return float(np.mean([forward_unrolled(s, op, den, params, cfg, plan)[0] for s in dataset]))


def train(dataset, op, den, cfg, params=None, workers=None):
    """Fit the noise-level logits by minibatch Adam over ``dataset``.

    Parameters
    ----------
    dataset : sequence of samples (``(y, truth)`` pairs or :class:`~sciunfold.data_io.Sample`)
    op : SciOperator
    den : DenoiserSpec
    cfg : TrainConfig
    params : TrainableSchedule, optional
        Starting logits; defaults to the step schedule.
    workers : int, optional
        Parallel per-sample passes inside a minibatch (default from
        ``SCI_UNFOLD_THREADS``, else 1).  Results do not depend on it.

    Returns
    -------
    params : TrainableSchedule
    log : TrainingLog
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("training dataset is empty")
    params = init_logits_step(cfg.K) if params is None else params.copy()
    if len(params) != cfg.K:
        raise ValueError(f"initial logits have length {len(params)}, expected K={cfg.K}")
    adam = AdamState.zeros(cfg.K, lr=cfg.lr)
    plan = CheckpointPlan(cfg.K, cfg.segment)
    log = TrainingLog(initial_loss=evaluate_loss(dataset, op, den, params, cfg))
    n_workers = _workers(workers)

    def one(index):
        try:
            loss, grad = loss_and_grad(dataset[index], op, den, params, cfg, plan)
        except DivergenceError as exc:
            raise DivergenceError(f"sample {index}: {exc}", exc.iteration) from exc
        if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise FloatingPointError(f"non-finite loss or gradient for sample {index}")
        return loss, grad

    pool = ThreadPoolExecutor(n_workers) if n_workers > 1 else None
    try:
        for epoch in range(cfg.epochs):
            order = np.arange(len(dataset))
            if cfg.shuffle:
                rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([cfg.seed, epoch])))
                order = rng.permutation(order)
            epoch_loss = []
            for b in range(0, len(order), cfg.minibatch):
                batch = order[b:b + cfg.minibatch].tolist()
                results = list(pool.map(one, batch)) if pool else [one(i) for i in batch]
                grad = np.zeros(cfg.K)
                for loss, g in results:
                    grad += g
                    epoch_loss.append(loss)
                adam, params = adam_step(adam, params, grad / len(results))
                log.steps += 1
            log.epoch_losses.append(float(np.mean(epoch_loss)))
    finally:
        if pool:
            pool.shutdown()
    return params, log
