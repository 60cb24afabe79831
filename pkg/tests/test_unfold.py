import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sciunfold import (
    AdamState,
    CheckpointPlan,
    DenoiserSpec,
    SolverConfig,
    TrainConfig,
    TrainableSchedule,
    adam_step,
    backward_through_unroll,
    build_dataset,
    build_operator,
    forward_unrolled,
    init_logits_step,
    loss_mse,
    reconstruct,
    schedule_step,
    sigmoid_reparam,
    simulate_measurement,
    train,
)
from sciunfold.errors import TapeConsumedError
from sciunfold.unfold import loss_and_grad

from conftest import random_instance

BLEND = DenoiserSpec("gaussian_blend")
HAAR = DenoiserSpec("haar_soft_threshold")


def _problem(seed, shape=(8, 8, 4)):
    rng = np.random.default_rng(seed)
    op, truth = random_instance(rng, shape, observed=True)
    y = simulate_measurement(truth, op, 0.01, seed=seed)
    return op, (y, truth), rng


def central_difference(sample, op, den, params, cfg, h=1e-4):
    grad = np.zeros(len(params))
    for k in range(len(params)):
        plus = params.logits.copy()
        plus[k] += h
        minus = params.logits.copy()
        minus[k] -= h
        lp, _ = forward_unrolled(sample, op, den, TrainableSchedule(plus), cfg)
        lm, _ = forward_unrolled(sample, op, den, TrainableSchedule(minus), cfg)
        grad[k] = (lp - lm) / (2 * h)
    return grad


# --- reparametrization -------------------------------------------------------

def test_sigmoid_examples():
    assert sigmoid_reparam(0.0) == 0.5
    assert 0.0 < sigmoid_reparam(-800.0) < 1e-300  # no overflow warning
    assert sigmoid_reparam(50.0) < 1.0
    xs = np.linspace(-10, 10, 101)
    assert np.all(np.diff(sigmoid_reparam(xs)) > 0)


def test_logit_roundtrip():
    p = math.log((50 / 255) / (205 / 255))
    assert p == pytest.approx(-1.410986973710262, rel=1e-14)
    np.testing.assert_array_max_ulp(sigmoid_reparam(p), 50 / 255, maxulp=1)


def test_init_logits_step():
    params = init_logits_step(60)
    assert len(params) == 60
    np.testing.assert_array_max_ulp(params.sigmas, schedule_step(60).sigmas, maxulp=1)
    assert params.logits[20] == pytest.approx(math.log(25 / 230), rel=1e-14)
    assert params.logits[20] == pytest.approx(-2.2192034840549946, rel=1e-14)
    assert init_logits_step(3).logits[0] != 0
    assert TrainableSchedule.from_schedule([0.5]).logits[0] == 0.0


def test_schedule_json_roundtrip(tmp_path):
    params = TrainableSchedule(np.random.default_rng(0).standard_normal(7))
    params.to_json(tmp_path / "s.json")
    back = TrainableSchedule.from_json(tmp_path / "s.json")
    np.testing.assert_array_equal(back.logits, params.logits)


# --- loss --------------------------------------------------------------------

def test_loss_mse_examples():
    a = np.random.default_rng(0).random((3, 4, 2))
    assert loss_mse(a, a) == 0
    assert loss_mse(a + 0.1, a) == pytest.approx(0.01, rel=1e-12)
    b = a.copy()
    b[1, 2, 1] += 0.5
    assert loss_mse(b, a) == pytest.approx(0.25 / a.size, rel=1e-12)


# --- checkpoint plans and the tape -------------------------------------------

def test_plan_boundaries():
    assert CheckpointPlan(60).segment == 8
    assert CheckpointPlan(16).segment == 4
    assert CheckpointPlan(10, 3).boundaries == [0, 3, 6, 9]
    assert CheckpointPlan(10, 3).segments() == [(0, 3), (3, 6), (6, 9), (9, 10)]
    assert CheckpointPlan(5, 5).boundaries == [0]
    assert CheckpointPlan(5, 1).boundaries == [0, 1, 2, 3, 4]


def test_tape_storage_extremes():
    op, sample, _ = _problem(0)
    params = init_logits_step(6)
    cfg = TrainConfig(K=6)
    _, tape = forward_unrolled(sample, op, BLEND, params, cfg, CheckpointPlan(6, 6))
    assert list(tape.checkpoints) == [0]
    _, tape = forward_unrolled(sample, op, BLEND, params, cfg, CheckpointPlan(6, 1))
    assert list(tape.checkpoints) == list(range(6))


@pytest.mark.parametrize("variant", ["admm", "gap", "gap_accelerated"])
def test_forward_loss_matches_standalone_solver(variant):
    op, sample, rng = _problem(1)
    params = TrainableSchedule(rng.normal(-2, 0.5, 7))
    cfg = TrainConfig(K=7, variant=variant)
    loss, _ = forward_unrolled(sample, op, HAAR, params, cfg)
    x, _ = reconstruct(sample[0], op, HAAR, params.to_schedule(), SolverConfig(variant, 0.01, 7, False))
    assert loss == loss_mse(x, sample[1])


@pytest.mark.parametrize("variant", ["admm", "gap", "gap_accelerated"])
@pytest.mark.parametrize("den", [BLEND, HAAR], ids=["blend", "haar"])
def test_gradient_matches_finite_differences(variant, den):
    op, sample, rng = _problem(2)
    params = TrainableSchedule(rng.normal(-2, 0.5, 5))
    cfg = TrainConfig(K=5, variant=variant)
    _, grad = loss_and_grad(sample, op, den, params, cfg)
    fd = central_difference(sample, op, den, params, cfg)
    assert np.all(np.abs(grad - fd) <= 1e-4 * np.abs(fd))
    # the final noise level never reaches the final iterate
    assert grad[-1] == 0.0


def test_gradient_zero_without_denoiser():
    op, sample, _ = _problem(3)
    for variant in ("admm", "gap_accelerated"):
        _, grad = loss_and_grad(sample, op, None, init_logits_step(5), TrainConfig(K=5, variant=variant))
        assert np.all(grad == 0.0)


@pytest.mark.parametrize("variant", ["admm", "gap_accelerated"])
def test_gradient_is_plan_invariant(variant):
    op, sample, rng = _problem(4)
    params = TrainableSchedule(rng.normal(-2, 0.5, 9))
    cfg = TrainConfig(K=9, variant=variant)
    grads = [loss_and_grad(sample, op, HAAR, params, cfg, CheckpointPlan(9, c))[1] for c in (1, 2, 3, 4, 9)]
    for g in grads[1:]:
        assert np.max(np.abs(g - grads[0])) <= 1e-12


def test_peak_memory_bound():
    op, sample, _ = _problem(5)
    K = 16
    cfg = TrainConfig(K=K)
    for c in (1, 2, 4, 5, 16):
        plan = CheckpointPlan(K, c)
        _, tape = forward_unrolled(sample, op, BLEND, init_logits_step(K), cfg, plan)
        backward_through_unroll(tape)
        assert tape.peak_states <= math.ceil(K / c) + c + 2
        assert sorted(tape.replays) == plan.segments()


def test_tape_single_use():
    op, sample, _ = _problem(6)
    _, tape = forward_unrolled(sample, op, BLEND, init_logits_step(4), TrainConfig(K=4))
    backward_through_unroll(tape)
    with pytest.raises(TapeConsumedError):
        backward_through_unroll(tape)


def test_forward_rejects_inconsistent_lengths():
    op, sample, _ = _problem(7)
    with pytest.raises(ValueError):
        forward_unrolled(sample, op, BLEND, init_logits_step(4), TrainConfig(K=5))
    with pytest.raises(ValueError):
        forward_unrolled(sample, op, BLEND, init_logits_step(5), TrainConfig(K=5), CheckpointPlan(6))


# --- Adam --------------------------------------------------------------------

def test_adam_zero_gradient():
    state = AdamState.zeros(3)
    params = TrainableSchedule([0.1, -0.2, 0.3])
    state, new = adam_step(state, params, np.zeros(3))
    np.testing.assert_array_equal(new.logits, params.logits)
    assert state.t == 1


def test_adam_first_step_closed_form():
    state = AdamState.zeros(1, lr=0.01)
    _, new = adam_step(state, TrainableSchedule([0.0]), np.array([0.5]))
    assert new.logits[0] == pytest.approx(-0.009999999800000003, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3).filter(lambda g: g != 0), min_size=1, max_size=8))
def test_adam_first_step_opposes_gradient(g):
    g = np.array(g)
    _, new = adam_step(AdamState.zeros(g.size), TrainableSchedule(np.zeros(g.size)), g)
    assert np.all(np.sign(new.logits) == -np.sign(g))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=4, max_size=4), st.integers(1, 200))
def test_sigmas_stay_in_open_interval(g, steps):
    state = AdamState.zeros(4, lr=0.5)
    params = init_logits_step(4)
    for _ in range(steps):
        state, params = adam_step(state, params, np.array(g))
    assert np.all((params.sigmas > 0) & (params.sigmas < 1))


# --- training loop -----------------------------------------------------------

def _tiny_dataset(n, seed=0):
    from sciunfold.data_io import generate_mask, moving_rectangles

    videos = moving_rectangles(n, (8, 8, 4), seed=seed)
    op = build_operator(generate_mask((8, 8, 4), 0.5, seed=seed))
    return op, build_dataset(videos, op, 0.01, seed=seed)


def test_train_single_step():
    op, data = _tiny_dataset(1)
    params, log = train(data, op, BLEND, TrainConfig(epochs=1, minibatch=1, K=4))
    assert log.steps == 1
    assert len(log.epoch_losses) == 1
    assert not np.array_equal(params.logits, init_logits_step(4).logits)


def test_train_step_count():
    op, data = _tiny_dataset(7)
    _, log = train(data, op, BLEND, TrainConfig(epochs=3, minibatch=3, K=3))
    assert log.steps == 3 * 3


@pytest.mark.parametrize("shuffle", [False, True])
def test_train_is_deterministic(shuffle):
    op, data = _tiny_dataset(6)
    cfg = TrainConfig(epochs=2, minibatch=2, K=4, shuffle=shuffle, seed=5)
    a, log_a = train(data, op, HAAR, cfg)
    b, log_b = train(data, op, HAAR, cfg, workers=3)
    assert a.logits.tobytes() == b.logits.tobytes()
    assert log_a.epoch_losses == log_b.epoch_losses


def test_train_minibatch_gradient_is_mean():
    op, data = _tiny_dataset(3)
    cfg = TrainConfig(epochs=1, minibatch=3, K=4, shuffle=False)
    params, _ = train(data, op, BLEND, cfg)
    grads = [loss_and_grad(s, op, BLEND, init_logits_step(4), cfg)[1] for s in data]
    _, expected = adam_step(AdamState.zeros(4), init_logits_step(4), sum(grads) / 3)
    np.testing.assert_array_equal(params.logits, expected.logits)


def test_train_rejects_empty_dataset():
    op = build_operator(np.ones((2, 2, 2)))
    with pytest.raises(ValueError):
        train([], op, BLEND, TrainConfig(K=2))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(variant="admm", rho=-1)
    assert TrainConfig(variant="gap-accel").variant == "gap_accelerated"


def test_training_log_csv(tmp_path):
    op, data = _tiny_dataset(2)
    _, log = train(data, op, BLEND, TrainConfig(epochs=4, minibatch=2, K=3))
    log.to_csv(tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,mean_loss"
    assert len(lines) == 5
