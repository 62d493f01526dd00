import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resgrad import optim


def test_adam_zero_gradient_leaves_parameters_fixed():
    state = optim.AdamState(4, beta2=0.999)
    for _ in range(25):
        delta = state.step(np.zeros(4), lr_now=0.3)
        assert np.all(delta == 0.0)


def test_adam_first_step_hand_value():
    state = optim.AdamState(1, beta2=0.999)
    delta = state.step(np.array([1.0]), lr_now=0.1)
    assert delta[0] == pytest.approx(-0.1 / (1.0 + 1e-8), rel=1e-12)


def test_adam_beta2_only_differs_through_v_track():
    a = optim.AdamState(3, beta2=0.95)
    b = optim.AdamState(3, beta2=0.999)
    rng = np.random.default_rng(0)
    for _ in range(5):
        g = rng.normal(size=3)
        a.step(g, 0.01)
        b.step(g, 0.01)
    assert np.allclose(a.m, b.m)
    assert not np.allclose(a.v, b.v)


def test_adam_rejects_non_finite_gradient():
    state = optim.AdamState(3)
    g = np.array([0.0, np.nan, 1.0])
    with pytest.raises(ValueError, match="index 1"):
        state.step(g, 0.1)


def test_lr_endpoints_and_midpoint():
    sched = optim.LrSchedule(7.5e-3, 1e-5, total_epochs=1000)
    assert optim.lr_at(sched, 0) == pytest.approx(7.5e-3, rel=1e-15)
    assert optim.lr_at(sched, 1000) == pytest.approx(1e-5, rel=1e-12)
    assert optim.lr_at(sched, 500) == pytest.approx(3.755e-3, rel=1e-12)
    with pytest.raises(ValueError):
        optim.lr_at(sched, 1001)


@settings(max_examples=30, deadline=None)
@given(
    lr0=st.floats(1e-6, 1.0),
    frac=st.floats(1e-4, 1.0),
    total=st.integers(1, 5000),
)
def test_lr_monotone_non_increasing(lr0, frac, total):
    sched = optim.LrSchedule(lr0, lr0 * frac, total)
    values = [optim.lr_at(sched, e) for e in range(0, total + 1, max(total // 37, 1))]
    assert all(a >= b - 1e-15 for a, b in zip(values, values[1:]))
    assert optim.lr_at(sched, 0) == lr0
    assert optim.lr_at(sched, total) == pytest.approx(lr0 * frac, rel=1e-9)


def test_aux_weight_piecewise_values():
    sched = optim.AuxSchedule(
        target=1e-3, start_epoch=100, ramp_len=50, hold_len=100, decay_len=200,
        decay_kind="linear", final_frac=0.5,
    )
    assert optim.aux_weight_at(sched, 0) == 0.0
    assert optim.aux_weight_at(sched, 99) == 0.0
    assert optim.aux_weight_at(sched, 150) == pytest.approx(1e-3)
    assert optim.aux_weight_at(sched, 200) == pytest.approx(1e-3)
    # midpoint of the decay: halfway between 1e-3 and 5e-4
    assert optim.aux_weight_at(sched, 350) == pytest.approx(7.5e-4)
    assert optim.aux_weight_at(sched, 450) == pytest.approx(5e-4)
    assert optim.aux_weight_at(sched, 10_000) == pytest.approx(5e-4)


def test_aux_weight_fixed_profile():
    sched = optim.AuxSchedule(target=5e-4, start_epoch=10)
    assert optim.aux_weight_at(sched, 9) == 0.0
    assert optim.aux_weight_at(sched, 10) == 5e-4
    assert optim.aux_weight_at(sched, 99999) == 5e-4


@settings(max_examples=25, deadline=None)
@given(
    target=st.floats(1e-6, 1.0),
    start=st.integers(0, 50),
    ramp=st.integers(0, 40),
    hold=st.integers(0, 40),
    decay=st.integers(1, 60),
    rho=st.floats(0.0, 1.0),
    kind=st.sampled_from(["linear", "cosine"]),
)
def test_aux_weight_continuous_after_start(target, start, ramp, hold, decay, rho, kind):
    sched = optim.AuxSchedule(target, start, ramp, hold, decay, kind, rho)
    end = start + ramp + hold + decay
    # continuity bound: max slope of any segment
    max_slope = target * max(
        1.0 / max(ramp, 1), (1.0 - rho) / max(decay, 1) * (math.pi / 2.0 + 1.0)
    )
    prev = optim.aux_weight_at(sched, start)
    for e in range(start + 1, end + 5):
        cur = optim.aux_weight_at(sched, e)
        assert abs(cur - prev) <= max_slope + 1e-12
        prev = cur
    assert optim.aux_weight_at(sched, end + 1000) == pytest.approx(rho * target, abs=1e-15)


def test_optimizer_slot_betas():
    assert optim.optimizer_slot("adam999", 3).beta2 == 0.999
    assert optim.optimizer_slot("adam95", 3).beta2 == 0.95
    with pytest.raises(ValueError):
        optim.optimizer_slot("sgd", 3)


def test_kourkoutas_requires_plugin():
    with pytest.raises(optim.OptimizerNotBundledError):
        optim.optimizer_slot("kourkoutas_beta", 3)


def test_kourkoutas_plugin_registration():
    class Dummy:
        def __init__(self, n):
            self.n = n

        def step(self, grad, lr):
            return -lr * np.asarray(grad)

    optim.register_optimizer("kourkoutas_beta", Dummy)
    try:
        opt = optim.optimizer_slot("kourkoutas_beta", 2)
        assert np.allclose(opt.step(np.ones(2), 0.5), [-0.5, -0.5])
    finally:
        optim._OPTIMIZER_PLUGINS.pop("kourkoutas_beta", None)
