"""Adam recurrence and LR schedule checks against hand-computed values."""

import numpy as np
import pytest

from partfields import autodiff as ad
from partfields.optim import Adam, CosineWarmupSchedule


def test_zero_gradient_leaves_parameters_unchanged():
    p = ad.parameter(np.array([1.5, -2.0]), dtype=np.float64, name="p")
    opt = Adam()
    for _ in range(5):
        opt.step([p], [np.zeros(2)], lr=0.1)
    np.testing.assert_array_equal(p.data, [1.5, -2.0])


def test_single_step_unit_gradient_moves_by_lr():
    # hand evaluation: m=0.1, v=0.001, mhat=1, vhat=1 -> delta = lr/(1+eps)
    p = ad.parameter(np.array([1.0]), dtype=np.float64, name="p")
    opt = Adam()
    opt.step([p], [np.ones(1)], lr=0.1)
    expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8)
    np.testing.assert_allclose(p.data, [expected], rtol=1e-12)


def test_identical_params_and_grads_update_identically():
    rng = np.random.default_rng(0)
    init = rng.standard_normal(4)
    a = ad.parameter(init.copy(), dtype=np.float64, name="a")
    b = ad.parameter(init.copy(), dtype=np.float64, name="b")
    opt = Adam()
    for step in range(10):
        g = rng.standard_normal(4)
        opt.step([a, b], [g, g.copy()], lr=0.01)
    np.testing.assert_array_equal(a.data, b.data)


def test_adam_matches_reference_recurrence_over_steps():
    beta1, beta2, eps, lr = 0.9, 0.999, 1e-8, 0.05
    rng = np.random.default_rng(3)
    p = ad.parameter(np.array([0.7]), dtype=np.float64, name="p")
    opt = Adam(beta1, beta2, eps)

    ref, m, v = 0.7, 0.0, 0.0
    for t in range(1, 8):
        g = float(rng.standard_normal())
        opt.step([p], [np.array([g])], lr=lr)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        ref -= lr * (m / (1 - beta1**t)) / (np.sqrt(v / (1 - beta2**t)) + eps)
    np.testing.assert_allclose(p.data, [ref], rtol=1e-12)


def test_shape_mismatch_is_a_contract_violation():
    p = ad.parameter(np.ones(3), name="p")
    with pytest.raises(ad.GradcoreError):
        Adam().step([p], [np.ones(4)], lr=0.1)


def test_lazy_state_skips_absent_gradients():
    p = ad.parameter(np.array([1.0]), dtype=np.float64, name="p")
    q = ad.parameter(np.array([1.0]), dtype=np.float64, name="q")
    opt = Adam()
    opt.step([p, q], [np.ones(1), None], lr=0.1)
    assert "q" not in opt.steps
    np.testing.assert_array_equal(q.data, [1.0])


class TestSchedule:
    def test_ramp_starts_at_zero(self):
        sched = CosineWarmupSchedule(total_steps=1000)
        assert sched.lr_at(0) == 0.0

    def test_peak_at_end_of_warmup(self):
        sched = CosineWarmupSchedule(total_steps=1000)
        assert sched.lr_at(500) == pytest.approx(5e-4, rel=1e-12)

    def test_floor_at_total_steps(self):
        sched = CosineWarmupSchedule(total_steps=1000)
        assert sched.lr_at(1000) == pytest.approx(5e-6, rel=1e-9)

    def test_bounded_for_all_steps(self):
        sched = CosineWarmupSchedule(total_steps=2000)
        lrs = [sched.lr_at(t) for t in range(0, 2500, 7)]
        assert all(0.0 <= lr <= 5e-4 for lr in lrs)

    def test_warmup_is_linear(self):
        sched = CosineWarmupSchedule(total_steps=1000)
        assert sched.lr_at(250) == pytest.approx(2.5e-4, rel=1e-12)

    def test_degenerate_config_rejected(self):
        with pytest.raises(ad.GradcoreError):
            CosineWarmupSchedule(warmup_steps=500, total_steps=500)
