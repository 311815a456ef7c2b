import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from trackcast.diffusion import (
    DiffusionState,
    NoiseSchedule,
    build_schedule,
    default_schedule,
    denoise_step,
    forward_noise,
    posterior_mean,
    training_loss,
)
from trackcast.errors import ConfigError, RangeError, ShapeError


# ---------------------------------------------------------------------------
# build_schedule
# ---------------------------------------------------------------------------

def test_single_step_linear_schedule():
    sched = build_schedule(1, "linear", 1e-4, 0.02)
    assert sched.betas.tolist() == [1e-4]
    assert sched.alpha_bars.tolist() == [0.9999]
    assert sched.sigmas.tolist() == [0.0]


def test_two_step_constant_beta():
    sched = build_schedule(2, "linear", 0.1, 0.1)
    np.testing.assert_allclose(sched.alpha_bars, [0.9, 0.81], rtol=1e-15)


def test_linear_schedule_matches_product_loop_oracle():
    sched = build_schedule(100, "linear", 1e-4, 0.02)
    assert np.all(np.diff(sched.alpha_bars) < 0)
    # Independent oracle: accumulate the product step by step.
    prod = 1.0
    expected = []
    for i in range(100):
        beta = 1e-4 + (0.02 - 1e-4) * i / 99
        prod *= 1.0 - beta
        expected.append(prod)
    np.testing.assert_allclose(sched.alpha_bars, expected, rtol=1e-12)


def test_schedule_tables_reproducible_from_betas():
    for kind in ("linear", "cosine"):
        sched = build_schedule(50, kind)
        np.testing.assert_array_equal(sched.alphas, 1.0 - sched.betas)
        np.testing.assert_array_equal(sched.alpha_bars, np.cumprod(1.0 - sched.betas))
        resigma = np.sqrt(sched.betas)
        resigma[0] = 0.0
        np.testing.assert_array_equal(sched.sigmas, resigma)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(num_steps=0),
        dict(num_steps=10, beta_min=0.0),
        dict(num_steps=10, beta_max=1.0),
        dict(num_steps=10, beta_min=0.5, beta_max=0.1),
        dict(num_steps=10, kind="quadratic"),
    ],
)
def test_invalid_schedule_config_rejected(kwargs):
    with pytest.raises(ConfigError):
        build_schedule(**{"kind": "linear", **kwargs})


@settings(max_examples=25, deadline=None)
@given(
    num_steps=st.integers(min_value=1, max_value=200),
    kind=st.sampled_from(["linear", "cosine"]),
)
def test_schedule_invariants_hold(num_steps, kind):
    sched = build_schedule(num_steps, kind)
    assert np.all((sched.betas > 0) & (sched.betas < 1))
    assert np.all((sched.alpha_bars > 0) & (sched.alpha_bars <= 1))
    if num_steps > 1:
        assert np.all(np.diff(sched.alpha_bars) < 0)
    assert sched.sigmas[0] == 0.0


def test_default_schedule_decays_to_near_zero():
    sched = default_schedule(100)
    assert sched.alpha_bar(100) < 1e-3


def test_invariant_violations_detected():
    good = build_schedule(4)
    with pytest.raises(ConfigError):
        NoiseSchedule(
            num_steps=4,
            betas=good.betas,
            alphas=good.alphas + 1e-9,
            alpha_bars=good.alpha_bars,
            sigmas=good.sigmas,
        )
    bad_sigma = good.sigmas.copy()
    bad_sigma[0] = 0.1
    with pytest.raises(ConfigError):
        NoiseSchedule(4, good.betas, good.alphas, good.alpha_bars, bad_sigma)


# ---------------------------------------------------------------------------
# forward_noise
# ---------------------------------------------------------------------------

def _unit_abar_schedule():
    # Hypothetical table with abar = 1 at step 1 for the zero-noise case;
    # bypasses build_schedule on purpose.
    return NoiseSchedule(
        num_steps=1,
        betas=np.array([1e-12]),
        alphas=np.array([1.0 - 1e-12]),
        alpha_bars=np.array([1.0]),
        sigmas=np.array([0.0]),
    )


def test_forward_noise_identity_at_unit_alpha_bar():
    sched = _unit_abar_schedule()
    tau0 = np.arange(8.0).reshape(1, 4, 2)
    eps = np.random.default_rng(0).normal(size=tau0.shape)
    np.testing.assert_array_equal(forward_noise(tau0, 1, eps, sched), tau0)


def _abar_quarter_schedule():
    # beta = 0.75 puts abar exactly at 0.25 after one step.
    return build_schedule(1, "linear", 0.75, 0.75)


def test_forward_noise_zero_eps_scales_by_sqrt_abar():
    sched = _abar_quarter_schedule()
    tau0 = np.array([[[1.0, 1.0]]])
    out = forward_noise(tau0, 1, np.zeros_like(tau0), sched)
    np.testing.assert_allclose(out, 0.5, rtol=1e-15)


def test_forward_noise_hand_evaluated_cell():
    sched = _abar_quarter_schedule()
    tau0 = np.array([[[1.0, 0.0]]])
    eps = np.array([[[1.0, 0.0]]])
    out = forward_noise(tau0, 1, eps, sched)
    assert abs(out[0, 0, 0] - (0.5 + math.sqrt(0.75))) < 1e-12
    assert abs(out[0, 0, 0] - 1.3660254) < 1e-6


def test_forward_noise_shape_mismatch_rejected():
    sched = _abar_quarter_schedule()
    with pytest.raises(ShapeError):
        forward_noise(np.zeros((1, 4, 2)), 1, np.zeros((1, 3, 2)), sched)


def test_forward_noise_marginal_statistics():
    # Empirical mean -> sqrt(abar) tau0 within 3 SE, variance -> 1-abar within 5%.
    sched = build_schedule(1, "linear", 0.5, 0.5)  # abar = 0.5
    rng = np.random.default_rng(1234)
    tau0 = np.array([[[0.4, -0.8], [0.1, 0.9]]])
    n = 10_000
    draws = np.stack(
        [forward_noise(tau0, 1, rng.normal(size=tau0.shape), sched) for _ in range(n)]
    )
    mean = draws.mean(axis=0)
    se = math.sqrt(0.5 / n)
    assert np.all(np.abs(mean - math.sqrt(0.5) * tau0) < 3 * se)
    var = draws.var(axis=0)
    assert np.all(np.abs(var - 0.5) < 0.05 * 0.5)


def test_forward_noise_pure_contraction_norm_ratio():
    sched = build_schedule(10, "linear", 0.02, 0.3)
    tau0 = np.random.default_rng(7).normal(size=(2, 6, 2))
    for step in (1, 5, 10):
        out = forward_noise(tau0, step, np.zeros_like(tau0), sched)
        ratio = np.linalg.norm(out) / np.linalg.norm(tau0)
        assert abs(ratio - math.sqrt(sched.alpha_bar(step))) < 1e-12


def test_forward_noise_accepts_torch_tensors():
    sched = _abar_quarter_schedule()
    tau0 = torch.ones(1, 2, 2)
    out = forward_noise(tau0, 1, torch.zeros_like(tau0), sched)
    assert torch.allclose(out, torch.full_like(tau0, 0.5))


# ---------------------------------------------------------------------------
# denoise_step
# ---------------------------------------------------------------------------

def _schedule_with(alpha, alpha_bar):
    beta = 1.0 - alpha
    return NoiseSchedule(
        num_steps=2,
        betas=np.array([beta, beta]),
        alphas=np.array([alpha, alpha]),
        alpha_bars=np.array([alpha, alpha_bar]),
        sigmas=np.array([0.0, math.sqrt(beta)]),
    )


def test_denoise_step_zero_eps_rescales():
    sched = _schedule_with(alpha=0.81, alpha_bar=0.81 * 0.81)
    slate = np.array([[[0.9, -0.45]]])
    state = denoise_step(DiffusionState(slate, 2), np.zeros_like(slate), sched, np.zeros_like(slate))
    np.testing.assert_allclose(state.slate, slate / 0.9, rtol=1e-12)
    assert state.step == 1


def test_denoise_step_hand_derived_scalar():
    sched = _schedule_with(alpha=0.9, alpha_bar=0.81)
    slate = np.array([[[1.0, 0.0]]])
    eps_hat = np.array([[[1.0, 0.0]]])
    state = denoise_step(DiffusionState(slate, 2), eps_hat, sched, np.zeros_like(slate))
    expected = (1.0 / math.sqrt(0.9)) * (1.0 - 0.1 / math.sqrt(0.19))
    assert abs(state.slate[0, 0, 0] - expected) < 1e-12
    assert round(float(state.slate[0, 0, 0]), 4) == 0.8123


def test_final_step_ignores_z():
    sched = build_schedule(3)
    slate = np.random.default_rng(0).normal(size=(1, 4, 2))
    eps_hat = np.random.default_rng(1).normal(size=slate.shape)
    big_z = 1e6 * np.ones_like(slate)
    a = denoise_step(DiffusionState(slate, 1), eps_hat, sched, big_z)
    b = denoise_step(DiffusionState(slate, 1), eps_hat, sched, np.zeros_like(slate))
    np.testing.assert_array_equal(a.slate, b.slate)
    assert a.step == 0


def test_denoise_step_at_zero_rejected():
    sched = build_schedule(3)
    slate = np.zeros((1, 2, 2))
    with pytest.raises(RangeError):
        denoise_step(DiffusionState(slate, 0), slate, sched, slate)


def test_denoise_inverts_one_step_forward_noising():
    # An oracle eps_hat that exactly reproduces the injected noise must
    # recover tau0 on the scalar single-step case.
    sched = build_schedule(1, "linear", 0.3, 0.3)
    tau0 = np.array([[[0.625, -0.25]]])
    eps = np.array([[[0.37, 1.2]]])
    tau1 = forward_noise(tau0, 1, eps, sched)
    state = denoise_step(DiffusionState(tau1, 1), eps, sched, np.zeros_like(tau0))
    # One-step chain: alpha_1 = abar_1, so the posterior mean equals tau0.
    np.testing.assert_allclose(state.slate, tau0, atol=1e-6)


def test_posterior_mean_matches_denoise_step_mean():
    sched = build_schedule(8)
    rng = np.random.default_rng(3)
    slate = rng.normal(size=(2, 4, 2))
    eps_hat = rng.normal(size=slate.shape)
    state = denoise_step(DiffusionState(slate, 5), eps_hat, sched, np.zeros_like(slate))
    np.testing.assert_array_equal(state.slate, posterior_mean(slate, 5, eps_hat, sched))


# ---------------------------------------------------------------------------
# training_loss
# ---------------------------------------------------------------------------

def test_loss_zero_on_identical_slates():
    x = np.random.default_rng(0).normal(size=(2, 5, 2))
    assert training_loss(x, x) == 0.0


def test_loss_of_unit_offset_is_one():
    zeros = np.zeros((3, 4, 2))
    assert training_loss(zeros, np.ones_like(zeros)) == 1.0


def test_loss_matches_elementwise_loop_oracle():
    rng = np.random.default_rng(42)
    a = rng.normal(size=(2, 2))
    b = rng.normal(size=(2, 2))
    total = 0.0
    count = 0
    for i in range(2):
        for j in range(2):
            total += (a[i, j] - b[i, j]) ** 2
            count += 1
    assert abs(training_loss(a, b) - total / count) < 1e-12


def test_loss_shape_mismatch_rejected():
    with pytest.raises(ShapeError):
        training_loss(np.zeros((2, 2)), np.zeros((2, 3)))


def test_loss_keeps_torch_autograd():
    pred = torch.zeros(2, 3, requires_grad=True)
    loss = training_loss(torch.ones(2, 3), pred)
    loss.backward()
    assert pred.grad is not None
