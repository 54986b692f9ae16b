import numpy as np
import pytest

from partlab import rng
from partlab.schedule import ABAR_END, ABAR_START, make_schedule, q_sample


def test_boundary_values():
    sched = make_schedule(T=50)
    assert sched.alpha_bar[0] == 1.0
    assert np.isclose(sched.alpha_bar[1], ABAR_START)
    assert np.isclose(sched.alpha_bar[-1], ABAR_END)
    assert sched.T == 50


def test_alpha_bar_strictly_decreasing():
    sched = make_schedule(T=50)
    assert np.all(np.diff(sched.alpha_bar) < 0)


def test_rejects_tiny_horizon_and_unknown_kind():
    with pytest.raises(ValueError):
        make_schedule(T=1)
    with pytest.raises(ValueError):
        make_schedule(T=50, kind="cosine")


def test_sigma_zero_when_eta_zero():
    sched = make_schedule(T=50)
    assert all(sched.sigma(t, eta=0.0) == 0.0 for t in range(1, 51))


def test_sigma_eta_one_matches_posterior_formula():
    sched = make_schedule(T=50)
    ab = sched.alpha_bar
    for t in (1, 10, 50):
        want = np.sqrt((1 - ab[t - 1]) / (1 - ab[t])) * np.sqrt(1 - ab[t] / ab[t - 1])
        assert np.isclose(sched.sigma(t, eta=1.0), want)


def test_noise_recovery_from_forward_sample():
    # eps = (x_t - sqrt(abar) x0) / sqrt(1 - abar) must invert q_sample exactly
    sched = make_schedule(T=50)
    g = rng.stream(0, "schedule-test")
    x0 = g.normal(size=(3, 8, 8))
    eps = g.normal(size=(3, 8, 8))
    for t in (1, 25, 50):
        xt = q_sample(x0, t, eps, sched)
        ab = sched.alpha_bar[t]
        back = (xt - np.sqrt(ab) * x0) / np.sqrt(1 - ab)
        assert np.max(np.abs(back - eps)) < 1e-10


def test_q_sample_at_full_signal_is_identity_limit():
    sched = make_schedule(T=50)
    x0 = np.ones((2, 2))
    eps = np.zeros((2, 2))
    assert np.allclose(q_sample(x0, 0, eps, sched), x0)
