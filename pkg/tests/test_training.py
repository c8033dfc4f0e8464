import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from neural_bie import training as tr


def test_xavier_variance():
    g = np.random.default_rng(0)
    w = tr.xavier_init((300, 200), g)
    bound = math.sqrt(6 / 500)
    assert np.max(np.abs(w)) <= bound
    # uniform on [-b, b] has variance b^2 / 3 = 2 / (fan_in + fan_out)
    assert w.var() == pytest.approx(2 / 500, rel=0.02)


def test_gelu_known_values():
    assert tr.gelu(0.0) == 0.0
    # z * Phi(z) with Phi(1) = (1 + erf(1/sqrt 2)) / 2
    assert tr.gelu(1.0) == pytest.approx(0.5 * (1 + math.erf(1 / math.sqrt(2))), rel=1e-15)
    assert tr.gelu(-1.0) == pytest.approx(-0.15865525393145707, rel=1e-14)


@given(st.floats(-30, 30))
def test_gelu_odd_part_identity(z):
    # Phi(z) + Phi(-z) = 1 gives gelu(z) - gelu(-z) = z
    assert tr.gelu(z) - tr.gelu(-z) == pytest.approx(z, abs=1e-13)


def test_gelu_vectorized():
    out = tr.gelu(np.array([-1.0, 0.0, 2.0]))
    assert isinstance(out, np.ndarray) and out.shape == (3,)


def test_lr_schedule():
    s = tr.LrSchedule()
    assert s.rate(0) == 1e-3
    assert s.rate(19_999) == 1e-3
    assert s.rate(20_000) == pytest.approx(9.5e-4, rel=1e-15)
    assert s.rate(40_000) == pytest.approx(1e-3 * 0.95**2, rel=1e-15)


def test_adam_single_step_hand_oracle():
    p = torch.tensor([1.0, -2.0, 0.5], dtype=torch.float64, requires_grad=True)
    g = torch.tensor([0.3, -4.0, 1e-9], dtype=torch.float64)
    opt = tr.make_optimizer([p])
    p.grad = g.clone()
    tr.adam_step(opt, tr.LrSchedule(), 0)
    # bias-corrected moments at step 1 are g and g^2
    m_hat, v_hat = g, g**2
    expect = torch.tensor([1.0, -2.0, 0.5], dtype=torch.float64) - 1e-3 * m_hat / (v_hat.sqrt() + 1e-8)
    torch.testing.assert_close(p.detach(), expect, rtol=0, atol=1e-15)


def test_adam_two_steps_hand_oracle():
    p = torch.tensor([0.0], dtype=torch.float64, requires_grad=True)
    opt = tr.make_optimizer([p])
    x = 0.0
    m = v = 0.0
    for k, g in enumerate([2.0, -1.0], start=1):
        p.grad = torch.tensor([g], dtype=torch.float64)
        tr.adam_step(opt, tr.LrSchedule(), k - 1)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x -= 1e-3 * (m / (1 - 0.9**k)) / (math.sqrt(v / (1 - 0.999**k)) + 1e-8)
    assert p.item() == pytest.approx(x, abs=1e-16)


def test_backward_rejects_non_scalar():
    x = torch.ones(3, dtype=torch.float64, requires_grad=True)
    with pytest.raises(ValueError):
        tr.backward(x * 2)


def _quad_problem():
    w = torch.tensor([[0.3, -1.2], [2.0, 0.7]], dtype=torch.float64, requires_grad=True)
    b = torch.tensor([0.1, -0.4], dtype=torch.float64, requires_grad=True)
    x = torch.tensor([0.5, -1.5], dtype=torch.float64)
    return (lambda: (tr.gelu(w @ x + b) ** 2).sum()), [w, b]


def test_gradcheck_passes_and_corruption_detected():
    fn, params = _quad_problem()
    assert tr.gradcheck(fn, params) < 1e-6
    fn, params = _quad_problem()
    assert tr.gradcheck(fn, params, corrupt=True) > 5e-3


def test_fd_gradient_of_quadratic():
    p = torch.tensor([1.0, 2.0], dtype=torch.float64)
    g = tr.fd_gradient(lambda: (p**2).sum(), [p])[0]
    torch.testing.assert_close(g, 2 * p, rtol=1e-9, atol=0)


def test_relative_error_floor():
    ad = [torch.tensor([1.0, 1e-12], dtype=torch.float64)]
    fd = [torch.tensor([1.0, 2e-12], dtype=torch.float64)]
    assert tr.max_relative_error(ad, fd) < 1e-8


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_lr_monotone_nonincreasing(step):
    s = tr.LrSchedule()
    assert s.rate(step + 1) <= s.rate(step)


class _ConstantDensity(torch.nn.Module):
    def __init__(self, a):
        super().__init__()
        self.a = torch.nn.Parameter(torch.tensor(a, dtype=torch.float64))

    def density(self, ts, samples):
        return self.a * torch.ones(len(ts), len(samples[0]), 1, dtype=torch.float64)


def test_single_parameter_gradient_matches_closed_form():
    from neural_bie import bie_engine as eng

    spec = eng.make_problem("laplace2d")
    batch = eng.make_batch(spec, 2, 7, 30, seed=4)
    model = _ConstantDensity(0.7)
    loss = eng.mc_loss(model, spec, batch)
    tr.backward(loss)
    # loss = mean (a s - f)^2 with s the quadrature sum of -log r / 2pi
    grads = []
    for q, o, f in zip(batch.quadrature, batch.observations, batch.targets):
        r = np.linalg.norm(o.points[:, None, :] - q.points[None, :, :], axis=-1)
        s = 2 * np.pi / len(q) * np.sum(-np.log(r) / (2 * np.pi), axis=1)
        grads.append(2 * (0.7 * s - f) * s)
    expected = np.mean(grads)
    assert model.a.grad.item() == pytest.approx(expected, rel=1e-12)
