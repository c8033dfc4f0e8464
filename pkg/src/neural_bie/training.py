"""Optimization primitives: initialization, activation, Adam with step decay,
and a finite-difference gradient checker.

Reverse-mode gradients come from torch autograd; the checker below is an
independent central-difference route used to validate them.
"""

from dataclasses import dataclass
import math

import numpy as np
import torch
import torch.nn.functional as F

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def xavier_init(shape, rng):
    """Uniform Glorot initialization with bound sqrt(6 / (fan_in + fan_out))."""
    fan_out, fan_in = shape[0], shape[-1]
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def gelu(z):
    """Exact GeLU, z * Phi(z), with Phi evaluated through erf."""
    if isinstance(z, torch.Tensor):
        return F.gelu(z)
    z = torch.as_tensor(z, dtype=torch.float64)
    out = F.gelu(z)
    return out.item() if out.ndim == 0 else out.numpy()


@dataclass(frozen=True)
class LrSchedule:
    base: float = 1e-3
    decay_rate: float = 0.95
    period: int = 20_000

    def rate(self, step):
        return self.base * self.decay_rate ** (step // self.period)


def make_optimizer(params):
    return torch.optim.Adam(params, lr=LrSchedule().base, betas=ADAM_BETAS, eps=ADAM_EPS)


def adam_step(optimizer, schedule, step):
    """Apply one Adam update at the scheduled rate for ``step``.

    Gradients must already be populated on the optimizer's parameters.
    """
    lr = schedule.rate(step)
    for group in optimizer.param_groups:
        group["lr"] = lr
    optimizer.step()
    return lr


def backward(loss):
    if loss.numel() != 1:
        raise ValueError("backward needs a scalar root")
    loss.backward()


def fd_gradient(loss_fn, params, h=1e-5):
    """Central finite differences of ``loss_fn()`` w.r.t. every entry of ``params``."""
    grads = []
    with torch.no_grad():
        for p in params:
            g = torch.zeros_like(p)
            flat, gflat = p.view(-1), g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                fp = float(loss_fn())
                flat[i] = orig - h
                fm = float(loss_fn())
                flat[i] = orig
                gflat[i] = (fp - fm) / (2 * h)
            grads.append(g)
    return grads


def max_relative_error(ad, fd, floor=1e-3):
    """Largest entrywise |ad - fd| / max(|ad|, |fd|, floor * max|fd|).

    The floor keeps entries that are tiny relative to the gradient scale from
    dominating through finite-difference roundoff.
    """
    a = np.concatenate([g.detach().reshape(-1).numpy() for g in ad])
    b = np.concatenate([g.detach().reshape(-1).numpy() for g in fd])
    scale = max(np.max(np.abs(b)), np.finfo(float).tiny)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor * scale)
    return float(np.max(np.abs(a - b) / denom))


def gradcheck(loss_fn, params, h=1e-5, corrupt=False):
    """Compare autograd with central differences; returns the max relative error.

    ``corrupt`` scales the reverse-mode result as a negative control.
    """
    params = [p for p in params if p.requires_grad]
    for p in params:
        p.grad = None
    loss = loss_fn()
    backward(loss)
    ad = [p.grad.clone() for p in params]
    if corrupt:
        ad = [g * 1.01 for g in ad]
    fd = fd_gradient(loss_fn, params, h)
    return max_relative_error(ad, fd)
