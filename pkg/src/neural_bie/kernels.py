"""Fundamental solutions and their normal derivatives.

All kernels broadcast over leading axes: ``x`` and ``y`` have a trailing
coordinate axis and the result drops it. Inputs may be numpy arrays or
torch tensors; numpy in gives numpy out. Every value passes through
:func:`truncate` so near-singular evaluations stay finite.
"""

import functools
import math

import numpy as np
import torch

DEFAULT_BETA = 1e5


def _array_io(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        as_numpy = any(isinstance(a, np.ndarray) for a in args)
        targs = [
            torch.as_tensor(a, dtype=torch.float64) if isinstance(a, (np.ndarray, list, tuple)) else a
            for a in args
        ]
        out = fn(*targs, **kwargs)
        return out.numpy() if as_numpy else out

    return wrapper


def truncate(v, beta=DEFAULT_BETA):
    """Clamp each real component into [-beta, beta]; NaN becomes beta."""
    if beta <= 0:
        raise ValueError("truncation threshold must be positive")
    if isinstance(v, np.ndarray):
        return truncate(torch.from_numpy(v), beta).numpy()
    if torch.is_complex(v):
        return torch.complex(truncate(v.real, beta), truncate(v.imag, beta))
    return torch.nan_to_num(v, nan=beta).clamp(-beta, beta)


def _dot(a, b):
    # explicit sum over the short coordinate axis; much faster than .sum(-1)
    out = a[..., 0] * b[..., 0]
    for i in range(1, a.shape[-1]):
        out = out + a[..., i] * b[..., i]
    return out


def _diff(x, y):
    d = x - y
    return d, torch.sqrt(_dot(d, d))


@_array_io
def laplace2d(x, y, beta=DEFAULT_BETA):
    _, r = _diff(x, y)
    return truncate(-torch.log(r) / (2 * math.pi), beta)


@_array_io
def laplace3d(x, y, beta=DEFAULT_BETA):
    _, r = _diff(x, y)
    return truncate(1.0 / (4 * math.pi * r), beta)


@_array_io
def biharmonic2d(x, y, beta=DEFAULT_BETA):
    _, r = _diff(x, y)
    safe = torch.where(r > 0, r, torch.ones_like(r))
    val = torch.where(r > 0, safe**2 * torch.log(safe), torch.zeros_like(r))
    return truncate(val / (8 * math.pi), beta)


@_array_io
def biharmonic2d_dn(x, y, n_x, beta=DEFAULT_BETA):
    """Derivative of the bi-harmonic kernel along ``n_x`` (source side)."""
    d, r = _diff(x, y)
    safe = torch.where(r > 0, r, torch.ones_like(r))
    proj = _dot(d, n_x)
    val = torch.where(r > 0, (2 * torch.log(safe) + 1) * proj, torch.zeros_like(r))
    return truncate(val / (8 * math.pi), beta)


@_array_io
def biharmonic2d_dny(x, y, n_y, beta=DEFAULT_BETA):
    """Derivative along ``n_y`` (observation side)."""
    return biharmonic2d_dn(y, x, n_y, beta=beta)


@_array_io
def biharmonic2d_dnxdny(x, y, n_x, n_y, beta=DEFAULT_BETA):
    """Mixed second normal derivative; log-singular at x = y."""
    d, r = _diff(x, y)
    px = _dot(d, n_x)
    py = _dot(d, n_y)
    val = -(2 * px * py / r**2 + (2 * torch.log(r) + 1) * _dot(n_x, n_y))
    return truncate(val / (8 * math.pi), beta)


def _distance(x, y):
    # accumulate per axis so the (..., dim) difference tensor is never stored
    r2 = (x[..., 0] - y[..., 0]) ** 2
    for i in range(1, x.shape[-1]):
        r2 = r2 + (x[..., i] - y[..., i]) ** 2
    return torch.sqrt(r2)


def _helmholtz_stack(x, y, k, beta):
    r = _distance(x, y)
    inv = 1.0 / (4 * math.pi * r)
    kr = k * r
    return truncate(torch.stack([torch.cos(kr) * inv, torch.sin(kr) * inv]), beta)


@_array_io
def helmholtz3d(x, y, k, beta=DEFAULT_BETA):
    parts = _helmholtz_stack(x, y, k, beta)
    return torch.complex(parts[0], parts[1])


@_array_io
def helmholtz3d_parts(x, y, k, beta=DEFAULT_BETA):
    """Real and imaginary parts of :func:`helmholtz3d` stacked on a new leading axis."""
    return _helmholtz_stack(x, y, k, beta)
