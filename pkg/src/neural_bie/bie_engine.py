"""Monte-Carlo boundary-integral loss and field reconstruction.

A *density* is any object with ``density(ts, samples) -> Tensor`` of shape
``(len(ts), M, n_out)``: the trained :class:`~neural_bie.operator_net.OperatorModel`,
a Nyström lookup from :mod:`neural_bie.oracles`, or :class:`ZeroDensity`.
Densities carry the parameter-to-surface jacobian, so a boundary integral
is estimated as ``domain_measure / M * sum(density * kernel)``.
"""

from dataclasses import dataclass, field
import math

import numpy as np
import torch
from scipy.spatial import cKDTree
from torch.utils.checkpoint import checkpoint

from . import geometry as geo
from . import kernels as ker
from . import rng as rngs


class TrainingError(RuntimeError):
    pass


def _u0_laplace(p):
    return np.exp(p[..., 0]) * np.sin(p[..., 1])


def _u0_biharmonic(p):
    x, y = p[..., 0], p[..., 1]
    return (x * x + y * y) * np.exp(x) * np.sin(y)


def _u0_biharmonic_dn(p, n):
    x, y = p[..., 0], p[..., 1]
    e, s, c = np.exp(x), np.sin(y), np.cos(y)
    r2 = x * x + y * y
    gx = 2 * x * e * s + r2 * e * s
    gy = 2 * y * e * s + r2 * e * c
    return gx * n[..., 0] + gy * n[..., 1]


@dataclass
class ProblemSpec:
    kind: str
    geometry: str
    t_range: tuple
    wavenumber: float = 0.0
    boundary_data: object = None
    boundary_data_dn: object = None

    def __post_init__(self):
        if self.kind == "helmholtz3d" and not self.wavenumber > 0:
            raise ValueError("Helmholtz problems need a positive wavenumber")
        lo, hi = self.t_range
        if lo > hi:
            raise ValueError(f"empty t-range [{lo}, {hi}]")
        if self.kind == "helmholtz3d":
            geo.check_hemisphere_t(lo)
            geo.check_hemisphere_t(hi)
        else:
            self.curve.check_t(lo)
            self.curve.check_t(hi)

    @property
    def dim(self):
        return 3 if self.kind == "helmholtz3d" else 2

    @property
    def curve(self):
        return geo.CURVES[self.geometry]

    @property
    def is_complex(self):
        return self.kind == "helmholtz3d"

    def incident(self, p):
        return np.exp(1j * self.wavenumber * p[..., 2])

    def data(self, p):
        if self.kind == "helmholtz3d":
            return -self.incident(p)
        return self.boundary_data(p)

    def truth(self, p):
        """Analytic field in the interior of a 2D contour, where one is known."""
        if self.kind == "helmholtz3d":
            return None
        return self.boundary_data(p)

    def sample(self, t, m, rng):
        if self.kind == "helmholtz3d":
            return geo.sample_hemispheres(t, m, rng)
        return geo.sample_curve(self.curve, t, m, rng)


def make_problem(kind, geometry=None, t_range=None, wavenumber=2 * math.pi):
    if kind == "laplace2d":
        return ProblemSpec(kind, geometry or "laplace-star", tuple(t_range or (1.0, 2.0)),
                           boundary_data=_u0_laplace)
    if kind == "biharmonic2d":
        return ProblemSpec(kind, geometry or "biharmonic-star", tuple(t_range or (1.0, 2.0)),
                           boundary_data=_u0_biharmonic, boundary_data_dn=_u0_biharmonic_dn)
    if kind == "helmholtz3d":
        return ProblemSpec(kind, geometry or "hemispheres", tuple(t_range or geo.HEMISPHERE_T_RANGE),
                           wavenumber=wavenumber)
    raise ValueError(f"unknown problem {kind!r}")


@dataclass
class TrainBatch:
    ts: np.ndarray
    quadrature: list
    observations: list
    targets: np.ndarray
    targets_dn: np.ndarray = None
    seed: tuple = field(default=())

    @property
    def n_t(self):
        return len(self.ts)


def make_batch(spec, n_t, n_y, m, seed, step=0):
    """Fresh geometry parameters, quadrature sets and observation sets.

    Each (step, j) pair has its own random streams, so batches can be
    rebuilt in any order.
    """
    lo, hi = spec.t_range
    ts = rngs.stream(seed, rngs.T_PARAMS, step).uniform(lo, hi, n_t) if hi > lo else np.full(n_t, lo)
    quad, obs = [], []
    for j, t in enumerate(ts):
        quad.append(spec.sample(t, m, rngs.stream(seed, rngs.QUADRATURE, step, j)))
        obs.append(spec.sample(t, n_y, rngs.stream(seed, rngs.OBSERVATION, step, j)))
    targets = np.stack([spec.data(o.points) for o in obs])
    targets_dn = None
    if spec.kind == "biharmonic2d":
        targets_dn = np.stack([spec.boundary_data_dn(o.points, o.normals) for o in obs])
    return TrainBatch(ts, quad, obs, targets, targets_dn, (seed, step))


class ZeroDensity:
    def __init__(self, n_out):
        self.n_out = n_out

    def density(self, ts, samples):
        return torch.zeros(len(ts), len(samples[0]), self.n_out, dtype=torch.float64)


class ScaledDensity:
    """``c * a + d * b`` for two densities (used in linearity checks)."""

    def __init__(self, a, ca=1.0, b=None, cb=0.0):
        self.a, self.ca, self.b, self.cb = a, ca, b, cb

    def density(self, ts, samples):
        out = self.ca * self.a.density(ts, samples)
        if self.b is not None:
            out = out + self.cb * self.b.density(ts, samples)
        return out


def _t(a):
    return torch.from_numpy(np.ascontiguousarray(a))


def kernel_blocks(spec, src, obs_points, obs_normals=None, beta=ker.DEFAULT_BETA):
    """Kernel matrices between quadrature points ``src`` and observation points.

    Returns a list of (n_obs, M) real tensors whose meaning depends on the
    problem: [G] (Laplace), [G, dG/dn_x, dG/dn_y, d2G/dn_x dn_y]
    (bi-harmonic), or [Re G, Im G] (Helmholtz).
    """
    x = _t(src.points)[None, :, :]
    y = _t(obs_points)[:, None, :]
    if spec.kind == "laplace2d":
        return [ker.laplace2d(x, y, beta=beta)]
    if spec.kind == "helmholtz3d":
        parts = ker.helmholtz3d_parts(x, y, spec.wavenumber, beta=beta)
        return [parts[0], parts[1]]
    nx = _t(src.normals)[None, :, :]
    blocks = [ker.biharmonic2d(x, y, beta=beta), ker.biharmonic2d_dn(x, y, nx, beta=beta)]
    if obs_normals is not None:
        ny = _t(obs_normals)[:, None, :]
        blocks += [ker.biharmonic2d_dny(x, y, ny, beta=beta),
                   ker.biharmonic2d_dnxdny(x, y, nx, ny, beta=beta)]
    return blocks


def represent(spec, blocks, dens, measure):
    """Apply the boundary-integral representation to a density.

    ``dens`` is (M, n_out). Returns the field (and, for bi-harmonic with
    observation normals, its normal derivative) as real tensors; Helmholtz
    returns (re, im).
    """
    w = measure / dens.shape[0]
    if spec.kind == "laplace2d":
        return (w * (blocks[0] @ dens[:, 0]),)
    if spec.kind == "helmholtz3d":
        kr, ki = blocks
        vr, vi = dens[:, 0], dens[:, 1]
        return (w * (kr @ vr - ki @ vi), w * (kr @ vi + ki @ vr))
    v, dv = dens[:, 0], dens[:, 1]
    out = (-w * (blocks[0] @ dv + blocks[1] @ v),)
    if len(blocks) == 4:
        out += (-w * (blocks[2] @ dv + blocks[3] @ v),)
    return out


# kernel entries per observation chunk; larger blocks are recomputed in backward
MAX_BLOCK_ENTRIES = 1 << 23


def _residual_sum(spec, q, obs_points, obs_normals, dens, target, target_dn, beta):
    with torch.no_grad():
        blocks = kernel_blocks(spec, q, obs_points, obs_normals, beta)
    out = represent(spec, blocks, dens, q.domain_measure)
    if spec.kind == "helmholtz3d":
        res = (out[0] - _t(target.real)) ** 2 + (out[1] - _t(target.imag)) ** 2
    elif spec.kind == "biharmonic2d":
        res = (out[0] - _t(target)) ** 2 + (out[1] - _t(target_dn)) ** 2
    else:
        res = (out[0] - _t(target)) ** 2
    return res.sum()


def mc_loss(model, spec, batch, beta=ker.DEFAULT_BETA):
    """Mean squared boundary residual of the learned representation."""
    dens = model.density(batch.ts, batch.quadrature)
    total = 0.0
    for j in range(batch.n_t):
        q, o = batch.quadrature[j], batch.observations[j]
        tdn = batch.targets_dn[j] if batch.targets_dn is not None else None
        rows = max(1, MAX_BLOCK_ENTRIES // len(q))
        if rows >= len(o):
            total = total + _residual_sum(spec, q, o.points, o.normals, dens[j], batch.targets[j],
                                          tdn, beta)
            continue
        for s in range(0, len(o), rows):
            sl = slice(s, s + rows)
            total = total + checkpoint(
                _residual_sum, spec, q, o.points[sl], o.normals[sl], dens[j], batch.targets[j][sl],
                None if tdn is None else tdn[sl], beta, use_reentrant=False)
    loss = total / (batch.n_t * len(batch.observations[0]))
    if torch.isnan(loss):
        raise TrainingError(f"NaN loss on batch (seed, step) = {batch.seed}")
    return loss


def eval_sample(spec, t, m_eval, seed=0):
    return spec.sample(t, m_eval, rngs.stream(seed, rngs.EVALUATION, 0))


def eval_field(model, spec, t, y, m_eval=20_000, seed=0, beta=ker.DEFAULT_BETA, chunk=512,
               sample=None):
    """Field at off-boundary points ``y`` (n, dim) from a fresh quadrature sample."""
    y = np.asarray(y, dtype=float)
    q = sample if sample is not None else eval_sample(spec, t, m_eval, seed)
    with torch.no_grad():
        dens = model.density([t], [q])[0]
        parts = []
        for i in range(0, len(y), chunk):
            blocks = kernel_blocks(spec, q, y[i:i + chunk], None, beta)
            out = represent(spec, blocks, dens, q.domain_measure)
            parts.append(out[0].numpy() + (1j * out[1].numpy() if spec.is_complex else 0))
    return np.concatenate(parts) if parts else np.zeros(0)


def far_field(model, spec, t, directions, m_eval=20_000, seed=0, sample=None):
    """Far-field pattern (1/4pi) * integral of exp(-ik d.x) v(x) over the boundary."""
    d = np.asarray(directions, dtype=float)
    q = sample if sample is not None else eval_sample(spec, t, m_eval, seed)
    with torch.no_grad():
        dens = model.density([t], [q])[0].numpy()
    v = dens[:, 0] + 1j * dens[:, 1]
    phase = np.exp(-1j * spec.wavenumber * (d @ q.points.T))
    return q.domain_measure / len(q) * (phase @ v) / (4 * math.pi)


def total_field(model, spec, t, grid, m_eval=20_000, seed=0, sample=None):
    pts = grid.valid_points
    return spec.incident(pts) + eval_field(model, spec, t, pts, m_eval, seed, sample=sample)


def relative_l2(pred, truth):
    """Squared-norm ratio sum|pred - truth|^2 / sum|truth|^2."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    den = np.sum(np.abs(truth) ** 2)
    if den == 0:
        raise ZeroDivisionError("relative l2 undefined for all-zero truth")
    return float(np.sum(np.abs(pred - truth) ** 2) / den)


@dataclass
class FieldGrid:
    points: np.ndarray
    mask: np.ndarray
    shape: tuple

    @property
    def valid_points(self):
        return self.points[self.mask]


def interior_grid(curve, t, n=200, delta=0.01, n_boundary=20_000):
    """Regular n x n grid over the curve's bounding box, kept strictly inside."""
    alpha = np.linspace(0, 2 * np.pi, n_boundary, endpoint=False)
    bpts, _, _ = geo.curve_point(curve, alpha, t)
    rmax = np.max(np.hypot(bpts[:, 0], bpts[:, 1]))
    xs = np.linspace(-rmax, rmax, n)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=-1)
    inside = np.hypot(pts[:, 0], pts[:, 1]) < curve.radius(np.arctan2(pts[:, 1], pts[:, 0]), t)
    dist, _ = cKDTree(bpts).query(pts)
    return FieldGrid(pts, inside & (dist >= delta), (n, n))


def polar_grid(radii, n_angle=64):
    a = np.linspace(0, 2 * np.pi, n_angle, endpoint=False)
    r, a = np.meshgrid(np.asarray(radii, dtype=float), a, indexing="ij")
    pts = np.stack([(r * np.cos(a)).ravel(), (r * np.sin(a)).ravel()], axis=-1)
    return FieldGrid(pts, np.ones(len(pts), bool), r.shape)


def hemisphere_distance(points, t):
    """Distance to the two open unit hemispheres centred at (0, 0, +-t)."""
    p = np.asarray(points, dtype=float)
    rho = np.hypot(p[:, 0], p[:, 1])
    out = np.full(len(p), np.inf)
    for sign in (1.0, -1.0):
        zc = sign * t
        dz = p[:, 2] - zc
        on_cap = sign * dz >= 0
        d_cap = np.abs(np.sqrt(rho**2 + dz**2) - 1.0)
        d_rim = np.sqrt((rho - 1.0) ** 2 + dz**2)
        out = np.minimum(out, np.where(on_cap, d_cap, d_rim))
    return out


def inside_hemispheres(points, t):
    p = np.asarray(points, dtype=float)
    rho2 = p[:, 0] ** 2 + p[:, 1] ** 2
    up = (p[:, 2] >= t) & (rho2 + (p[:, 2] - t) ** 2 < 1)
    down = (p[:, 2] <= -t) & (rho2 + (p[:, 2] + t) ** 2 < 1)
    return up | down


def slice_grid(t, n=161, half_width=4.0, delta=0.01):
    """Plane y = 0 over (x, z) in [-w, w]^2, obstacles and a delta-band removed."""
    xs = np.linspace(-half_width, half_width, n)
    gx, gz = np.meshgrid(xs, xs, indexing="ij")
    pts = np.stack([gx.ravel(), np.zeros(gx.size), gz.ravel()], axis=-1)
    mask = ~inside_hemispheres(pts, t) & (hemisphere_distance(pts, t) >= delta)
    return FieldGrid(pts, mask, (n, n))


def sphere_directions(n_theta=37, n_phi=72):
    """Latitude-longitude grid on S^2; returns (theta, phi, unit vectors)."""
    th = np.linspace(0, np.pi, n_theta)
    ph = np.linspace(0, 2 * np.pi, n_phi, endpoint=False)
    T, P = np.meshgrid(th, ph, indexing="ij")
    T, P = T.ravel(), P.ravel()
    d = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1)
    return T, P, d
