"""Deterministic reference solvers used to ground-truth learned results.

* Nyström discretisations of the 2D single-layer (Laplace) and two-kernel
  (bi-harmonic) boundary equations on star curves.
* Separation-of-variables series for plane-wave scattering by a sound-soft
  unit sphere, plus a coarse axisymmetric collocation solver that checks it.
* Finite-difference checks of the manufactured boundary data.
"""

from dataclasses import dataclass
import math

import numpy as np
import torch
from scipy import special

from . import geometry as geo
from . import kernels as ker


class SingularSystemError(np.linalg.LinAlgError):
    def __init__(self, msg, condition):
        super().__init__(f"{msg} (condition estimate {condition:.3e})")
        self.condition = condition


MAX_CONDITION = 1e12


def trig_interp(values, alpha):
    """Trigonometric interpolant of equispaced periodic samples, evaluated at ``alpha``."""
    values = np.asarray(values)
    n = len(values)
    c = np.fft.fft(values, axis=0) / n
    k = np.fft.fftfreq(n, 1.0 / n)
    if n % 2 == 0:
        # split the Nyquist mode so the interpolant stays real
        c = np.concatenate([c, c[n // 2: n // 2 + 1] / 2])
        c[n // 2] /= 2
        k = np.concatenate([k, [n // 2]])
    # Horner in z = exp(i alpha) is stable on the unit circle and avoids a dense phase matrix
    k = k.astype(int)
    lo = k.min()
    coef = np.zeros((k.max() - lo + 1,) + c.shape[1:], dtype=complex)
    np.add.at(coef, k - lo, c)
    z = np.exp(1j * np.asarray(alpha, dtype=float))
    out = np.moveaxis(np.polynomial.polynomial.polyval(z, coef), -1, 0) * (z**lo).reshape(
        (-1,) + (1,) * (c.ndim - 1))
    return out.real if np.isrealobj(values) else out


def _nodes(curve, t, n):
    alpha = 2 * np.pi * np.arange(n) / n
    pts, nrm, jac = geo.curve_point(curve, alpha, t)
    return alpha, pts, nrm, jac


def _solve(a, b):
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularSystemError("Nyström matrix is numerically singular", cond)
    x = np.linalg.solve(a, b)
    return x, cond


@dataclass
class NystromSolution:
    """Nodal densities per unit arclength on an equispaced parameter grid."""

    kind: str
    curve: object
    t: float
    alpha: np.ndarray
    points: np.ndarray
    normals: np.ndarray
    jacobians: np.ndarray
    densities: np.ndarray  # (n, channels)
    constant: float = 0.0
    condition: float = float("nan")
    residual: float = float("nan")

    @property
    def n(self):
        return len(self.alpha)

    @property
    def potential_nodes(self):
        """Densities with the arclength jacobian absorbed, as the network learns them."""
        return self.densities * self.jacobians[:, None]

    def density(self, ts, samples):
        out = []
        for t, s in zip(ts, samples):
            if not np.isclose(t, self.t):
                raise ValueError(f"oracle density solved at t={self.t}, asked for t={t}")
            out.append(trig_interp(self.potential_nodes, s.params[:, 0]))
        return torch.from_numpy(np.stack(out))

    def field(self, y):
        """Trapezoid-rule representation at off-boundary points."""
        y = np.asarray(y, dtype=float)
        h = 2 * np.pi / self.n
        w = h * self.jacobians
        x = self.points[None, :, :]
        yy = y[:, None, :]
        if self.kind == "laplace2d":
            g = ker.laplace2d(x, yy)
            return g @ (w * self.densities[:, 0]) + self.constant
        g = ker.biharmonic2d(x, yy)
        gn = ker.biharmonic2d_dn(x, yy, self.normals[None, :, :])
        return -(g @ (w * self.densities[:, 1]) + gn @ (w * self.densities[:, 0]))


def nystrom_laplace(curve, t, n, data, augment_constant=False):
    """Single-layer Nyström solve with straight-panel analytic diagonal.

    With ``augment_constant`` the representation gains an unknown constant
    and the density a zero-mean constraint, which removes the degeneracy of
    capacity-one contours (e.g. the unit circle).
    """
    if n < 64:
        raise ValueError(f"need N >= 64 nodes, got {n}")
    alpha, pts, nrm, jac = _nodes(curve, t, n)
    h = 2 * np.pi / n
    a = ker.laplace2d(pts[:, None, :], pts[None, :, :]) * (h * jac)[None, :]
    panel = h * jac
    a[np.diag_indices(n)] = panel / (2 * np.pi) * (1 - np.log(panel / 2))
    b = data(pts)
    if augment_constant:
        big = np.zeros((n + 1, n + 1))
        big[:n, :n] = a
        big[:n, n] = 1.0
        big[n, :n] = panel
        sol, cond = _solve(big, np.append(b, 0.0))
        rho, const = sol[:n], sol[n]
        resid = np.linalg.norm(big @ sol - np.append(b, 0.0)) / np.linalg.norm(b)
    else:
        _check_capacity(a, panel, b)
        rho, cond = _solve(a, b)
        const = 0.0
        resid = np.linalg.norm(a @ rho - b) / np.linalg.norm(b)
    return NystromSolution("laplace2d", curve, t, alpha, pts, nrm, jac, rho[:, None],
                           const, cond, resid)


def _check_capacity(a, panel, b, tol=1e-3, consistency=1e-8):
    """Reject inconsistent data on (nearly) capacity-one contours.

    There the single layer maps the equilibrium density to ~0, so data with
    a component along it cannot be represented without an added constant.
    """
    n = len(b)
    big = np.zeros((n + 1, n + 1))
    big[:n, :n] = a
    big[:n, n] = 1.0
    big[n, :n] = panel
    rhs = np.zeros(n + 1)
    rhs[n] = 1.0
    sol = np.linalg.solve(big, rhs)
    eq, robin = sol[:n], -sol[n]
    if abs(robin) >= tol:
        return
    overlap = abs(np.dot(panel * eq, b)) / (np.linalg.norm(panel * eq) * np.linalg.norm(b))
    if overlap > consistency:
        cond = np.linalg.norm(a, 2) * np.linalg.norm(eq) / (abs(robin) * math.sqrt(n))
        raise SingularSystemError(
            f"single layer is degenerate on this contour (Robin constant {robin:.2e}); "
            "use augment_constant=True",
            cond,
        )


def nystrom_biharmonic(curve, t, n, data, data_dn):
    """Block Nyström solve of the Dirichlet and Neumann conditions.

    Unknown channels are (v, w): the double-layer density and its companion
    single-layer density. Only the mixed second-derivative block is singular;
    its log part gets the same straight-panel treatment as the Laplace case.
    """
    if n < 64:
        raise ValueError(f"need N >= 64 nodes, got {n}")
    alpha, pts, nrm, jac = _nodes(curve, t, n)
    h = 2 * np.pi / n
    panel = h * jac
    x, y = pts[None, :, :], pts[:, None, :]
    nx, ny = nrm[None, :, :], nrm[:, None, :]
    g = ker.biharmonic2d(x, y)
    gnx = ker.biharmonic2d_dn(x, y, nx)
    gny = ker.biharmonic2d_dny(x, y, ny)
    gnn = ker.biharmonic2d_dnxdny(x, y, nx, ny)
    di = np.diag_indices(n)
    for m in (g, gnx, gny):
        m[di] = 0.0
    gnn = gnn * panel[None, :]
    gnn[di] = -panel * (2 * np.log(panel / 2) - 1) / (8 * np.pi)
    a = np.block([
        [-gnx * panel[None, :], -g * panel[None, :]],
        [-gnn, -gny * panel[None, :]],
    ])
    b = np.concatenate([data(pts), data_dn(pts, nrm)])
    sol, cond = _solve(a, b)
    resid = np.linalg.norm(a @ sol - b) / np.linalg.norm(b)
    dens = np.stack([sol[:n], sol[n:]], axis=-1)
    return NystromSolution("biharmonic2d", curve, t, alpha, pts, nrm, jac, dens,
                           0.0, cond, resid)


def nystrom_solve(spec, t, n, augment_constant=False):
    """Oracle density for a 2D :class:`~neural_bie.bie_engine.ProblemSpec`."""
    if spec.kind == "laplace2d":
        return nystrom_laplace(spec.curve, t, n, spec.boundary_data, augment_constant)
    if spec.kind == "biharmonic2d":
        return nystrom_biharmonic(spec.curve, t, n, spec.boundary_data, spec.boundary_data_dn)
    raise ValueError(f"no Nyström oracle for {spec.kind}")


# -- sound-soft unit sphere ------------------------------------------------


class SeriesError(ArithmeticError):
    pass


@dataclass
class SphereSeries:
    """Plane wave exp(ikz) scattered by a sound-soft unit sphere."""

    k: float
    n_terms: int = 0
    tol: float = 1e-14
    max_terms: int = 400

    def __post_init__(self):
        if self.k <= 0:
            raise ValueError("wavenumber must be positive")
        if not self.n_terms:
            self.n_terms = self._choose_terms()
        n = np.arange(self.n_terms)
        j = special.spherical_jn(n, self.k)
        yv = special.spherical_yn(n, self.k)
        with np.errstate(all="ignore"):
            ratio = j / (j + 1j * yv)
        ratio[~np.isfinite(ratio)] = 0.0
        self.orders = n
        self.ratio = ratio

    def _choose_terms(self):
        quiet = 0
        for n in range(self.max_terms):
            j = special.spherical_jn(n, self.k)
            yv = special.spherical_yn(n, self.k)
            with np.errstate(all="ignore"):
                term = abs((2 * n + 1) * j / (j + 1j * yv)) if np.isfinite(yv) else 0.0
            quiet = quiet + 1 if (n > self.k and term < self.tol) else 0
            if quiet >= 3:
                return n + 1
        raise SeriesError(f"series did not converge within {self.max_terms} terms for k={self.k}")

    def far_field_cos(self, mu):
        """Far field as a function of cos(polar angle)."""
        mu = np.asarray(mu, dtype=float)
        p = special.eval_legendre(self.orders[:, None], mu[None, :])
        return (1j / self.k) * ((2 * self.orders + 1) * self.ratio) @ p

    def far_field(self, directions):
        d = np.asarray(directions, dtype=float)
        mu = d[:, 2] / np.linalg.norm(d, axis=1)
        return self.far_field_cos(mu)

    def scattered(self, points):
        """Scattered field at |x| >= 1."""
        p = np.asarray(points, dtype=float)
        r = np.linalg.norm(p, axis=1)
        mu = p[:, 2] / r
        n = self.orders[:, None]
        kr = self.k * r[None, :]
        h = special.spherical_jn(n, kr) + 1j * special.spherical_yn(n, kr)
        leg = special.eval_legendre(n, mu[None, :])
        coef = -(1j ** self.orders) * (2 * self.orders + 1) * self.ratio
        return coef @ (h * leg)


def sphere_far_field(k, directions, n_terms=0):
    return SphereSeries(k, n_terms).far_field(directions)


def sphere_collocation(k, n_theta=48, n_phi=96):
    """Axisymmetric Nyström solve of the sphere's single-layer equation.

    Returns (mu nodes, Gauss weights, density at nodes, phi offsets). The
    1/r part is handled by singularity subtraction using S0[1] = 1 on the
    unit sphere; the remainder (e^{ikr} - 1)/r is bounded. Least squares is
    used because k may be an interior Dirichlet eigenvalue, where the
    density is non-unique but its radiated field is not.
    """
    mu, w = np.polynomial.legendre.leggauss(n_theta)
    st = np.sqrt(1 - mu**2)
    phi = (np.arange(n_phi) + 0.5) * 2 * np.pi / n_phi
    dphi = 2 * np.pi / n_phi
    x = np.stack([st, np.zeros(n_theta), mu], axis=-1)
    y = np.stack([
        st[:, None] * np.cos(phi)[None, :],
        st[:, None] * np.sin(phi)[None, :],
        np.broadcast_to(mu[:, None], (n_theta, n_phi)),
    ], axis=-1)
    r = np.linalg.norm(x[:, None, None, :] - y[None, :, :, :], axis=-1)
    g0 = 1 / (4 * np.pi * r)
    g1 = np.expm1(1j * k * r) / (4 * np.pi * r)
    wq = (w * dphi)[None, :]
    a0 = g0.sum(-1) * wq
    a1 = g1.sum(-1) * wq
    a = a0 + a1
    a[np.diag_indices(n_theta)] += 1.0 - a0.sum(axis=1)
    b = -np.exp(1j * k * mu)
    sigma = np.linalg.lstsq(a, b, rcond=1e-10)[0]
    return mu, w, sigma, phi


def collocation_far_field(k, directions, n_theta=48, n_phi=96):
    mu, w, sigma, phi = sphere_collocation(k, n_theta, n_phi)
    st = np.sqrt(1 - mu**2)
    y = np.stack([
        st[:, None] * np.cos(phi)[None, :],
        st[:, None] * np.sin(phi)[None, :],
        np.broadcast_to(mu[:, None], (len(mu), len(phi))),
    ], axis=-1).reshape(-1, 3)
    wq = np.repeat(w * sigma, len(phi)) * (2 * np.pi / len(phi))
    d = np.asarray(directions, dtype=float)
    return np.exp(-1j * k * d @ y.T) @ wq / (4 * np.pi)


# -- manufactured boundary data ------------------------------------------------


def fd_laplacian(f, p, h):
    p = np.atleast_2d(np.asarray(p, dtype=float))
    out = -2 * p.shape[1] * f(p)
    for i in range(p.shape[1]):
        e = np.zeros(p.shape[1])
        e[i] = h
        out = out + f(p + e) + f(p - e)
    return out / h**2


def fd_bilaplacian(f, p, h):
    return fd_laplacian(lambda q: fd_laplacian(f, q, h), p, h)


def check_manufactured(spec, probes=None, h_lap=1e-4, h_bilap=1e-2):
    """Finite-difference harmonicity / bi-harmonicity check of the boundary data.

    Second differences use h = 1e-4 (roundoff ~ eps/h^2 ~ 1e-8); the iterated
    stencil needs h = 1e-2 because its roundoff grows like eps/h^4.
    """
    if probes is None:
        g = np.linspace(-0.9, 0.9, 7)
        probes = np.stack(np.meshgrid(g, g), axis=-1).reshape(-1, 2)
    f = spec.boundary_data
    if spec.kind == "laplace2d":
        vals = fd_laplacian(f, probes, h_lap)
        tol = 1e-5
    elif spec.kind == "biharmonic2d":
        vals = fd_bilaplacian(f, probes, h_bilap)
        tol = 1e-2
    else:
        raise ValueError(f"no manufactured solution for {spec.kind}")
    worst = float(np.max(np.abs(vals)))
    return {"kind": spec.kind, "max_residual": worst, "tolerance": tol, "passed": worst < tol}
