"""Continuous problem data: coefficients, velocity/diffusivity models, weights.

All evaluators are vectorized over an (n, dim) batch of points and pure.
Velocity fields expose analytic divergence (never finite differences); the
built-in incompressible fields return exact zeros. Diffusivity models expose
the pointwise tensor, its analytic row-wise divergence, and its inverse (the
squared Type-2 flux weight A^2 = D^-1, so no matrix square root is formed).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, EllipticityError

__all__ = [
    "sign",
    "ConstantVelocity",
    "ShearVelocity",
    "MultimodeStreamVelocity",
    "VortexVelocity",
    "ChaoticVortexVelocity",
    "CellularVelocity",
    "ScalarDiffusivity",
    "RotatedAnisotropicDiffusivity",
    "weight_arrays",
    "DirichletBC",
    "Problem",
    "constant_scalar",
    "strongly_nonuniform_indicator",
    "check_assumptions",
    "VELOCITY_REGISTRY",
    "DIFFUSIVITY_REGISTRY",
    "build_velocity",
    "build_diffusivity",
]


def sign(phi):
    """Exact sign trichotomy: -1 for negatives, 0 at zero, +1 for positives."""
    return np.sign(phi)


# ---------------------------------------------------------------------------
# Velocity fields
# ---------------------------------------------------------------------------


class _VelocityBase:
    """Common interface: value, analytic divergence, strain difference."""

    dim = 2

    def __call__(self, pts, t=0.0):
        raise NotImplementedError

    def divergence(self, pts, t=0.0):
        return np.zeros(np.atleast_2d(pts).shape[0])

    def strain_difference(self, pts, t=0.0, h=1e-6):
        """d v_x/d x - d v_y/d y, by central differences unless overridden."""
        pts = np.atleast_2d(pts)
        if self.dim == 1:
            return np.zeros(pts.shape[0])
        ex = np.zeros_like(pts)
        ex[:, 0] = h
        ey = np.zeros_like(pts)
        ey[:, 1] = h
        dvx = (self(pts + ex, t)[:, 0] - self(pts - ex, t)[:, 0]) / (2 * h)
        dvy = (self(pts + ey, t)[:, 1] - self(pts - ey, t)[:, 1]) / (2 * h)
        return dvx - dvy


class ConstantVelocity(_VelocityBase):
    """Uniform velocity; works in 1D and 2D."""

    def __init__(self, vector):
        self.vector = np.atleast_1d(np.asarray(vector, dtype=float))
        self.dim = self.vector.shape[0]

    def __call__(self, pts, t=0.0):
        pts = np.atleast_2d(pts)
        return np.broadcast_to(self.vector, (pts.shape[0], self.dim)).copy()

    def strain_difference(self, pts, t=0.0, h=1e-6):
        return np.zeros(np.atleast_2d(pts).shape[0])


class ShearVelocity(_VelocityBase):
    """v = (rate * y, 0): the boundary-layer shear flow."""

    def __init__(self, rate=2.0):
        self.rate = float(rate)

    def __call__(self, pts, t=0.0):
        pts = np.atleast_2d(pts)
        out = np.zeros_like(pts)
        out[:, 0] = self.rate * pts[:, 1]
        return out

    def strain_difference(self, pts, t=0.0, h=1e-6):
        return np.zeros(np.atleast_2d(pts).shape[0])


class MultimodeStreamVelocity(_VelocityBase):
    """Superposed-mode stream-function flow on a rectangle.

    psi = -y - sum_k A_k cos(p_k pi x / L_x - pi/2) sin(q_k pi y / L_y),
    v = (-d psi/d y, d psi/d x): a unit horizontal drift plus solenoidal
    modes; div v = 0 exactly.
    """

    def __init__(self, amplitudes, p_modes, q_modes, lx, ly):
        self.a = np.asarray(amplitudes, dtype=float)
        self.p = np.asarray(p_modes, dtype=float)
        self.q = np.asarray(q_modes, dtype=float)
        self.lx = float(lx)
        self.ly = float(ly)

    def _phases(self, pts):
        x = pts[:, 0:1]
        y = pts[:, 1:2]
        u = self.p * np.pi * x / self.lx - np.pi / 2.0
        w = self.q * np.pi * y / self.ly
        return u, w

    def __call__(self, pts, t=0.0):
        pts = np.atleast_2d(pts)
        u, w = self._phases(pts)
        kx = self.q * np.pi / self.ly
        ky = self.p * np.pi / self.lx
        vx = 1.0 + (self.a * kx * np.cos(u) * np.cos(w)).sum(axis=1)
        vy = (self.a * ky * np.sin(u) * np.sin(w)).sum(axis=1)
        return np.stack([vx, vy], axis=1)

    def strain_difference(self, pts, t=0.0, h=1e-6):
        # div v = 0, so the difference is 2 * d v_x / d x (analytic)
        pts = np.atleast_2d(pts)
        u, w = self._phases(pts)
        kxx = self.q * np.pi / self.ly * self.p * np.pi / self.lx
        dvx = -(self.a * kxx * np.sin(u) * np.cos(w)).sum(axis=1)
        return 2.0 * dvx

    def stream_function(self, pts):
        pts = np.atleast_2d(pts)
        u, w = self._phases(pts)
        return -pts[:, 1] - (self.a * np.cos(u) * np.sin(w)).sum(axis=1)


class VortexVelocity(_VelocityBase):
    """Steady counter-rotating vortex lattice v = (cos 2 pi y, cos 2 pi x)."""

    def __call__(self, pts, t=0.0):
        pts = np.atleast_2d(pts)
        return np.stack(
            [np.cos(2 * np.pi * pts[:, 1]), np.cos(2 * np.pi * pts[:, 0])], axis=1
        )

    def strain_difference(self, pts, t=0.0, h=1e-6):
        return np.zeros(np.atleast_2d(pts).shape[0])


class ChaoticVortexVelocity(_VelocityBase):
    """Time-switched vortex lattice generating chaotic advection.

    During the first half of each period the x-component gains a
    perturbation v0*sin(2 pi y); during the second half the perturbation
    moves to the y-component.
    """

    def __init__(self, period=0.8, v0=1.0):
        self.period = float(period)
        self.v0 = float(v0)

    def first_half(self, t):
        phase = np.mod(t, self.period) / self.period
        return phase < 0.5

    def __call__(self, pts, t=0.0):
        pts = np.atleast_2d(pts)
        vx = np.cos(2 * np.pi * pts[:, 1])
        vy = np.cos(2 * np.pi * pts[:, 0])
        if self.first_half(t):
            vx = vx + self.v0 * np.sin(2 * np.pi * pts[:, 1])
        else:
            vy = vy + self.v0 * np.sin(2 * np.pi * pts[:, 0])
        return np.stack([vx, vy], axis=1)

    def strain_difference(self, pts, t=0.0, h=1e-6):
        return np.zeros(np.atleast_2d(pts).shape[0])


class CellularVelocity(_VelocityBase):
    """Array of closed convection cells of size L_cell/2.

    v = (-sin(2 pi x/L) cos(2 pi y/L), cos(2 pi x/L) sin(2 pi y/L));
    v.n = 0 on the boundary of any rectangle whose sides are multiples of
    L/2, and v_y vanishes on horizontal cell interfaces.
    """

    def __init__(self, l_cell):
        self.l_cell = float(l_cell)

    def __call__(self, pts, t=0.0):
        pts = np.atleast_2d(pts)
        k = 2 * np.pi / self.l_cell
        vx = -np.sin(k * pts[:, 0]) * np.cos(k * pts[:, 1])
        vy = np.cos(k * pts[:, 0]) * np.sin(k * pts[:, 1])
        return np.stack([vx, vy], axis=1)

    def strain_difference(self, pts, t=0.0, h=1e-6):
        pts = np.atleast_2d(pts)
        k = 2 * np.pi / self.l_cell
        return -2.0 * k * np.cos(k * pts[:, 0]) * np.cos(k * pts[:, 1])


def strongly_nonuniform_indicator(velocity, dt, pts, t=0.0):
    """max over samples of (d v_x/d x - d v_y/d y) * dt.

    Values above 1 flag the stretching regime that makes explicit transport
    schemes struggle; the caller compares against 1.
    """
    return float(np.max(velocity.strain_difference(pts, t)) * dt)


# ---------------------------------------------------------------------------
# Diffusivity models
# ---------------------------------------------------------------------------


class ScalarDiffusivity:
    """Isotropic diffusivity D(x) = d0 * I."""

    def __init__(self, value, dim=2):
        self.value = float(value)
        self.dim = int(dim)
        if self.value <= 0.0:
            raise EllipticityError("scalar diffusivity must be positive")

    def __call__(self, pts):
        n = np.atleast_2d(pts).shape[0]
        out = np.zeros((n, self.dim, self.dim))
        idx = np.arange(self.dim)
        out[:, idx, idx] = self.value
        return out

    def divergence(self, pts):
        return np.zeros((np.atleast_2d(pts).shape[0], self.dim))

    def inverse(self, pts):
        n = np.atleast_2d(pts).shape[0]
        out = np.zeros((n, self.dim, self.dim))
        idx = np.arange(self.dim)
        out[:, idx, idx] = 1.0 / self.value
        return out


class RotatedAnisotropicDiffusivity:
    """Heterogeneous anisotropic diffusivity D = R D0 R^T.

    D0(x) = w0 * [[y*^2 + w2 x*^2, -(1-w2) x* y*],
                  [-(1-w2) x* y*,  w2 y*^2 + x*^2]],
    with x* = x + w1, y* = y + w1, and R a fixed rotation by theta.
    Eigenvalues are w0 (x*^2 + y*^2) and w0 w2 (x*^2 + y*^2): the anisotropy
    ratio is 1/w2 everywhere.
    """

    dim = 2

    def __init__(self, theta, w0=1.0, w1=1e-3, w2=1e-3):
        self.theta = float(theta)
        self.w0 = float(w0)
        self.w1 = float(w1)
        self.w2 = float(w2)
        if self.w0 <= 0 or self.w2 <= 0:
            raise EllipticityError("anisotropic diffusivity requires w0, w2 > 0")
        c, s = np.cos(self.theta), np.sin(self.theta)
        self.rot = np.array([[c, -s], [s, c]])

    def _stars(self, pts):
        pts = np.atleast_2d(pts)
        return pts[:, 0] + self.w1, pts[:, 1] + self.w1

    def _d0(self, pts):
        xs, ys = self._stars(pts)
        n = xs.shape[0]
        d0 = np.empty((n, 2, 2))
        d0[:, 0, 0] = ys**2 + self.w2 * xs**2
        d0[:, 0, 1] = -(1.0 - self.w2) * xs * ys
        d0[:, 1, 0] = d0[:, 0, 1]
        d0[:, 1, 1] = self.w2 * ys**2 + xs**2
        return self.w0 * d0

    def __call__(self, pts):
        d0 = self._d0(pts)
        return np.einsum("ab,nbc,dc->nad", self.rot, d0, self.rot)

    def eigenvalues(self, pts):
        xs, ys = self._stars(pts)
        r2 = xs**2 + ys**2
        return self.w0 * self.w2 * r2, self.w0 * r2

    def divergence(self, pts):
        """Row-wise divergence, analytically: div(D)_a = sum_b d D_ab / d x_b."""
        xs, ys = self._stars(pts)
        n = xs.shape[0]
        # Partial derivatives of D0 entries w.r.t. physical x and y
        ddx = np.empty((n, 2, 2))
        ddx[:, 0, 0] = 2 * self.w2 * xs
        ddx[:, 0, 1] = -(1.0 - self.w2) * ys
        ddx[:, 1, 0] = ddx[:, 0, 1]
        ddx[:, 1, 1] = 2 * xs
        ddy = np.empty((n, 2, 2))
        ddy[:, 0, 0] = 2 * ys
        ddy[:, 0, 1] = -(1.0 - self.w2) * xs
        ddy[:, 1, 0] = ddy[:, 0, 1]
        ddy[:, 1, 1] = 2 * self.w2 * ys
        gx = self.w0 * np.einsum("ab,nbc,dc->nad", self.rot, ddx, self.rot)
        gy = self.w0 * np.einsum("ab,nbc,dc->nad", self.rot, ddy, self.rot)
        return gx[:, :, 0] + gy[:, :, 1]

    def inverse(self, pts):
        return np.linalg.inv(self(pts))


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------


def weight_arrays(scheme, d_tensors, alpha_values):
    """Squared least-squares weights (A^2, beta^2) at sample points.

    Type-1: A = I, beta = 1. Type-2: A = D^{-1/2} (so A^2 = D^{-1}),
    beta = alpha^{-1/2} where alpha != 0, else 1.
    """
    d_tensors = np.asarray(d_tensors)
    alpha_values = np.asarray(alpha_values, dtype=float)
    n, dim = d_tensors.shape[0], d_tensors.shape[1]
    if scheme == "type1":
        a2 = np.broadcast_to(np.eye(dim), (n, dim, dim)).copy()
        b2 = np.ones(n)
        return a2, b2
    if scheme == "type2":
        a2 = np.linalg.inv(d_tensors)
        nonzero = alpha_values != 0.0
        b2 = np.where(nonzero, 1.0 / np.where(nonzero, alpha_values, 1.0), 1.0)
        return a2, b2
    raise ConfigurationError(f"unknown weight scheme {scheme!r}")


# ---------------------------------------------------------------------------
# Problem container
# ---------------------------------------------------------------------------


def constant_scalar(value):
    """Closure returning `value` at every point of a batch."""

    def evaluate(pts, t=0.0):
        return np.full(np.atleast_2d(pts).shape[0], float(value))

    return evaluate


@dataclass
class DirichletBC:
    """One Dirichlet patch: nodal predicate plus value function.

    ``where`` maps (n, dim) coordinates to a boolean mask; ``value`` maps
    (n, dim) coordinates to prescribed concentrations. Patches are applied in
    order with first-match-wins at shared corner nodes.
    """

    where: Callable[[np.ndarray], np.ndarray]
    value: Callable[[np.ndarray], np.ndarray]


@dataclass
class Problem:
    """Steady/transient scalar transport problem definition.

    Coefficient callables are vectorized over points; optional analytic
    gradients of the source and reaction fields feed the stabilized
    formulation's residual corrections (zero when omitted, which is exact for
    uniform coefficients).
    """

    velocity: object
    diffusivity: object
    alpha: Callable = None
    source: Callable = None
    dirichlet: Sequence[DirichletBC] = field(default_factory=list)
    neumann_value: Optional[Callable] = None  # (pts, normals, t) -> q^p
    weight: str = "type1"
    alpha_grad: Optional[Callable] = None
    source_grad: Optional[Callable] = None
    initial: Optional[Callable] = None  # transient initial condition c0(x)

    def __post_init__(self):
        if self.alpha is None:
            self.alpha = constant_scalar(0.0)
        if self.source is None:
            self.source = constant_scalar(0.0)
        if self.weight not in ("type1", "type2"):
            raise ConfigurationError(f"unknown weight scheme {self.weight!r}")

    # -- nodal Dirichlet resolution ------------------------------------
    def dirichlet_nodes(self, coords):
        """Resolve Dirichlet patches to (node indices, values), first match wins."""
        n = coords.shape[0]
        fixed = np.zeros(n, dtype=bool)
        values = np.zeros(n)
        for patch in self.dirichlet:
            mask = np.asarray(patch.where(coords), dtype=bool) & ~fixed
            if mask.any():
                values[mask] = np.asarray(patch.value(coords[mask]), dtype=float)
                fixed |= mask
        return np.nonzero(fixed)[0], values[fixed]

    def neumann(self, pts, normals, t=0.0):
        if self.neumann_value is None:
            return np.zeros(np.atleast_2d(pts).shape[0])
        return np.asarray(self.neumann_value(pts, normals, t), dtype=float)


def check_assumptions(problem, pts, t=0.0):
    """Warn when alpha + div v or alpha + div v / 2 go negative at samples."""
    a = np.asarray(problem.alpha(pts))
    dv = np.asarray(problem.velocity.divergence(pts, t))
    worst_full = float((a + dv).min())
    worst_half = float((a + 0.5 * dv).min())
    if worst_full < 0 or worst_half < 0:
        warnings.warn(
            "coefficient assumption violated: min(alpha + div v) = "
            f"{worst_full:.3e}, min(alpha + div v / 2) = {worst_half:.3e}; "
            "the least-squares system remains convex but the continuous "
            "well-posedness bounds no longer apply",
            RuntimeWarning,
            stacklevel=2,
        )
    return worst_full, worst_half


# ---------------------------------------------------------------------------
# Config registries
# ---------------------------------------------------------------------------

VELOCITY_REGISTRY = {
    "constant": ConstantVelocity,
    "shear": ShearVelocity,
    "multimode": MultimodeStreamVelocity,
    "vortex": VortexVelocity,
    "chaotic-vortex": ChaoticVortexVelocity,
    "cellular": CellularVelocity,
}

DIFFUSIVITY_REGISTRY = {
    "scalar": ScalarDiffusivity,
    "rotated-anisotropic": RotatedAnisotropicDiffusivity,
}


def build_velocity(cfg):
    """Instantiate a velocity field from {'kind': name, **params}."""
    cfg = dict(cfg)
    kind = cfg.pop("kind", None)
    if kind not in VELOCITY_REGISTRY:
        raise ConfigurationError(f"unknown velocity kind {kind!r}")
    try:
        return VELOCITY_REGISTRY[kind](**cfg)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for velocity {kind!r}: {exc}")


def build_diffusivity(cfg):
    """Instantiate a diffusivity model from {'kind': name, **params}."""
    cfg = dict(cfg)
    kind = cfg.pop("kind", None)
    if kind not in DIFFUSIVITY_REGISTRY:
        raise ConfigurationError(f"unknown diffusivity kind {kind!r}")
    try:
        return DIFFUSIVITY_REGISTRY[kind](**cfg)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for diffusivity {kind!r}: {exc}")
