"""Verification machinery.

Error norms against closed-form solutions, element balance reports,
convergence-rate extraction, 1D benchmark solutions, the single-field
Galerkin/normal-equations diagnostic system, and matrix sign-pattern
classification.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .assembly import assemble_lsb_constraints
from .elements import gauss_legendre
from .errors import ConfigurationError
from .physics import ConstantVelocity, DirichletBC, Problem, ScalarDiffusivity
from .qp import QPProblem, solve_qp
from .solver import BalanceReport

__all__ = [
    "ManufacturedSolution",
    "AcademicDemo",
    "lsb_errors",
    "error_norms",
    "convergence_rates",
    "write_convergence_csv",
    "integrate_field",
    "manufactured_problem",
    "analytical_adr_1d",
    "galerkin_1d_system",
    "normal_equations_demo",
    "count_sign_changes",
    "zmatrix_threshold_1d",
    "classify_matrix",
]


# ---------------------------------------------------------------------------
# Element balance errors
# ---------------------------------------------------------------------------


def lsb_errors(field, problem, t=0.0, alpha_shift=0.0, nodal_source=None):
    """Per-element balance residuals of a solved field.

    Evaluates the same equality rows the constrained modes enforce, so a
    balance-constrained solve reports residuals at solver tolerance while an
    unconstrained solve reports the genuine element-wise imbalance.
    """
    ac, aq, bf = assemble_lsb_constraints(
        field.mesh, problem, t=t, alpha_shift=alpha_shift, nodal_source=nodal_source
    )
    residual = ac @ field.c + aq @ field.q_flat - bf
    return BalanceReport(element_residuals=residual)


# ---------------------------------------------------------------------------
# Error norms and convergence rates
# ---------------------------------------------------------------------------


def _refined_rule(kind):
    """Quadrature two Gauss orders above the assembly rules."""
    if kind == "line2":
        pts, wts = gauss_legendre(4)
        return pts[:, None], wts
    if kind == "quad4":
        pts1, wts1 = gauss_legendre(4)
        r, s = np.meshgrid(pts1, pts1, indexing="ij")
        return np.stack([r.ravel(), s.ravel()], axis=1), np.outer(wts1, wts1).ravel()
    if kind == "tri3":
        # symmetric seven-point rule, exact through degree 5
        a = 0.059715871789770
        b = 0.470142064105115
        c = 0.797426985353087
        d = 0.101286507323456
        pts = np.array(
            [
                [1 / 3, 1 / 3],
                [a, b],
                [b, a],
                [b, b],
                [c, d],
                [d, c],
                [d, d],
            ]
        )
        wts = 0.5 * np.array(
            [
                0.225,
                0.132394152788506,
                0.132394152788506,
                0.132394152788506,
                0.125939180544827,
                0.125939180544827,
                0.125939180544827,
            ]
        )
        return pts, wts
    raise ConfigurationError(f"unknown element kind {kind!r}")


def integrate_field(mesh, values, weight=None):
    """Volume integral of a nodal field, optionally against a point weight.

    ``weight``, if given, is a vectorized callable of physical coordinates
    evaluated at the quadrature points (not interpolated), so polynomial
    weights up to the elevated rule's degree integrate exactly.
    """
    el = mesh.element
    xe = mesh.element_coords()
    pts, wts = _refined_rule(mesh.kind)
    n_sh = el.shape(pts)
    dn = el.dshape(pts)
    jac = np.einsum("eia,pij->epaj", xe, dn)
    det = np.linalg.det(jac)
    vals = np.einsum("pi,ei->ep", n_sh, np.asarray(values, dtype=float)[mesh.connect])
    if weight is not None:
        xg = np.einsum("pi,eia->epa", n_sh, xe)
        w = np.asarray(weight(xg.reshape(-1, mesh.dim)), dtype=float)
        vals = vals * w.reshape(vals.shape)
    return float(np.sum(wts[None, :] * det * vals))


def error_norms(field, exact, t=0.0):
    """L2 and H1-seminorm errors of concentration and flux.

    ``exact`` provides vectorized callables ``conc``, ``grad``, ``flux`` and
    ``flux_grad`` (the last returning d q_a / d x_b with shape (n, dim, dim)).
    Integration uses a quadrature rule two orders above the assembly rules.
    The flux seminorm differentiates the nodal interpolant literally, which
    is mesh-sensitive inside unresolved layers.
    """
    mesh = field.mesh
    el = mesh.element
    nd = mesh.dim
    xe = mesh.element_coords()

    pts, wts = _refined_rule(mesh.kind)
    n_sh = el.shape(pts)
    dn = el.dshape(pts)
    jac = np.einsum("eia,pij->epaj", xe, dn)
    det = np.linalg.det(jac)
    if np.any(det <= 0.0):
        raise ConfigurationError("non-positive Jacobian determinant")
    jinv = np.linalg.inv(jac)
    wdet = wts[None, :] * det
    grads = np.einsum("pij,epja->epia", dn, jinv)  # (E, P, nen, nd)
    xg = np.einsum("pi,eia->epa", n_sh, xe)
    flat = xg.reshape(-1, nd)

    ce = field.c[mesh.connect]
    qe = field.q[mesh.connect]  # (E, nen, nd)

    ch = np.einsum("pi,ei->ep", n_sh, ce)
    gch = np.einsum("epia,ei->epa", grads, ce)
    qh = np.einsum("pi,eia->epa", n_sh, qe)
    gqh = np.einsum("epib,eia->epab", grads, qe)

    shape = ch.shape
    c_ex = np.asarray(exact.conc(flat, t), dtype=float).reshape(shape)
    gc_ex = np.asarray(exact.grad(flat, t), dtype=float).reshape(*shape, nd)
    q_ex = np.asarray(exact.flux(flat, t), dtype=float).reshape(*shape, nd)
    gq_ex = np.asarray(exact.flux_grad(flat, t), dtype=float).reshape(*shape, nd, nd)

    c_l2 = np.sum(wdet * (ch - c_ex) ** 2)
    c_h1 = np.sum(wdet * np.sum((gch - gc_ex) ** 2, axis=-1))
    q_l2 = np.sum(wdet * np.sum((qh - q_ex) ** 2, axis=-1))
    q_h1 = np.sum(wdet * np.sum((gqh - gq_ex) ** 2, axis=(-2, -1)))
    return {
        "c_l2": float(np.sqrt(c_l2)),
        "c_h1": float(np.sqrt(c_h1)),
        "q_l2": float(np.sqrt(q_l2)),
        "q_h1": float(np.sqrt(q_h1)),
    }


def convergence_rates(errors, hs):
    """Per-interval slopes log(e_i/e_{i+1}) / log(h_i/h_{i+1})."""
    errors = np.asarray(errors, dtype=float)
    hs = np.asarray(hs, dtype=float)
    if errors.shape != hs.shape or errors.ndim != 1 or errors.size < 2:
        raise ConfigurationError("need matching 1-d sequences of length >= 2")
    return np.log(errors[:-1] / errors[1:]) / np.log(hs[:-1] / hs[1:])


_NORM_KEYS = ("c_l2", "c_h1", "q_l2", "q_h1")


def write_convergence_csv(path, hs, dofs, norm_rows):
    """Write a refinement study as CSV.

    Columns: h, dofs, the four error norms, and the per-interval rate of each
    norm (blank on the coarsest row). ``norm_rows`` is a sequence of dicts as
    returned by :func:`error_norms`, ordered coarse to fine.
    """
    hs = np.asarray(hs, dtype=float)
    if not (len(hs) == len(dofs) == len(norm_rows)):
        raise ConfigurationError("mismatched refinement-study lengths")
    rates = {}
    for key in _NORM_KEYS:
        errs = np.array([row[key] for row in norm_rows])
        rates[key] = convergence_rates(errs, hs) if len(hs) > 1 else np.array([])
    lines = ["h,dofs," + ",".join(_NORM_KEYS) + ","
             + ",".join(f"rate_{k}" for k in _NORM_KEYS)]
    for i, (h, nd) in enumerate(zip(hs, dofs)):
        cells = [f"{h:.12g}", str(int(nd))]
        cells += [f"{norm_rows[i][k]:.12e}" for k in _NORM_KEYS]
        cells += ["" if i == 0 else f"{rates[k][i - 1]:.6g}" for k in _NORM_KEYS]
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Manufactured boundary-layer benchmark on the unit square
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManufacturedSolution:
    """c = sin(pi x) g(y) transported by v = e_y with scalar diffusivity.

    g solves D g'' - g' - D pi^2 g = 0 with g(0)=1, g(1)=0, so the source
    is identically zero and the exact flux is available in closed form. The
    exponentials are factored so no positive-exponent term is ever formed.
    """

    d: float
    m1: float
    m2: float

    @classmethod
    def create(cls, d):
        d = float(d)
        if d <= 0:
            raise ConfigurationError("diffusivity must be positive")
        root = np.hypot(1.0, 2.0 * np.pi * d)  # sqrt(1 + 4 pi^2 D^2)
        m1 = (1.0 - root) / (2.0 * d)
        m2 = (1.0 + root) / (2.0 * d)
        return cls(d=d, m1=m1, m2=m2)

    def _g(self, y):
        y = np.asarray(y, dtype=float)
        den = 1.0 - np.exp(-(self.m2 - self.m1))
        e1 = np.exp(self.m1 * y)
        e2 = np.exp(self.m2 * (y - 1.0) + self.m1)
        g = (e1 - e2) / den
        gp = (self.m1 * e1 - self.m2 * e2) / den
        gpp = (self.m1**2 * e1 - self.m2**2 * e2) / den
        return g, gp, gpp

    def conc(self, pts, t=0.0):
        pts = np.atleast_2d(pts)
        g, _, _ = self._g(pts[:, 1])
        return np.sin(np.pi * pts[:, 0]) * g

    def grad(self, pts, t=0.0):
        pts = np.atleast_2d(pts)
        g, gp, _ = self._g(pts[:, 1])
        sx = np.sin(np.pi * pts[:, 0])
        cx = np.cos(np.pi * pts[:, 0])
        return np.stack([np.pi * cx * g, sx * gp], axis=1)

    def flux(self, pts, t=0.0):
        """q = c e_y - D grad c."""
        pts = np.atleast_2d(pts)
        g, gp, _ = self._g(pts[:, 1])
        sx = np.sin(np.pi * pts[:, 0])
        cx = np.cos(np.pi * pts[:, 0])
        return np.stack([-self.d * np.pi * cx * g, sx * (g - self.d * gp)], axis=1)

    def flux_grad(self, pts, t=0.0):
        pts = np.atleast_2d(pts)
        g, gp, gpp = self._g(pts[:, 1])
        sx = np.sin(np.pi * pts[:, 0])
        cx = np.cos(np.pi * pts[:, 0])
        out = np.empty((len(pts), 2, 2))
        out[:, 0, 0] = self.d * np.pi**2 * sx * g
        out[:, 0, 1] = -self.d * np.pi * cx * gp
        out[:, 1, 0] = np.pi * cx * (g - self.d * gp)
        out[:, 1, 1] = sx * (gp - self.d * gpp)
        return out

    def nodal(self, mesh):
        """Exact nodal concentration and flux on a mesh."""
        c = self.conc(mesh.coords)
        q = self.flux(mesh.coords)
        return c, q


def manufactured_problem(d=1e-2, weight="type1"):
    """Unit-square benchmark with known solution and zero source."""
    exact = ManufacturedSolution.create(d)
    tol = 1e-12
    dirichlet = [
        DirichletBC(
            where=lambda c: c[:, 1] < tol,
            value=lambda c: np.sin(np.pi * c[:, 0]),
        ),
        DirichletBC(
            where=lambda c: (c[:, 0] < tol)
            | (c[:, 0] > 1.0 - tol)
            | (c[:, 1] > 1.0 - tol),
            value=lambda c: np.zeros(len(c)),
        ),
    ]
    problem = Problem(
        velocity=ConstantVelocity([0.0, 1.0]),
        diffusivity=ScalarDiffusivity(d),
        dirichlet=dirichlet,
        weight=weight,
    )
    return problem, exact


# ---------------------------------------------------------------------------
# 1D closed-form advection-diffusion solutions
# ---------------------------------------------------------------------------


def analytical_adr_1d(v, d, c0, q0, length, bc_kind="sign-aware"):
    """Closed-form c(x) for  d/dx (v c - D c') = 0,  c(0) = c0  on (0, length).

    The outlet condition at x = length is either the total flux (v c - D c'
    = q0), the diffusive flux (-D c' = q0), or chosen by the sign of v: total
    flux on inflow (v < 0), diffusive flux on outflow (v > 0). The total-flux
    solution grows like e^{v x / D} when v > 0 and the diffusive-flux one when
    v < 0 -- the sign-aware dispatch always returns the bounded branch.
    """
    if d <= 0:
        raise ConfigurationError("diffusivity must be positive")
    if bc_kind not in ("total", "diffusive", "sign-aware"):
        raise ConfigurationError(f"unknown boundary kind {bc_kind!r}")
    v = float(v)
    d = float(d)
    c0 = float(c0)
    q0 = float(q0)
    length = float(length)

    if bc_kind == "sign-aware":
        bc_kind = "diffusive" if v > 0 else "total"

    def conc(x):
        x = np.asarray(x, dtype=float)
        if v == 0.0:
            # pure diffusion: -D c' = q0 under either reading
            return c0 - q0 * x / d
        if bc_kind == "total":
            return (q0 + (v * c0 - q0) * np.exp(v * x / d)) / v
        return (v * c0 + q0 * np.exp(-v * length / d) - q0 * np.exp(v * (x - length) / d)) / v

    return conc


# ---------------------------------------------------------------------------
# Single-field Galerkin rows and the normal-equations diagnostic
# ---------------------------------------------------------------------------


def galerkin_1d_system(nelem, v, d, alpha=0.0, f=0.0, length=1.0):
    """Interior single-field system for  alpha c + v c' - D c'' = f,  c=0 ends.

    Equal linear elements; row i couples (c_{i-1}, c_i, c_{i+1}) through
    (alpha h / 6)[1, 4, 1] + (v / 2)[-1, 0, 1] + (D / h)[-1, 2, -1].
    Returns the dense interior matrix, the consistent load, and h.
    """
    nelem = int(nelem)
    if nelem < 2:
        raise ConfigurationError("need at least two elements")
    if d <= 0:
        raise ConfigurationError("diffusivity must be positive")
    if alpha < 0:
        raise ConfigurationError("reaction coefficient must be non-negative")
    h = length / nelem
    n = nelem - 1
    lower = alpha * h / 6.0 - v / 2.0 - d / h
    diag = 4.0 * alpha * h / 6.0 + 2.0 * d / h
    upper = alpha * h / 6.0 + v / 2.0 - d / h
    k = np.zeros((n, n))
    idx = np.arange(n)
    k[idx, idx] = diag
    k[idx[1:], idx[:-1]] = lower
    k[idx[:-1], idx[1:]] = upper
    load = np.full(n, f * h)
    return k, load, h


def count_sign_changes(values, floor=1e-8):
    """Sign alternations of consecutive nodal differences above a floor."""
    d = np.diff(np.asarray(values, dtype=float))
    signs = np.sign(d[np.abs(d) > floor])
    if signs.size < 2:
        return 0
    return int(np.sum(signs[1:] * signs[:-1] < 0))


@dataclass(frozen=True)
class AcademicDemo:
    """Outputs of the oscillation/conditioning diagnostic."""

    h: float
    pe_h: float
    cond_galerkin: float
    cond_normal: float
    galerkin: np.ndarray
    constrained: np.ndarray
    sign_changes_galerkin: int
    sign_changes_constrained: int
    certificate: object


def normal_equations_demo(nelem=11, v=1.0, d=1.0 / 150.0, f=1.0):
    """Solve the 1D advection test both directly and as a bounded quadratic.

    The direct path solves K c = F. The second path minimizes the
    normal-equations quadratic 1/2 <c, K^T K c> - <c, K^T F> subject to
    c >= 0. Reports 2-norm condition numbers of K and K^T K and the
    oscillation counts of both nodal solutions (boundary zeros included).
    """
    k, load, h = galerkin_1d_system(nelem, v, d, alpha=0.0, f=f)
    pe_h = abs(v) * h / (2.0 * d)
    cond_k = float(np.linalg.cond(k, 2))
    cond_ktk = float(np.linalg.cond(k.T @ k, 2))

    interior = np.linalg.solve(k, load)
    galerkin = np.concatenate([[0.0], interior, [0.0]])

    n = k.shape[0]
    qp = QPProblem(
        h=sp.csr_matrix(k.T @ k),
        g=-(k.T @ load),
        a=None,
        b=None,
        lower=np.zeros(n),
        upper=np.full(n, np.inf),
        nc=n,
    )
    sol = solve_qp(qp)
    constrained = np.concatenate([[0.0], sol.x, [0.0]])

    return AcademicDemo(
        h=h,
        pe_h=pe_h,
        cond_galerkin=cond_k,
        cond_normal=cond_ktk,
        galerkin=galerkin,
        constrained=constrained,
        sign_changes_galerkin=count_sign_changes(galerkin),
        sign_changes_constrained=count_sign_changes(constrained),
        certificate=sol,
    )


# ---------------------------------------------------------------------------
# Sign-pattern classification
# ---------------------------------------------------------------------------


def zmatrix_threshold_1d(v, d, alpha=0.0):
    """Largest uniform h keeping the 1D interior rows Z-sign-patterned.

    h_max = 12 D / (3|v| + sqrt(9 v^2 + 24 alpha D)); infinite for pure
    diffusion (v = 0, alpha = 0), where the rows are always Z-patterned.
    """
    if d <= 0:
        raise ConfigurationError("diffusivity must be positive")
    if alpha < 0:
        raise ConfigurationError("reaction coefficient must be non-negative")
    den = 3.0 * abs(v) + np.sqrt(9.0 * v * v + 24.0 * alpha * d)
    if den == 0.0:
        return np.inf
    return 12.0 * d / den


def classify_matrix(m, tol=1e-12):
    """Sign-pattern and definiteness classes of a square matrix.

    is_Z: off-diagonal entries all <= 0 (within tol * max|entry|);
    is_P: symmetric part positive definite; is_M: both.
    """
    m = np.asarray(m.toarray() if sp.issparse(m) else m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ConfigurationError("need a square matrix")
    scale = max(float(np.abs(m).max()), 1.0)
    off = m - np.diag(np.diag(m))
    is_z = bool(np.all(off <= tol * scale))
    w = np.linalg.eigvalsh(0.5 * (m + m.T))
    is_p = bool(w[0] > tol * scale)
    return {"is_Z": is_z, "is_P": is_p, "is_M": is_z and is_p}
