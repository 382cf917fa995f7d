"""Global least-squares assembly for the mixed flux/concentration system.

Both formulations come from one element kernel that evaluates residual
operator rows at quadrature points and accumulates weighted outer products:

* flux residual         A (q - c v + D grad c - delta_e v L c)
* balance residual      beta (alpha c + div q - f - f_delta)
* boundary residual     (q - (1+Sign[v.n])/2 c v - delta_e (f - alpha c) v).n - q^p
* least-squares balance tau_e (L c + alpha c - f)   with tau_e <= 0

where ``L c = div[c v - D grad c]`` is the streamline operator row built
from physical gradients and (for the quadrilateral) isoparametric Hessian
rows. The plain formulation is the exact degenerate case
``delta_e = tau_e = 0``: it runs through the identical code path and
quadrature rule, so the two agree bit for bit when the stabilization
vanishes. Quadrature is elevated one order only when stabilization is
active on an element kind with curved (bilinear) shape functions.

Unknown layout: concentration dofs are node ids; flux dofs are node-major
interleaved, global dof = node * dim + component.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError
from .physics import sign, weight_arrays

__all__ = [
    "StabilizationParams",
    "GlobalSystem",
    "compute_stabilization",
    "assemble_system",
    "assemble_primitive",
    "assemble_nssd",
    "assemble_lsb_constraints",
    "apply_dirichlet",
    "functional_value",
    "dump_system",
]


# ---------------------------------------------------------------------------
# Stabilization parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StabilizationParams:
    """User constants and the derived non-positive per-element parameters.

    delta_e multiplies the streamline flux correction, tau_e the
    least-squares balance term; both scale with the square of the local
    element diameter and are <= 0 by construction.
    """

    delta0: float = 0.0
    delta1: float = 0.0
    delta2: float = 0.0
    tau0: float = 0.0
    tau1: float = 0.0
    tau2: float = 0.0
    delta_e: np.ndarray = field(default_factory=lambda: np.zeros(0))
    tau_e: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def active(self):
        return bool(np.any(self.delta_e != 0.0) or np.any(self.tau_e != 0.0))


def compute_stabilization(mesh, problem, constants, t=0.0, alpha_shift=0.0):
    """Derive per-element (delta_e, tau_e) from the mesh and coefficients.

    delta_e = -delta0 * lam_min * h_e^2
              / (lam_max^2 + delta1 * M_v * h^2 + delta2 * M_d * h^2)
    tau_e   = -tau0 * lam_min^2 * h_e^2
              / (lam_max^2 + tau1 * M_v * h^2 + tau2 * M_d * h^2)

    with lam_min/lam_max the global diffusivity eigenvalue extrema, h the
    global mesh parameter, M_v = max (alpha + div v)^2 and
    M_d = max |div D|^2, all maxima sampled over every element quadrature
    point (the sampling semantics of the closure maxima).
    """
    if isinstance(constants, StabilizationParams):
        consts = constants
    else:
        consts = StabilizationParams(**dict(constants))
    for name in ("delta0", "delta1", "delta2", "tau0", "tau1", "tau2"):
        if getattr(consts, name) < 0.0:
            raise ConfigurationError(f"stabilization constant {name} must be >= 0")

    el = mesh.element
    pts, _ = el.quadrature()
    n = el.shape(pts)
    samples = np.einsum("pi,eid->epd", n, mesh.element_coords()).reshape(-1, mesh.dim)

    d = np.asarray(problem.diffusivity(samples))
    eig = np.linalg.eigvalsh(d)
    lam_min = float(eig.min())
    lam_max = float(eig.max())
    a = _sample(problem.alpha, samples, t, 0) + alpha_shift
    dv = np.asarray(problem.velocity.divergence(samples, t))
    m_v = float(np.max((a + dv) ** 2))
    dd = np.asarray(problem.diffusivity.divergence(samples))
    m_d = float(np.max(np.einsum("na,na->n", dd, dd)))

    h2 = mesh.h**2
    he2 = mesh.h_e**2
    denom_d = lam_max**2 + consts.delta1 * m_v * h2 + consts.delta2 * m_d * h2
    denom_t = lam_max**2 + consts.tau1 * m_v * h2 + consts.tau2 * m_d * h2
    delta_e = -consts.delta0 * lam_min * he2 / denom_d
    tau_e = -consts.tau0 * lam_min**2 * he2 / denom_t
    return replace(consts, delta_e=delta_e, tau_e=tau_e)


# ---------------------------------------------------------------------------
# Global system container
# ---------------------------------------------------------------------------


@dataclass
class GlobalSystem:
    """QP-ready assembled system.

    Quadratic part: [[kcc, kcq], [kcq^T, kqq]] (the flux/concentration
    coupling is stored once and mirrored). Linear part: (rc, rq). The
    objective is 0.5 x^T K x - r^T x + c0, with c0 the data constant so the
    minimum value of the least-squares functional is directly readable.
    Equality rows: ac c + aq q = bf, one row per element (species balance).
    Bounds apply to concentration dofs only. After Dirichlet elimination,
    ``free_nodes``/``fixed_nodes``/``fixed_values`` record the mapping back
    to full nodal vectors.
    """

    kcc: sp.csr_matrix
    kcq: sp.csr_matrix
    kqq: sp.csr_matrix
    rc: np.ndarray
    rq: np.ndarray
    ac: sp.csr_matrix
    aq: sp.csr_matrix
    bf: np.ndarray
    c0: float = 0.0
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    free_nodes: Optional[np.ndarray] = None
    fixed_nodes: Optional[np.ndarray] = None
    fixed_values: Optional[np.ndarray] = None
    nnodes: int = 0

    @property
    def ncdofs(self):
        return self.kcc.shape[0]

    @property
    def nqdofs(self):
        return self.kqq.shape[0]

    def full_matrix(self):
        return sp.bmat(
            [[self.kcc, self.kcq], [self.kcq.T, self.kqq]], format="csr"
        )

    def full_rhs(self):
        return np.concatenate([self.rc, self.rq])

    def constraint_matrix(self):
        return sp.hstack([self.ac, self.aq], format="csr")

    def expand_concentration(self, c_reduced):
        """Scatter a reduced concentration vector back to all nodes."""
        if self.free_nodes is None:
            return np.asarray(c_reduced)
        full = np.zeros(self.nnodes)
        full[self.free_nodes] = c_reduced
        full[self.fixed_nodes] = self.fixed_values
        return full


def functional_value(system, c, q):
    """Evaluate 0.5 x^T K x - r^T x + c0 at (c, q)."""
    c = np.asarray(c, dtype=float)
    q = np.asarray(q, dtype=float)
    val = 0.5 * c @ (system.kcc @ c) + c @ (system.kcq @ q)
    val += 0.5 * q @ (system.kqq @ q)
    val -= system.rc @ c + system.rq @ q
    return float(val + system.c0)


# ---------------------------------------------------------------------------
# Coefficient sampling helpers
# ---------------------------------------------------------------------------


def _sample(callable_or_none, pts, t, dim, default=0.0):
    if callable_or_none is None:
        if dim == 0:
            return np.full(pts.shape[0], default)
        return np.full((pts.shape[0], dim), default)
    try:
        out = callable_or_none(pts, t)
    except TypeError:
        out = callable_or_none(pts)
    return np.asarray(out, dtype=float)


def _edge_rule(dim, elevated):
    """Quadrature on one element edge: points in [-1, 1] and weights."""
    if dim == 1:
        return np.zeros((1, 1)), np.ones(1)
    from .elements import gauss_legendre

    pts, wts = gauss_legendre(3 if elevated else 2)
    return pts[:, None], wts


def _dirichlet_edge_mask(mesh, fixed_nodes):
    """Boundary edges whose nodes are all Dirichlet-fixed."""
    fixed = np.zeros(mesh.nnodes, dtype=bool)
    fixed[fixed_nodes] = True
    edge_nodes = mesh.boundary_edge_nodes()
    return fixed[edge_nodes].all(axis=1)


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------


class _VolumeRows:
    """Residual operator rows at every element quadrature point.

    ``fc``/``fq`` are the flux-residual rows (concentration / flux dofs),
    ``bc``/``bq``/``bload`` the balance-residual rows and data term, and
    ``gls`` the least-squares balance row weighted by ``tau_e``. The flux
    rows already include the streamline correction scaled by ``delta_e``.
    """

    def __init__(self, mesh, problem, stab, weights, t, alpha_shift, nodal_source):
        el = mesh.element
        nd = mesh.dim
        nen = mesh.nen
        ne = mesh.nele
        conn = mesh.connect
        scheme = weights if weights is not None else problem.weight

        if stab is None:
            delta_e = np.zeros(ne)
            tau_e = np.zeros(ne)
            active = False
        else:
            delta_e = np.asarray(stab.delta_e, dtype=float)
            tau_e = np.asarray(stab.tau_e, dtype=float)
            if delta_e.shape != (ne,) or tau_e.shape != (ne,):
                raise ConfigurationError(
                    "stabilization arrays do not match the element count"
                )
            active = stab.active

        self.elevated = bool(active and el.has_curvature)
        pts, wts = el.quadrature(elevated=self.elevated)
        npts = pts.shape[0]
        n_sh = el.shape(pts)  # (P, nen)
        dn = el.dshape(pts)  # (P, nen, nd)
        ddn = el.ddshape(pts)  # (P, nen, nd, nd)

        xe = mesh.element_coords()  # (E, nen, nd)
        jac = np.einsum("eia,pij->epaj", xe, dn)
        det = np.linalg.det(jac)
        if np.any(det <= 0.0):
            raise ConfigurationError("non-positive Jacobian determinant")
        jinv = np.linalg.inv(jac)
        grads = np.einsum("pij,epja->epia", dn, jinv)  # (E, P, nen, nd)

        if el.has_curvature:
            core = np.einsum("pqlk,epla,epkb->epqab", ddn, jinv, jinv)
            corr = np.eye(nen)[None, None] - np.einsum("eqa,epra->epqr", xe, grads)
            hess = np.einsum("epqab,epqr->epabr", core, corr)
        else:
            hess = np.zeros((ne, npts, nd, nd, nen))

        xg = np.einsum("pi,eia->epa", n_sh, xe)
        flat = xg.reshape(-1, nd)

        v = _sample(problem.velocity, flat, t, nd).reshape(ne, npts, nd)
        divv = np.asarray(problem.velocity.divergence(flat, t)).reshape(ne, npts)
        d_t = np.asarray(problem.diffusivity(flat)).reshape(ne, npts, nd, nd)
        divd = np.asarray(problem.diffusivity.divergence(flat)).reshape(
            ne, npts, nd
        )
        alpha = _sample(problem.alpha, flat, t, 0).reshape(ne, npts) + alpha_shift
        galpha = _sample(problem.alpha_grad, flat, t, nd).reshape(ne, npts, nd)
        f = _sample(problem.source, flat, t, 0).reshape(ne, npts)
        gf = _sample(problem.source_grad, flat, t, nd).reshape(ne, npts, nd)
        if nodal_source is not None:
            shift = np.asarray(nodal_source, dtype=float)[conn]  # (E, nen)
            f = f + np.einsum("ei,pi->ep", shift, n_sh)
            gf = gf + np.einsum("ei,epia->epa", shift, grads)

        a2, beta2 = weight_arrays(
            scheme, d_t.reshape(-1, nd, nd), alpha.reshape(-1)
        )
        self.a2 = a2.reshape(ne, npts, nd, nd)
        self.beta2 = beta2.reshape(ne, npts)

        self.wdet = wts[None, :] * det  # (E, P)
        self.delta_e = delta_e
        self.tau_e = tau_e
        de = delta_e[:, None]

        # Streamline operator row: L c = div[c v - D grad c]
        gv = np.einsum("epia,epa->epi", grads, v)
        lrow = (
            divv[:, :, None] * n_sh[None]
            + gv
            - np.einsum("epia,epa->epi", grads, divd)
            - np.einsum("epab,epabi->epi", d_t, hess)
        )

        # Flux residual rows
        self.fc = (
            -np.einsum("epa,pi->epai", v, n_sh)
            + np.einsum("epab,epib->epai", d_t, grads)
            - de[:, :, None, None] * np.einsum("epa,epi->epai", v, lrow)
        )
        self.fq = np.einsum("pi,ab->paib", n_sh, np.eye(nd)).reshape(
            npts, nd, nen * nd
        )

        # Balance residual rows and data load
        self.bc = alpha[:, :, None] * n_sh[None] + de[:, :, None] * (
            alpha[:, :, None] * gv
            + np.einsum("epa,epa->ep", v, galpha)[:, :, None] * n_sh[None]
            + (divv * alpha)[:, :, None] * n_sh[None]
        )
        self.bq = grads.reshape(ne, npts, nen * nd)
        self.bload = f + de * (np.einsum("epa,epa->ep", v, gf) + divv * f)

        # Least-squares balance row (non-positive weight tau_e)
        self.gls = lrow + alpha[:, :, None] * n_sh[None]
        self.gls_load = f


class _BoundaryRows:
    """Flux-boundary residual rows on one non-Dirichlet boundary edge."""

    __slots__ = ("nodes", "qdofs", "w", "rows_c", "rows_q", "load")

    def __init__(self, nodes, qdofs, w, rows_c, rows_q, load):
        self.nodes = nodes
        self.qdofs = qdofs
        self.w = w
        self.rows_c = rows_c
        self.rows_q = rows_q
        self.load = load


def _boundary_rows(
    mesh, problem, delta_e, elevated, t=0.0, alpha_shift=0.0, nodal_source=None
):
    """Yield residual rows for every boundary edge on the flux boundary."""
    nd = mesh.dim
    fixed_nodes, _ = problem.dirichlet_nodes(mesh.coords)
    is_dir_edge = _dirichlet_edge_mask(mesh, fixed_nodes)
    epts, ewts = _edge_rule(nd, elevated)
    edge_nodes_all = mesh.boundary_edge_nodes()

    for k in range(len(mesh.boundary_elems)):
        if is_dir_edge[k]:
            continue
        eidx = int(mesh.boundary_elems[k])
        loc = int(mesh.boundary_local[k])
        nodes = edge_nodes_all[k]
        pts_e = mesh.coords[nodes]
        if nd == 1:
            n_edge = np.ones((1, 1))
            normal = np.array([[-1.0 if loc == 0 else 1.0]])
            xq = pts_e[0][None, :]
            w = np.ones(1)
        else:
            xi = epts[:, 0]
            n_edge = np.stack([(1.0 - xi) / 2.0, (1.0 + xi) / 2.0], axis=1)
            tang = pts_e[1] - pts_e[0]
            length = float(np.hypot(*tang))
            normal = np.broadcast_to(
                np.array([tang[1], -tang[0]]) / length, (len(xi), 2)
            ).copy()
            xq = n_edge @ pts_e
            w = ewts * (length / 2.0)

        vq = _sample(problem.velocity, xq, t, nd)
        vn = np.einsum("ga,ga->g", vq, normal)
        sgn = sign(vn)
        alpha_b = _sample(problem.alpha, xq, t, 0) + alpha_shift
        f_b = _sample(problem.source, xq, t, 0)
        if nodal_source is not None:
            f_b = f_b + n_edge @ np.asarray(nodal_source, dtype=float)[nodes]
        qp = problem.neumann(xq, normal, t)
        dlt = delta_e[eidx]

        rc_fac = -(1.0 + sgn) / 2.0 * vn + dlt * alpha_b * vn  # (G,)
        rows_c = rc_fac[:, None] * n_edge  # (G, edge nodes)
        rows_q = np.einsum("gi,ga->gia", n_edge, normal).reshape(len(vn), -1)
        load = qp + dlt * f_b * vn
        qd = (nodes[:, None] * nd + np.arange(nd)[None, :]).reshape(-1)
        yield _BoundaryRows(nodes, qd, w, rows_c, rows_q, load)


def assemble_system(
    mesh,
    problem,
    stab=None,
    weights=None,
    t=0.0,
    alpha_shift=0.0,
    nodal_source=None,
):
    """Assemble the least-squares system for either formulation.

    ``stab=None`` (or all-zero parameters) yields the plain formulation.
    ``alpha_shift`` adds a constant to the reaction coefficient and
    ``nodal_source`` adds an interpolated nodal field to the volumetric
    source -- together these express one implicit time step without
    wrapping the problem's coefficient callables.
    """
    nd = mesh.dim
    nen = mesh.nen
    nn = mesh.nnodes
    ne = mesh.nele
    conn = mesh.connect

    vol = _VolumeRows(mesh, problem, stab, weights, t, alpha_shift, nodal_source)
    wdet = vol.wdet
    fc, fq, a2 = vol.fc, vol.fq, vol.a2
    bc, bq, bload = vol.bc, vol.bq, vol.bload
    gls, beta2, te = vol.gls, vol.beta2, vol.tau_e[:, None]
    f = vol.gls_load

    kcc_e = (
        np.einsum("ep,epai,epab,epbj->eij", wdet, fc, a2, fc)
        + np.einsum("ep,epi,epj->eij", wdet * beta2, bc, bc)
        + np.einsum("ep,epi,epj->eij", wdet * te, gls, gls)
    )
    kcq_e = np.einsum("ep,epai,epab,pbJ->eiJ", wdet, fc, a2, fq) + np.einsum(
        "ep,epi,epJ->eiJ", wdet * beta2, bc, bq
    )
    kqq_e = np.einsum("ep,paI,epab,pbJ->eIJ", wdet, fq, a2, fq) + np.einsum(
        "ep,epI,epJ->eIJ", wdet * beta2, bq, bq
    )
    rc_e = np.einsum("ep,ep,epi->ei", wdet * beta2, bload, bc) + np.einsum(
        "ep,ep,epi->ei", wdet * te, f, gls
    )
    rq_e = np.einsum("ep,ep,epI->eI", wdet * beta2, bload, bq)
    c0 = float(np.sum(wdet * (0.5 * beta2 * bload**2 + 0.5 * te * f**2)))

    qdofs = (conn[:, :, None] * nd + np.arange(nd)[None, None, :]).reshape(
        ne, nen * nd
    )

    def scatter(block, rows_idx, cols_idx, shape):
        nr = rows_idx.shape[1]
        nc = cols_idx.shape[1]
        rows = np.repeat(rows_idx, nc, axis=1).ravel()
        cols = np.tile(cols_idx, (1, nr)).ravel()
        return sp.coo_matrix((block.ravel(), (rows, cols)), shape=shape).tocsr()

    kcc = scatter(kcc_e, conn, conn, (nn, nn))
    kcq = scatter(kcq_e, conn, qdofs, (nn, nn * nd))
    kqq = scatter(kqq_e, qdofs, qdofs, (nn * nd, nn * nd))
    rc = np.zeros(nn)
    np.add.at(rc, conn.ravel(), rc_e.ravel())
    rq = np.zeros(nn * nd)
    np.add.at(rq, qdofs.ravel(), rq_e.ravel())

    # ---- boundary residual on the flux-prescribed part ------------------
    trip = {
        "cc": ([], [], []),
        "cq": ([], [], []),
        "qq": ([], [], []),
    }

    def add_block(which, rows_idx, cols_idx, block):
        r, c, vals = trip[which]
        r.extend(np.repeat(rows_idx, len(cols_idx)))
        c.extend(np.tile(cols_idx, len(rows_idx)))
        vals.extend(block.ravel())

    for edge in _boundary_rows(
        mesh,
        problem,
        vol.delta_e,
        vol.elevated,
        t=t,
        alpha_shift=alpha_shift,
        nodal_source=nodal_source,
    ):
        nodes, qd, w = edge.nodes, edge.qdofs, edge.w
        rows_c, rows_q, load = edge.rows_c, edge.rows_q, edge.load
        add_block("cc", nodes, nodes, np.einsum("g,gi,gj->ij", w, rows_c, rows_c))
        add_block("cq", nodes, qd, np.einsum("g,gi,gJ->iJ", w, rows_c, rows_q))
        add_block("qq", qd, qd, np.einsum("g,gI,gJ->IJ", w, rows_q, rows_q))
        rc[nodes] += np.einsum("g,g,gi->i", w, load, rows_c)
        rq[qd] += np.einsum("g,g,gI->I", w, load, rows_q)
        c0 += float(np.sum(0.5 * w * load**2))

    for which, shape, target in (
        ("cc", (nn, nn), "kcc"),
        ("cq", (nn, nn * nd), "kcq"),
        ("qq", (nn * nd, nn * nd), "kqq"),
    ):
        r, c, vals = trip[which]
        if vals:
            extra = sp.coo_matrix((vals, (r, c)), shape=shape).tocsr()
            if target == "kcc":
                kcc = (kcc + extra).tocsr()
            elif target == "kcq":
                kcq = (kcq + extra).tocsr()
            else:
                kqq = (kqq + extra).tocsr()

    ac, aq_mat, bf = assemble_lsb_constraints(
        mesh, problem, t=t, alpha_shift=alpha_shift, nodal_source=nodal_source
    )

    return GlobalSystem(
        kcc=kcc,
        kcq=kcq,
        kqq=kqq,
        rc=rc,
        rq=rq,
        ac=ac,
        aq=aq_mat,
        bf=bf,
        c0=c0,
        nnodes=nn,
    )


def assemble_primitive(mesh, problem, weights=None, **kwargs):
    """Plain weighted least-squares system (no stabilization)."""
    return assemble_system(mesh, problem, stab=None, weights=weights, **kwargs)


def assemble_nssd(mesh, problem, stab, weights=None, **kwargs):
    """Negatively stabilized streamline-diffusion least-squares system."""
    return assemble_system(mesh, problem, stab=stab, weights=weights, **kwargs)


def least_squares_functional(
    mesh,
    problem,
    c_nodal,
    q_nodal,
    stab=None,
    weights=None,
    t=0.0,
    alpha_shift=0.0,
    nodal_source=None,
):
    """Evaluate the least-squares functional residual by residual.

    ``functional_value`` forms ``0.5 x'Kx - r'x + c0`` from the assembled
    system, so its floating-point error scales with the energy of ``x``
    even when the residuals vanish.  This routine instead squares the
    pointwise residuals, so a field satisfying the strong equations
    evaluates at the round-off level of the residuals themselves.
    """
    nd = mesh.dim
    nn = mesh.nnodes
    conn = mesh.connect
    c = np.asarray(c_nodal, dtype=float)
    q = np.asarray(q_nodal, dtype=float).reshape(nn, nd)

    vol = _VolumeRows(mesh, problem, stab, weights, t, alpha_shift, nodal_source)
    ce = c[conn]  # (E, nen)
    qe = q[conn].reshape(mesh.nele, -1)  # (E, nen*nd), node-major

    flux = np.einsum("epai,ei->epa", vol.fc, ce) + np.einsum(
        "paJ,eJ->epa", vol.fq, qe
    )
    bal = (
        np.einsum("epi,ei->ep", vol.bc, ce)
        + np.einsum("epJ,eJ->ep", vol.bq, qe)
        - vol.bload
    )
    gls_res = np.einsum("epi,ei->ep", vol.gls, ce) - vol.gls_load
    total = 0.5 * float(
        np.sum(vol.wdet * np.einsum("epa,epab,epb->ep", flux, vol.a2, flux))
        + np.sum(vol.wdet * vol.beta2 * bal**2)
        + np.sum(vol.wdet * vol.tau_e[:, None] * gls_res**2)
    )

    for edge in _boundary_rows(
        mesh,
        problem,
        vol.delta_e,
        vol.elevated,
        t=t,
        alpha_shift=alpha_shift,
        nodal_source=nodal_source,
    ):
        res = (
            edge.rows_c @ c[edge.nodes]
            + edge.rows_q @ q.reshape(-1)[edge.qdofs]
            - edge.load
        )
        total += 0.5 * float(np.sum(edge.w * res**2))
    return total


# ---------------------------------------------------------------------------
# Local species balance constraints
# ---------------------------------------------------------------------------


def assemble_lsb_constraints(mesh, problem, t=0.0, alpha_shift=0.0, nodal_source=None):
    """One equality row per element: volumetric reaction plus boundary flux.

    Row e states   int_e alpha c + oint_{boundary(e)} q.n = int_e f,
    where the boundary integral runs over every edge of the element with
    outward normals.  Interior edges and Dirichlet boundary edges carry the
    solved flux; on flux-boundary edges the prescribed datum stands in for
    q.n and moves to the right-hand side.  Using the datum there (as a
    finite-volume scheme would) makes the enforced balance consistent with
    the boundary data: summing the rows of a closed tank (zero prescribed
    flux) telescopes to exact conservation of the total species.
    """
    el = mesh.element
    nd = mesh.dim
    nen = mesh.nen
    nn = mesh.nnodes
    ne = mesh.nele
    conn = mesh.connect
    xe = mesh.element_coords()

    pts, wts = el.quadrature()
    n_sh = el.shape(pts)
    dn = el.dshape(pts)
    jac = np.einsum("eia,pij->epaj", xe, dn)
    det = np.linalg.det(jac)
    wdet = wts[None, :] * det
    xg = np.einsum("pi,eia->epa", n_sh, xe)
    flat = xg.reshape(-1, nd)
    alpha = _sample(problem.alpha, flat, t, 0).reshape(ne, -1) + alpha_shift
    f = _sample(problem.source, flat, t, 0).reshape(ne, -1)
    if nodal_source is not None:
        shift = np.asarray(nodal_source, dtype=float)[conn]
        f = f + np.einsum("ei,pi->ep", shift, n_sh)

    ac_e = np.einsum("ep,ep,pi->ei", wdet, alpha, n_sh)  # (E, nen)
    bf = np.einsum("ep,ep->e", wdet, f)

    # Flux-boundary edges: (element, local edge) pairs whose nodes are not
    # all Dirichlet-fixed get the prescribed datum instead of the solved q.
    fixed_nodes, _ = problem.dirichlet_nodes(mesh.coords)
    is_dir_edge = _dirichlet_edge_mask(mesh, fixed_nodes)
    flux_edges = {}
    for k in range(len(mesh.boundary_elems)):
        if not is_dir_edge[k]:
            eidx = int(mesh.boundary_elems[k])
            flux_edges.setdefault(eidx, set()).add(int(mesh.boundary_local[k]))

    # Boundary flux term over all element edges, outward normals
    aq_e = np.zeros((ne, nen * nd))
    if nd == 1:
        # edges are the end vertices; q.n = -q(x_left) + q(x_right)
        aq_e[:, 0] = -1.0
        aq_e[:, 1] = 1.0
        for eidx, locs in flux_edges.items():
            for loc in locs:
                node = conn[eidx][el.edges[loc][0]]
                normal = np.array([[-1.0 if loc == 0 else 1.0]])
                qp = problem.neumann(mesh.coords[node][None, :], normal, t)
                aq_e[eidx, loc] = 0.0
                bf[eidx] -= float(qp[0])
    else:
        epts, ewts = _edge_rule(nd, elevated=False)
        xi = epts[:, 0]
        n_edge = np.stack([(1.0 - xi) / 2.0, (1.0 + xi) / 2.0], axis=1)  # (G, 2)
        keep = np.ones((ne, len(el.edges)))
        for eidx, locs in flux_edges.items():
            for loc in locs:
                keep[eidx, loc] = 0.0
        for loc, edge in enumerate(el.edges):
            i0, i1 = edge
            tang = xe[:, i1, :] - xe[:, i0, :]  # (E, 2)
            # outward normal times edge length / 2 (the edge Jacobian)
            nrm_scaled = np.stack([tang[:, 1], -tang[:, 0]], axis=1) / 2.0
            nrm_scaled = nrm_scaled * keep[:, loc][:, None]
            for g in range(len(xi)):
                for a in range(nd):
                    aq_e[:, i0 * nd + a] += ewts[g] * n_edge[g, 0] * nrm_scaled[:, a]
                    aq_e[:, i1 * nd + a] += ewts[g] * n_edge[g, 1] * nrm_scaled[:, a]
        for eidx, locs in flux_edges.items():
            for loc in locs:
                i0, i1 = el.edges[loc]
                tang = xe[eidx, i1] - xe[eidx, i0]
                length = float(np.hypot(*tang))
                normal = np.broadcast_to(
                    np.array([tang[1], -tang[0]]) / length, (len(xi), 2)
                ).copy()
                xq = n_edge @ xe[eidx, [i0, i1]]
                qp = problem.neumann(xq, normal, t)
                bf[eidx] -= float((ewts * (length / 2.0)) @ qp)

    rows = np.repeat(np.arange(ne)[:, None], nen, axis=1)
    ac = sp.coo_matrix(
        (ac_e.ravel(), (rows.ravel(), conn.ravel())), shape=(ne, nn)
    ).tocsr()
    qdofs = (conn[:, :, None] * nd + np.arange(nd)[None, None, :]).reshape(ne, -1)
    rows_q = np.repeat(np.arange(ne)[:, None], nen * nd, axis=1)
    aq = sp.coo_matrix(
        (aq_e.ravel(), (rows_q.ravel(), qdofs.ravel())), shape=(ne, nn * nd)
    ).tocsr()
    return ac, aq, bf


# ---------------------------------------------------------------------------
# Dirichlet elimination
# ---------------------------------------------------------------------------


def apply_dirichlet(system, fixed_nodes, fixed_values):
    """Eliminate fixed concentration dofs, moving their effect to the loads.

    Returns a reduced :class:`GlobalSystem` whose bookkeeping fields allow
    scattering solutions back to the full node set.
    """
    fixed_nodes = np.asarray(fixed_nodes, dtype=int)
    fixed_values = np.asarray(fixed_values, dtype=float)
    nn = system.ncdofs
    mask = np.ones(nn, dtype=bool)
    mask[fixed_nodes] = False
    free = np.nonzero(mask)[0]

    kcc = system.kcc.tocsr()
    kcq = system.kcq.tocsr()
    kcf = kcc[free][:, fixed_nodes]
    kff = kcc[fixed_nodes][:, fixed_nodes]
    rc = system.rc[free] - kcf @ fixed_values
    rq = system.rq - kcq[fixed_nodes].T @ fixed_values
    c0 = (
        system.c0
        + 0.5 * fixed_values @ (kff @ fixed_values)
        - system.rc[fixed_nodes] @ fixed_values
    )
    bf = system.bf - system.ac[:, fixed_nodes] @ fixed_values

    return GlobalSystem(
        kcc=kcc[free][:, free],
        kcq=kcq[free],
        kqq=system.kqq,
        rc=rc,
        rq=rq,
        ac=system.ac[:, free],
        aq=system.aq,
        bf=bf,
        c0=float(c0),
        lower=None if system.lower is None else system.lower[free],
        upper=None if system.upper is None else system.upper[free],
        free_nodes=free,
        fixed_nodes=fixed_nodes,
        fixed_values=fixed_values,
        nnodes=system.nnodes,
    )


def dump_system(system, directory):
    """Write the assembled blocks in MatrixMarket/plain-text form."""
    import os

    from scipy.io import mmwrite

    os.makedirs(directory, exist_ok=True)
    mmwrite(os.path.join(directory, "kcc.mtx"), sp.coo_matrix(system.kcc))
    mmwrite(os.path.join(directory, "kcq.mtx"), sp.coo_matrix(system.kcq))
    mmwrite(os.path.join(directory, "kqq.mtx"), sp.coo_matrix(system.kqq))
    mmwrite(os.path.join(directory, "ac.mtx"), sp.coo_matrix(system.ac))
    mmwrite(os.path.join(directory, "aq.mtx"), sp.coo_matrix(system.aq))
    np.savetxt(os.path.join(directory, "rc.txt"), system.rc)
    np.savetxt(os.path.join(directory, "rq.txt"), system.rq)
    np.savetxt(os.path.join(directory, "bf.txt"), system.bf)
