"""Structured meshes over intervals and axis-aligned rectangles.

Node ordering is row-major (x varies fastest); element-local node ordering is
counter-clockwise. Triangles split each grid cell along the fixed
lower-left -> upper-right diagonal (DMP behavior is mesh-dependent, so the
split is pinned). Boundary edges are discovered generically as element edges
owned by exactly one element, and are stored as (element, local edge) pairs in
deterministic order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .elements import element_diameters, get_element, jacobians
from .errors import ConfigurationError, EllipticityError

__all__ = [
    "StructuredMesh",
    "BoundaryPartition",
    "generate_structured_mesh",
    "classify_boundary",
    "boundary_edge_geometry",
    "mesh_metrics",
]


@dataclass(frozen=True)
class StructuredMesh:
    """Immutable structured mesh.

    Attributes
    ----------
    kind : str
        Element kind: "line2", "tri3" or "quad4".
    coords : (nnodes, dim) ndarray
    connect : (nele, nen) int ndarray
    boundary_elems : (nbe,) int ndarray
        Owning element of each boundary edge.
    boundary_local : (nbe,) int ndarray
        Local edge index of each boundary edge within its owning element.
    h_e : (nele,) ndarray
        Element diameters (max pairwise node distance).
    """

    kind: str
    coords: np.ndarray
    connect: np.ndarray
    boundary_elems: np.ndarray
    boundary_local: np.ndarray
    h_e: np.ndarray

    @property
    def dim(self):
        return self.coords.shape[1]

    @property
    def nnodes(self):
        return self.coords.shape[0]

    @property
    def nele(self):
        return self.connect.shape[0]

    @property
    def nen(self):
        return self.connect.shape[1]

    @property
    def h(self):
        """Global mesh parameter: max over elements of the diameter."""
        return float(self.h_e.max())

    @property
    def element(self):
        return get_element(self.kind)

    def element_coords(self):
        """(nele, nen, dim) physical coordinates per element."""
        return self.coords[self.connect]

    def boundary_edge_nodes(self):
        """(nbe, k) global node ids of each boundary edge (k=1 in 1D)."""
        el = self.element
        rows = []
        for e, loc in zip(self.boundary_elems, self.boundary_local):
            rows.append([self.connect[e][i] for i in el.edges[loc]])
        return np.asarray(rows, dtype=int)


@dataclass(frozen=True)
class BoundaryPartition:
    """Index sets into the mesh's boundary-edge list.

    dirichlet / inflow / outflow are arrays of boundary-edge indices; inflow
    means v.n < 0 at the edge midpoint, outflow means v.n >= 0. The tags are
    advisory: assembly re-evaluates Sign[v.n] at each boundary quadrature
    point.
    """

    dirichlet: np.ndarray
    inflow: np.ndarray
    outflow: np.ndarray

    @property
    def neumann(self):
        return np.concatenate([self.inflow, self.outflow])


def _check_seed(name, value):
    if int(value) != value or value < 2:
        raise ConfigurationError(f"{name} must be an integer >= 2, got {value!r}")


def generate_structured_mesh(domain, xseed, yseed=None, kind="quad4"):
    """Build a structured mesh.

    Parameters
    ----------
    domain : (x0, x1) for 1D or ((x0, x1), (y0, y1)) for 2D
    xseed, yseed : node counts along each axis (>= 2)
    kind : "line2", "tri3" or "quad4"

    Returns
    -------
    StructuredMesh
    """
    if kind not in ("line2", "tri3", "quad4"):
        raise ConfigurationError(f"unknown element kind {kind!r}")
    _check_seed("xseed", xseed)

    if kind == "line2":
        x0, x1 = float(domain[0]), float(domain[1])
        if not x1 > x0:
            raise ConfigurationError("degenerate 1D domain")
        coords = np.linspace(x0, x1, xseed)[:, None]
        connect = np.stack(
            [np.arange(xseed - 1), np.arange(1, xseed)], axis=1
        ).astype(int)
        boundary_elems = np.array([0, xseed - 2], dtype=int)
        boundary_local = np.array([0, 1], dtype=int)
        h_e = element_diameters(coords[connect])
        return StructuredMesh(kind, coords, connect, boundary_elems, boundary_local, h_e)

    _check_seed("yseed", yseed)
    (x0, x1), (y0, y1) = domain
    if not (x1 > x0 and y1 > y0):
        raise ConfigurationError("degenerate 2D domain")
    nx, ny = int(xseed), int(yseed)
    xs = np.linspace(x0, x1, nx)
    ys = np.linspace(y0, y1, ny)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    coords = np.stack([gx.ravel(), gy.ravel()], axis=1)  # row-major, x fastest

    def nid(i, j):
        return j * nx + i

    quads = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            quads.append([nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)])
    quads = np.asarray(quads, dtype=int)

    if kind == "quad4":
        connect = quads
    else:
        # split along the lower-left -> upper-right diagonal, both CCW
        tris = []
        for n0, n1, n2, n3 in quads:
            tris.append([n0, n1, n2])
            tris.append([n0, n2, n3])
        connect = np.asarray(tris, dtype=int)

    boundary_elems, boundary_local = _find_boundary(connect, kind)
    h_e = element_diameters(coords[connect])
    mesh = StructuredMesh(kind, coords, connect, boundary_elems, boundary_local, h_e)
    _validate(mesh)
    return mesh


def _find_boundary(connect, kind):
    """Edges owned by exactly one element, as (element, local edge) pairs."""
    el = get_element(kind)
    seen = {}
    for e in range(connect.shape[0]):
        for loc, edge in enumerate(el.edges):
            key = tuple(sorted(connect[e][i] for i in edge))
            seen.setdefault(key, []).append((e, loc))
    pairs = sorted(owners[0] for owners in seen.values() if len(owners) == 1)
    elems = np.array([p[0] for p in pairs], dtype=int)
    locs = np.array([p[1] for p in pairs], dtype=int)
    return elems, locs


def _validate(mesh):
    el = mesh.element
    for e in range(mesh.nele):
        nodes = mesh.connect[e]
        if len(set(nodes.tolist())) != mesh.nen:
            raise ConfigurationError(f"element {e} has repeated nodes")
    pts, _ = el.quadrature()
    dn = el.dshape(pts)
    for e in range(mesh.nele):
        jacobians(mesh.coords[mesh.connect[e]], dn)  # raises if det <= 0


def boundary_edge_geometry(mesh):
    """Midpoints, outward unit normals, and lengths of the boundary edges.

    Returns (midpoints (nbe, dim), normals (nbe, dim), measures (nbe,)).
    In 1D the "edges" are the two end vertices: measure 1, normal -1/+1.
    """
    el = mesh.element
    nbe = len(mesh.boundary_elems)
    mids = np.zeros((nbe, mesh.dim))
    normals = np.zeros((nbe, mesh.dim))
    meas = np.zeros(nbe)
    for k, (e, loc) in enumerate(zip(mesh.boundary_elems, mesh.boundary_local)):
        nodes = [mesh.connect[e][i] for i in el.edges[loc]]
        pts = mesh.coords[nodes]
        if mesh.dim == 1:
            mids[k] = pts[0]
            normals[k] = -1.0 if loc == 0 else 1.0
            meas[k] = 1.0
        else:
            mids[k] = pts.mean(axis=0)
            tang = pts[1] - pts[0]
            length = np.linalg.norm(tang)
            normals[k] = np.array([tang[1], -tang[0]]) / length
            meas[k] = length
    return mids, normals, meas


def classify_boundary(mesh, velocity, dirichlet_predicate=None, t=0.0,
                      require_dirichlet=False):
    """Partition the boundary edges into Dirichlet and inflow/outflow Neumann.

    ``dirichlet_predicate`` is a callable mapping (n, dim) midpoint
    coordinates to a boolean mask (None means no Dirichlet edges). Neumann
    edges are tagged inflow when v.n < 0 at the midpoint and outflow when
    v.n >= 0.
    """
    mids, normals, _ = boundary_edge_geometry(mesh)
    nbe = len(mesh.boundary_elems)
    if dirichlet_predicate is None:
        dir_mask = np.zeros(nbe, dtype=bool)
    else:
        dir_mask = np.asarray(dirichlet_predicate(mids), dtype=bool)
    if require_dirichlet and not dir_mask.any():
        raise ConfigurationError(
            "steady problem requires a non-empty Dirichlet boundary"
        )
    idx = np.arange(nbe)
    vdotn = np.einsum("ka,ka->k", np.asarray(velocity(mids, t)), normals)
    neu = ~dir_mask
    inflow = idx[neu & (vdotn < 0.0)]
    outflow = idx[neu & (vdotn >= 0.0)]
    return BoundaryPartition(idx[dir_mask], inflow, outflow)


def mesh_metrics(mesh, velocity, diffusivity, alpha, t=0.0):
    """Global mesh metrics {h, Pe_h, Da_h} from quadrature samples.

    Pe_h = ||v||_inf h / (2 lambda_min), Da_h = alpha_inf h^2 / lambda_min,
    with ||v||_inf the max absolute velocity component, lambda_min the
    smallest diffusivity eigenvalue, and alpha_inf the largest reaction
    coefficient over all element quadrature points.
    """
    el = mesh.element
    pts, _ = el.quadrature()
    n = el.shape(pts)
    samples = np.einsum("pi,eid->epd", n, mesh.element_coords()).reshape(-1, mesh.dim)
    v = np.asarray(velocity(samples, t))
    vinf = float(np.abs(v).max()) if v.size else 0.0
    d = np.asarray(diffusivity(samples))
    eig = np.linalg.eigvalsh(d) if d.ndim == 3 else d[:, None]
    lam_min = float(eig.min())
    lam_max = float(eig.max())
    if lam_min <= 0.0:
        raise EllipticityError(f"diffusivity eigenvalue {lam_min} <= 0")
    a = np.asarray(alpha(samples))
    a_inf = float(a.max()) if a.size else 0.0
    h = mesh.h
    return {
        "h": h,
        "Pe_h": vinf * h / (2.0 * lam_min),
        "Da_h": a_inf * h**2 / lam_min,
        "lambda_min": lam_min,
        "lambda_max": lam_max,
    }
