"""Reference elements, quadrature, and isoparametric derivative operators.

Provides the three low-order nodal elements (two-node line, three-node
triangle, four-node quadrilateral) with shape functions ``N``, reference
gradients ``DN`` (node x dim) and reference Hessians ``DDN``
(node x dim x dim), plus the geometric machinery to evaluate physical
gradients, Laplacians and Hessians of the isoparametric interpolant.

Derivative operators
--------------------
With nodal coordinates ``x_hat`` (node x dim), the Jacobian at a reference
point is ``J = x_hat^T DN`` (``J_aj = d x_a / d xi_j``), physical shape
gradients are ``G = DN J^{-1}``, and second derivatives of the interpolated
field carry the curvature correction

    grad grad c = sum_p ctilde_p  DDN_p : (J^{-1} (.) J^{-1}),
    ctilde = (I - x_hat G^T) c_hat,

whose trace reproduces the Laplacian composition
``(I - G x_hat^T) mat1(DDN) vec(J^{-1} J^{-T})``. The correction factor is
always applied (it vanishes analytically on parallelograms). ``DDN`` is
identically zero for the line and triangle, so their Laplacian/Hessian rows
are exact zeros.
"""

from __future__ import annotations

import numpy as np

from .tensors import mat1, vec

__all__ = [
    "Line2",
    "Tri3",
    "Quad4",
    "ELEMENTS",
    "get_element",
    "gauss_legendre",
    "jacobians",
    "shape_gradients",
    "hessian_rows",
    "laplacian_row",
    "grad_of_scalar_field",
    "div_of_tensor_field",
    "element_diameters",
]


def gauss_legendre(n):
    """n-point Gauss-Legendre rule on [-1, 1] as (points, weights)."""
    pts, wts = np.polynomial.legendre.leggauss(n)
    return pts, wts


class _ElementBase:
    """Shared plumbing for the nodal reference elements."""

    name = ""
    dim = 0
    nen = 0
    has_curvature = False
    #: local node pairs of each edge, ordered so that traversing them
    #: counter-clockwise around the element points the rotated tangent
    #: (t_y, -t_x) outward.
    edges = ()

    def shape(self, xi):
        raise NotImplementedError

    def dshape(self, xi):
        raise NotImplementedError

    def ddshape(self, xi):
        """Reference Hessians, zero by default (affine shape functions)."""
        xi = np.atleast_2d(xi)
        return np.zeros((xi.shape[0], self.nen, self.dim, self.dim))

    def quadrature(self, elevated=False):
        raise NotImplementedError

    def __repr__(self):  # pragma: no cover - debugging nicety
        return f"<{type(self).__name__}>"


class Line2(_ElementBase):
    """Two-node line on [-1, 1]."""

    name = "line2"
    dim = 1
    nen = 2
    has_curvature = False
    edges = ((0,), (1,))

    def shape(self, xi):
        xi = np.atleast_2d(xi)[:, 0]
        return np.stack([(1.0 - xi) / 2.0, (1.0 + xi) / 2.0], axis=1)

    def dshape(self, xi):
        xi = np.atleast_2d(xi)
        dn = np.array([[-0.5], [0.5]])
        return np.broadcast_to(dn, (xi.shape[0], 2, 1)).copy()

    def quadrature(self, elevated=False):
        pts, wts = gauss_legendre(3 if elevated else 2)
        return pts[:, None], wts


class Tri3(_ElementBase):
    """Three-node triangle on the unit simplex."""

    name = "tri3"
    dim = 2
    nen = 3
    has_curvature = False
    edges = ((0, 1), (1, 2), (2, 0))

    def shape(self, xi):
        xi = np.atleast_2d(xi)
        r, s = xi[:, 0], xi[:, 1]
        return np.stack([1.0 - r - s, r, s], axis=1)

    def dshape(self, xi):
        xi = np.atleast_2d(xi)
        dn = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        return np.broadcast_to(dn, (xi.shape[0], 3, 2)).copy()

    def quadrature(self, elevated=False):
        # Three-point symmetric rule, exact through degree 2.
        pts = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
        wts = np.full(3, 1 / 6)
        return pts, wts


class Quad4(_ElementBase):
    """Four-node bilinear quadrilateral on [-1, 1]^2, nodes counter-clockwise."""

    name = "quad4"
    dim = 2
    nen = 4
    has_curvature = True
    edges = ((0, 1), (1, 2), (2, 3), (3, 0))

    _xi_n = np.array([-1.0, 1.0, 1.0, -1.0])
    _eta_n = np.array([-1.0, -1.0, 1.0, 1.0])

    def shape(self, xi):
        xi = np.atleast_2d(xi)
        r = xi[:, 0:1]
        s = xi[:, 1:2]
        return 0.25 * (1.0 + r * self._xi_n) * (1.0 + s * self._eta_n)

    def dshape(self, xi):
        xi = np.atleast_2d(xi)
        r = xi[:, 0:1]
        s = xi[:, 1:2]
        dr = 0.25 * self._xi_n * (1.0 + s * self._eta_n)
        ds = 0.25 * self._eta_n * (1.0 + r * self._xi_n)
        return np.stack([dr, ds], axis=2)

    def ddshape(self, xi):
        xi = np.atleast_2d(xi)
        npts = xi.shape[0]
        ddn = np.zeros((npts, 4, 2, 2))
        cross = 0.25 * self._xi_n * self._eta_n
        ddn[:, :, 0, 1] = cross
        ddn[:, :, 1, 0] = cross
        return ddn

    def quadrature(self, elevated=False):
        pts1, wts1 = gauss_legendre(3 if elevated else 2)
        r, s = np.meshgrid(pts1, pts1, indexing="ij")
        pts = np.stack([r.ravel(), s.ravel()], axis=1)
        wts = np.outer(wts1, wts1).ravel()
        return pts, wts


ELEMENTS = {"line2": Line2(), "tri3": Tri3(), "quad4": Quad4()}


def get_element(name):
    """Look up a reference element by kind name."""
    try:
        return ELEMENTS[name]
    except KeyError:
        raise KeyError(
            f"unknown element kind {name!r}; expected one of {sorted(ELEMENTS)}"
        ) from None


def jacobians(coords, dn):
    """Jacobians of the isoparametric map at a batch of reference points.

    Parameters
    ----------
    coords : (nen, dim) ndarray
        Physical node coordinates of one element.
    dn : (npts, nen, dim) ndarray
        Reference shape gradients at the evaluation points.

    Returns
    -------
    jac : (npts, dim, dim), ``jac[p, a, j] = d x_a / d xi_j``
    det : (npts,) determinants (must be positive)
    inv : (npts, dim, dim) inverses
    """
    jac = np.einsum("ia,pij->paj", coords, dn)
    det = np.linalg.det(jac)
    if np.any(det <= 0.0):
        raise ValueError("non-positive Jacobian determinant in element")
    inv = np.linalg.inv(jac)
    return jac, det, inv


def shape_gradients(dn, jinv):
    """Physical shape-function gradients ``G = DN J^{-1}`` per point."""
    return np.einsum("pij,pja->pia", dn, jinv)


def hessian_rows(coords, dn, ddn):
    """Second-derivative operator rows of the isoparametric interpolant.

    Returns ``H`` of shape (npts, dim, dim, nen) such that
    ``grad grad c (x(xi_p))[a, b] = sum_q H[p, a, b, q] c_hat[q]`` including
    the curvature correction ``(I - x_hat G^T)``.
    """
    nen = coords.shape[0]
    _, _, jinv = jacobians(coords, dn)
    grads = shape_gradients(dn, jinv)
    core = np.einsum("pqlk,pla,pkb->pqab", ddn, jinv, jinv)
    corr = np.eye(nen)[None, :, :] - np.einsum("ia,pqa->piq", coords, grads)
    return np.einsum("pqab,pqr->pabr", core, corr)


def laplacian_row(coords, dn, ddn):
    """Laplacian operator row per point, as the printed composition.

    Returns ``L`` of shape (npts, nen) with
    ``div grad c (x(xi_p)) = L[p] . c_hat``, built as
    ``(I - G x_hat^T) mat1(DDN) vec(J^{-1} J^{-T})``.
    """
    npts, nen = dn.shape[0], coords.shape[0]
    _, _, jinv = jacobians(coords, dn)
    grads = shape_gradients(dn, jinv)
    out = np.empty((npts, nen))
    eye = np.eye(nen)
    for p in range(npts):
        metric = jinv[p] @ jinv[p].T
        contraction = mat1(ddn[p]) @ vec(metric, order="col")
        out[p] = (eye - grads[p] @ coords.T) @ contraction
    return out


def grad_of_scalar_field(nodal, grads):
    """Gradient of an interpolated nodal scalar field at each point.

    ``nodal`` has shape (nen,); ``grads`` is the (npts, nen, dim) output of
    :func:`shape_gradients`; returns (npts, dim) via ``D_hat^T (DN) J^{-1}``.
    """
    return np.einsum("i,pia->pa", np.asarray(nodal), grads)


def div_of_tensor_field(nodal, grads):
    """Row-wise divergence of an interpolated nodal tensor field.

    ``nodal`` has shape (nen, dim, dim) (one tensor per node); returns
    (npts, dim) with component ``a`` equal to ``sum_b d(D_ab)/d x_b``, the
    mat1/vec composition of the tensor-calculus identities.
    """
    return np.einsum("iab,pib->pa", np.asarray(nodal), grads)


def element_diameters(coords_all):
    """Diameter (max pairwise node distance) of each element.

    ``coords_all`` has shape (nele, nen, dim).
    """
    diff = coords_all[:, :, None, :] - coords_all[:, None, :, :]
    dist = np.sqrt((diff**2).sum(axis=-1))
    return dist.max(axis=(1, 2))
