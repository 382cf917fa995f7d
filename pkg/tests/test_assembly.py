"""Assembly of the mixed least-squares system against independent oracles.

The centerpiece is a dense single-element oracle that evaluates the
least-squares functional literally (fresh shape functions, textbook chain
rule for second derivatives, explicit 2x2 inverses) and recovers the system
by polarization; the assembled blocks must match it to round-off.
"""

import numpy as np
import pytest

from artifact.assembly import (
    GlobalSystem,
    StabilizationParams,
    apply_dirichlet,
    assemble_lsb_constraints,
    assemble_nssd,
    assemble_primitive,
    assemble_system,
    compute_stabilization,
    dump_system,
    functional_value,
    least_squares_functional,
)
from artifact.elements import element_diameters
from artifact.errors import ConfigurationError
from artifact.mesh import StructuredMesh, generate_structured_mesh
from artifact.physics import (
    ConstantVelocity,
    DirichletBC,
    Problem,
    RotatedAnisotropicDiffusivity,
    ScalarDiffusivity,
    constant_scalar,
)
from oracles import quadratic_form_by_polarization

RNG = np.random.default_rng(8141)


# ---------------------------------------------------------------------------
# Inline coefficient fields with analytic derivatives (test-local)
# ---------------------------------------------------------------------------


class PolyVelocity:
    """v = (x^2 + y, x y): nonzero, spatially varying divergence 3x."""

    dim = 2

    def __call__(self, pts, t=0.0):
        pts = np.atleast_2d(pts)
        return np.stack([pts[:, 0] ** 2 + pts[:, 1], pts[:, 0] * pts[:, 1]], axis=1)

    def divergence(self, pts, t=0.0):
        return 3.0 * np.atleast_2d(pts)[:, 0]


class FlipVelocity:
    """v = (y - 0.4, x - 0.5): divergence-free, v.n changes sign on an edge."""

    dim = 2

    def __call__(self, pts, t=0.0):
        pts = np.atleast_2d(pts)
        return np.stack([pts[:, 1] - 0.4, pts[:, 0] - 0.5], axis=1)

    def divergence(self, pts, t=0.0):
        return np.zeros(np.atleast_2d(pts).shape[0])


class LinearVelocity1D:
    """v = 0.3 + x in one dimension, divergence 1."""

    dim = 1

    def __call__(self, pts, t=0.0):
        return 0.3 + np.atleast_2d(pts)[:, 0:1]

    def divergence(self, pts, t=0.0):
        return np.ones(np.atleast_2d(pts).shape[0])


def varying_alpha(pts, t=0.0):
    pts = np.atleast_2d(pts)
    return 0.5 + pts[:, 0] + 2.0 * pts[:, 1]


def varying_alpha_grad(pts, t=0.0):
    return np.tile([1.0, 2.0], (np.atleast_2d(pts).shape[0], 1))


def varying_source(pts, t=0.0):
    pts = np.atleast_2d(pts)
    return 1.0 + 2.0 * pts[:, 0] + pts[:, 1]


def varying_source_grad(pts, t=0.0):
    return np.tile([2.0, 1.0], (np.atleast_2d(pts).shape[0], 1))


def neumann_data(pts, normals, t=0.0):
    return np.atleast_2d(pts)[:, 0] - 0.3 * np.asarray(normals)[:, 1]


def single_element_mesh(kind, coords):
    coords = np.asarray(coords, dtype=float)
    connect = np.array([list(range(coords.shape[0]))])
    from artifact.elements import get_element

    nedges = len(get_element(kind).edges)
    return StructuredMesh(
        kind,
        coords,
        connect,
        np.zeros(nedges, dtype=int),
        np.arange(nedges),
        element_diameters(coords[connect]),
    )


def stab_arrays(nele, delta, tau):
    return StabilizationParams(
        delta_e=np.full(nele, float(delta)), tau_e=np.full(nele, float(tau))
    )


# ---------------------------------------------------------------------------
# Dense functional oracle (independent shape functions and chain rule)
# ---------------------------------------------------------------------------

Q4_EDGES = ((0, 1), (1, 2), (2, 3), (3, 0))
T3_EDGES = ((0, 1), (1, 2), (2, 0))
CROSS = np.array([[0.0, 1.0], [1.0, 0.0]])
Q4_DD = 0.25 * np.array([1.0, -1.0, 1.0, -1.0])  # d^2 N_i / d xi d eta


def q4_shape_oracle(xi, eta):
    n = 0.25 * np.array(
        [
            (1 - xi) * (1 - eta),
            (1 + xi) * (1 - eta),
            (1 + xi) * (1 + eta),
            (1 - xi) * (1 + eta),
        ]
    )
    dn = 0.25 * np.array(
        [
            [-(1 - eta), -(1 - xi)],
            [(1 - eta), -(1 + xi)],
            [(1 + eta), (1 + xi)],
            [-(1 + eta), (1 - xi)],
        ]
    )
    return n, dn


def t3_shape_oracle(r, s):
    n = np.array([1 - r - s, r, s])
    dn = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    return n, dn


def inv2(m):
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    return np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]]) / det, det


def coefficients_at(problem, x):
    pts = np.asarray(x, dtype=float)[None, :]
    v = np.asarray(problem.velocity(pts, 0.0))[0]
    divv = float(np.asarray(problem.velocity.divergence(pts, 0.0))[0])
    d = np.asarray(problem.diffusivity(pts))[0]
    divd = np.asarray(problem.diffusivity.divergence(pts))[0]
    alpha = float(np.asarray(problem.alpha(pts))[0])
    galpha = (
        np.zeros_like(v)
        if problem.alpha_grad is None
        else np.asarray(problem.alpha_grad(pts))[0]
    )
    f = float(np.asarray(problem.source(pts))[0])
    gf = (
        np.zeros_like(v)
        if problem.source_grad is None
        else np.asarray(problem.source_grad(pts))[0]
    )
    if problem.weight == "type2":
        a2 = np.linalg.inv(np.atleast_2d(d))
        b2 = 1.0 / alpha if alpha != 0.0 else 1.0
    else:
        a2 = np.eye(np.atleast_2d(d).shape[0])
        b2 = 1.0
    return v, divv, d, divd, alpha, galpha, f, gf, a2, b2


def dense_functional_2d(kind, coords, problem, delta, tau, ngauss):
    """Literal evaluation of the stabilized functional on one element."""
    coords = np.asarray(coords, dtype=float)
    if kind == "quad4":
        g1, w1 = np.polynomial.legendre.leggauss(ngauss)
        vol_pts = [(xi, eta) for xi in g1 for eta in g1]
        vol_wts = [wa * wb for wa in w1 for wb in w1]
        shape = q4_shape_oracle
        edges = Q4_EDGES
        nen = 4
    else:
        vol_pts = [(1 / 6, 1 / 6), (2 / 3, 1 / 6), (1 / 6, 2 / 3)]
        vol_wts = [1 / 6] * 3
        shape = t3_shape_oracle
        edges = T3_EDGES
        nen = 3
    ge, we = np.polynomial.legendre.leggauss(ngauss)

    def functional(u):
        c = u[:nen]
        qn = u[nen:].reshape(nen, 2)
        total = 0.0
        for (xi, eta), w in zip(vol_pts, vol_wts):
            n, dn = shape(xi, eta)
            jac = coords.T @ dn
            jinv, det = inv2(jac)
            x = n @ coords
            cval = float(n @ c)
            grad_c = jinv.T @ (dn.T @ c)
            if kind == "quad4":
                h_xi_c = float(Q4_DD @ c) * CROSS
                h_corr = h_xi_c - sum(
                    grad_c[a] * float(Q4_DD @ coords[:, a]) * CROSS for a in range(2)
                )
                hess_c = jinv.T @ h_corr @ jinv
            else:
                hess_c = np.zeros((2, 2))
            gn = dn @ jinv
            qv = n @ qn
            divq = float(np.sum(gn * qn))
            v, divv, d, divd, alpha, galpha, f, gf, a2, b2 = coefficients_at(
                problem, x
            )
            lc = v @ grad_c + cval * divv - divd @ grad_c - float(np.sum(d * hess_c))
            flux = qv - cval * v + d @ grad_c - delta * v * lc
            fdelta = delta * (
                v @ (gf - alpha * grad_c - cval * galpha)
                + divv * (f - alpha * cval)
            )
            bal = alpha * cval + divq - f - fdelta
            gls = lc + alpha * cval - f
            total += w * det * (
                0.5 * flux @ a2 @ flux + 0.5 * b2 * bal**2 + 0.5 * tau * gls**2
            )
        for i0, i1 in edges:
            p0, p1 = coords[i0], coords[i1]
            tang = p1 - p0
            length = float(np.hypot(*tang))
            nrm = np.array([tang[1], -tang[0]]) / length
            for xi, w in zip(ge, we):
                n0, n1 = (1 - xi) / 2.0, (1 + xi) / 2.0
                x = n0 * p0 + n1 * p1
                cval = n0 * c[i0] + n1 * c[i1]
                qv = n0 * qn[i0] + n1 * qn[i1]
                v, _, _, _, alpha, _, f, _, _, _ = coefficients_at(problem, x)
                vn = float(v @ nrm)
                s = np.sign(vn)
                qp = float(problem.neumann(x[None, :], nrm[None, :], 0.0)[0])
                res = (
                    qv @ nrm
                    - (1 + s) / 2.0 * cval * vn
                    + delta * alpha * cval * vn
                    - delta * f * vn
                    - qp
                )
                total += w * (length / 2.0) * 0.5 * res**2
        return float(total)

    return functional


def dense_functional_1d(coords, problem, delta, tau):
    coords = np.asarray(coords, dtype=float)
    x0, x1 = coords[0, 0], coords[1, 0]
    jd = (x1 - x0) / 2.0
    g1, w1 = np.polynomial.legendre.leggauss(2)

    def functional(u):
        c = u[:2]
        qn = u[2:]
        total = 0.0
        for xi, w in zip(g1, w1):
            n = np.array([(1 - xi) / 2.0, (1 + xi) / 2.0])
            dn = np.array([-0.5, 0.5]) / jd
            x = np.array([n @ coords[:, 0]])
            cval = float(n @ c)
            cprime = float(dn @ c)
            qval = float(n @ qn)
            qprime = float(dn @ qn)
            v, divv, d, divd, alpha, galpha, f, gf, a2, b2 = coefficients_at(
                problem, x
            )
            v, divd, galpha, gf = v[0], divd[0], galpha[0], gf[0]
            dsc = float(d[0, 0])
            lc = v * cprime + cval * divv - divd * cprime
            flux = qval - cval * v + dsc * cprime - delta * v * lc
            fdelta = delta * (
                v * (gf - alpha * cprime - cval * galpha)
                + divv * (f - alpha * cval)
            )
            bal = alpha * cval + qprime - f - fdelta
            gls = lc + alpha * cval - f
            total += w * jd * (
                0.5 * float(a2[0, 0]) * flux**2 + 0.5 * b2 * bal**2 + 0.5 * tau * gls**2
            )
        for vertex, nrm in ((0, -1.0), (1, 1.0)):
            x = coords[vertex]
            v, _, _, _, alpha, _, f, _, _, _ = coefficients_at(problem, x)
            vn = float(v[0] * nrm)
            s = np.sign(vn)
            qp = float(problem.neumann(x[None, :], np.array([[nrm]]), 0.0)[0])
            res = (
                qn[vertex] * nrm
                - (1 + s) / 2.0 * c[vertex] * vn
                + delta * alpha * c[vertex] * vn
                - delta * f * vn
                - qp
            )
            total += 0.5 * res**2
        return float(total)

    return functional


def assert_system_matches_oracle(system, functional, ndofs, rtol=1e-10):
    k_o, r_o, c0_o = quadratic_form_by_polarization(functional, ndofs)
    k_i = system.full_matrix().toarray()
    scale = np.abs(k_o).max()
    np.testing.assert_allclose(k_i, k_o, atol=rtol * scale, rtol=0)
    np.testing.assert_allclose(
        system.full_rhs(), r_o, atol=rtol * max(1.0, np.abs(r_o).max()), rtol=0
    )
    assert system.c0 == pytest.approx(c0_o, abs=rtol * max(1.0, abs(c0_o)))


# ---------------------------------------------------------------------------
# Stabilization parameters
# ---------------------------------------------------------------------------


class TestStabilization:
    def test_isotropic_reduction(self):
        # delta1 = delta2 = 0 and constant isotropic D: delta_e = -d0 h_e^2 / D
        mesh = generate_structured_mesh(
            ((0.0, 1.0), (0.0, 1.0)), 11, 11, kind="quad4"
        )
        problem = Problem(
            velocity=ConstantVelocity([1.0, 0.0]), diffusivity=ScalarDiffusivity(1e-2)
        )
        stab = compute_stabilization(
            mesh, problem, {"delta0": 0.01, "tau0": 0.001}
        )
        np.testing.assert_allclose(stab.delta_e, -0.02, rtol=1e-13)
        np.testing.assert_allclose(stab.tau_e, -2e-5, rtol=1e-13)
        assert np.all(stab.delta_e <= 0.0) and np.all(stab.tau_e <= 0.0)

    def test_interval_values_for_mixing_runs(self):
        mesh = generate_structured_mesh((0.0, 1.0), 11, kind="line2")
        problem = Problem(
            velocity=ConstantVelocity([0.25]),
            diffusivity=ScalarDiffusivity(0.0025, dim=1),
        )
        stab = compute_stabilization(mesh, problem, {"delta0": 0.08, "tau0": 0.04})
        np.testing.assert_allclose(stab.delta_e, -0.32, rtol=1e-13)
        np.testing.assert_allclose(stab.tau_e, -4e-4, rtol=1e-13)

    def test_quadratic_scaling_in_element_size(self):
        problem = Problem(
            velocity=ConstantVelocity([1.0, 0.0]), diffusivity=ScalarDiffusivity(1e-2)
        )
        consts = {"delta0": 0.05, "tau0": 0.02}
        coarse = compute_stabilization(
            generate_structured_mesh(((0.0, 1.0), (0.0, 1.0)), 11, 11), problem, consts
        )
        fine = compute_stabilization(
            generate_structured_mesh(((0.0, 1.0), (0.0, 1.0)), 21, 21), problem, consts
        )
        assert fine.delta_e[0] == pytest.approx(coarse.delta_e[0] / 4.0, rel=1e-12)
        assert fine.tau_e[0] == pytest.approx(coarse.tau_e[0] / 4.0, rel=1e-12)

    def test_reaction_term_in_denominator(self):
        # 3x3 unit square: h_e^2 = 0.5, alpha = 2, div v = 0, div D = 0
        mesh = generate_structured_mesh(((0.0, 1.0), (0.0, 1.0)), 3, 3, kind="quad4")
        problem = Problem(
            velocity=ConstantVelocity([1.0, 0.0]),
            diffusivity=ScalarDiffusivity(0.1),
            alpha=constant_scalar(2.0),
        )
        stab = compute_stabilization(mesh, problem, {"delta0": 0.05, "delta1": 0.3})
        expected = -0.05 * 0.1 * 0.5 / (0.1**2 + 0.3 * 4.0 * 0.5)
        np.testing.assert_allclose(stab.delta_e, expected, rtol=1e-13)

    def test_alpha_shift_enters_reaction_maximum(self):
        mesh = generate_structured_mesh(((0.0, 1.0), (0.0, 1.0)), 3, 3, kind="quad4")
        problem = Problem(
            velocity=ConstantVelocity([1.0, 0.0]), diffusivity=ScalarDiffusivity(0.1)
        )
        stab = compute_stabilization(
            mesh, problem, {"delta0": 0.05, "delta1": 0.3}, alpha_shift=2.0
        )
        expected = -0.05 * 0.1 * 0.5 / (0.1**2 + 0.3 * 4.0 * 0.5)
        np.testing.assert_allclose(stab.delta_e, expected, rtol=1e-13)

    def test_negative_constants_rejected(self):
        mesh = generate_structured_mesh((0.0, 1.0), 5, kind="line2")
        problem = Problem(
            velocity=ConstantVelocity([1.0]), diffusivity=ScalarDiffusivity(1.0, dim=1)
        )
        with pytest.raises(ConfigurationError):
            compute_stabilization(mesh, problem, {"delta0": -0.1})


# ---------------------------------------------------------------------------
# Single-element oracle comparisons
# ---------------------------------------------------------------------------

QUAD_COORDS = np.array([[0.0, 0.0], [1.1, 0.05], [0.9, 1.0], [-0.1, 0.8]])
TRI_COORDS = np.array([[0.0, 0.0], [1.0, 0.2], [0.3, 1.1]])


def generic_problem(velocity, weight, dim=2):
    if dim == 2:
        diff = RotatedAnisotropicDiffusivity(theta=0.3, w0=1.0, w1=0.4, w2=0.5)
    else:
        diff = ScalarDiffusivity(0.2, dim=1)
    return Problem(
        velocity=velocity,
        diffusivity=diff,
        alpha=varying_alpha if dim == 2 else lambda p, t=0.0: 0.7 + np.atleast_2d(p)[:, 0],
        alpha_grad=varying_alpha_grad
        if dim == 2
        else lambda p, t=0.0: np.ones((np.atleast_2d(p).shape[0], 1)),
        source=varying_source if dim == 2 else lambda p, t=0.0: 2.0 - np.atleast_2d(p)[:, 0],
        source_grad=varying_source_grad
        if dim == 2
        else lambda p, t=0.0: np.full((np.atleast_2d(p).shape[0], 1), -1.0),
        neumann_value=neumann_data
        if dim == 2
        else lambda p, n, t=0.0: np.full(np.atleast_2d(p).shape[0], 0.4),
        weight=weight,
    )


class TestSingleElementOracle:
    @pytest.mark.parametrize("weight", ["type1", "type2"])
    @pytest.mark.parametrize("vel", [PolyVelocity, FlipVelocity])
    def test_quad_stabilized(self, weight, vel):
        mesh = single_element_mesh("quad4", QUAD_COORDS)
        problem = generic_problem(vel(), weight)
        stab = stab_arrays(1, -0.07, -0.013)
        system = assemble_nssd(mesh, problem, stab)
        oracle = dense_functional_2d(
            "quad4", QUAD_COORDS, problem, -0.07, -0.013, ngauss=3
        )
        assert_system_matches_oracle(system, oracle, 12)

    @pytest.mark.parametrize("weight", ["type1", "type2"])
    def test_quad_plain(self, weight):
        mesh = single_element_mesh("quad4", QUAD_COORDS)
        problem = generic_problem(PolyVelocity(), weight)
        system = assemble_primitive(mesh, problem)
        oracle = dense_functional_2d("quad4", QUAD_COORDS, problem, 0.0, 0.0, ngauss=2)
        assert_system_matches_oracle(system, oracle, 12)

    def test_triangle_stabilized_without_second_derivatives(self):
        # the oracle carries no Hessian term at all: simplices must agree
        mesh = single_element_mesh("tri3", TRI_COORDS)
        problem = generic_problem(PolyVelocity(), "type1")
        stab = stab_arrays(1, -0.05, -0.02)
        system = assemble_nssd(mesh, problem, stab)
        oracle = dense_functional_2d("tri3", TRI_COORDS, problem, -0.05, -0.02, ngauss=2)
        assert_system_matches_oracle(system, oracle, 9)

    def test_line_stabilized(self):
        coords = np.array([[0.2], [0.9]])
        mesh = single_element_mesh("line2", coords)
        problem = generic_problem(LinearVelocity1D(), "type2", dim=1)
        stab = stab_arrays(1, -0.11, -0.03)
        system = assemble_nssd(mesh, problem, stab)
        oracle = dense_functional_1d(coords, problem, -0.11, -0.03)
        assert_system_matches_oracle(system, oracle, 4)

    def test_line_least_squares_diffusion_block(self):
        # alpha = 0, v = 0, D = 1, f = 0, both ends held: the concentration
        # block is the 1D diffusion operator h^-1 [[1, -1], [-1, 1]] plus
        # nothing else, checked against the dense oracle and the closed form
        coords = np.array([[0.0], [0.5]])
        mesh = single_element_mesh("line2", coords)
        problem = Problem(
            velocity=ConstantVelocity([0.0]),
            diffusivity=ScalarDiffusivity(1.0, dim=1),
            dirichlet=[
                DirichletBC(
                    where=lambda c: np.ones(len(c), dtype=bool),
                    value=lambda c: np.zeros(len(c)),
                )
            ],
        )
        system = assemble_primitive(mesh, problem)

        def oracle(u):
            c, qn = u[:2], u[2:]
            g1, w1 = np.polynomial.legendre.leggauss(10)
            h = 0.5
            total = 0.0
            for xi, w in zip(g1, w1):
                n = np.array([(1 - xi) / 2.0, (1 + xi) / 2.0])
                dn = np.array([-1.0 / h, 1.0 / h])
                total += w * (h / 2.0) * 0.5 * (
                    (n @ qn + dn @ c) ** 2 + (dn @ qn) ** 2
                )
            return float(total)

        assert_system_matches_oracle(system, oracle, 4, rtol=1e-12)
        np.testing.assert_allclose(
            system.kcc.toarray(), [[2.0, -2.0], [-2.0, 2.0]], atol=1e-13
        )


class TestDegeneracy:
    def test_zero_stabilization_is_bitwise_plain(self):
        mesh = generate_structured_mesh(((0.0, 1.0), (0.0, 1.0)), 4, 4, kind="quad4")
        problem = generic_problem(PolyVelocity(), "type1")
        zero = compute_stabilization(mesh, problem, {})
        nssd = assemble_nssd(mesh, problem, zero)
        plain = assemble_primitive(mesh, problem)
        for a, b in (
            (nssd.kcc, plain.kcc),
            (nssd.kcq, plain.kcq),
            (nssd.kqq, plain.kqq),
        ):
            assert (a != b).nnz == 0
        assert np.array_equal(nssd.rc, plain.rc)
        assert np.array_equal(nssd.rq, plain.rq)
        assert nssd.c0 == plain.c0


# ---------------------------------------------------------------------------
# Structural invariants
# ---------------------------------------------------------------------------


def thermal_like_problem():
    return Problem(
        velocity=ConstantVelocity([1.0, 0.3]),
        diffusivity=ScalarDiffusivity(0.05),
        alpha=constant_scalar(0.4),
        source=lambda p, t=0.0: 1.0 + np.atleast_2d(p)[:, 0],
        source_grad=lambda p, t=0.0: np.tile(
            [1.0, 0.0], (np.atleast_2d(p).shape[0], 1)
        ),
        dirichlet=[
            DirichletBC(
                where=lambda c: c[:, 0] < 1e-12,
                value=lambda c: 2.0 - c[:, 1],
            )
        ],
    )


class TestInvariants:
    def test_symmetry_and_definiteness(self):
        mesh = generate_structured_mesh(((0.0, 1.0), (0.0, 1.0)), 4, 4, kind="quad4")
        problem = thermal_like_problem()
        stab = compute_stabilization(mesh, problem, {"delta0": 0.01, "tau0": 0.001})
        system = assemble_nssd(mesh, problem, stab)
        kcc = system.kcc.toarray()
        kqq = system.kqq.toarray()
        np.testing.assert_allclose(kcc, kcc.T, atol=1e-14)
        np.testing.assert_allclose(kqq, kqq.T, atol=1e-14)
        full = system.full_matrix().toarray()
        eigs = np.linalg.eigvalsh(full)
        assert eigs.min() > -1e-10 * abs(eigs.max())

        fixed, vals = problem.dirichlet_nodes(mesh.coords)
        reduced = apply_dirichlet(system, fixed, vals)
        assert np.linalg.eigvalsh(reduced.kcc.toarray()).min() > 0.0
        assert np.linalg.eigvalsh(reduced.kqq.toarray()).min() > 0.0
        assert np.linalg.eigvalsh(reduced.full_matrix().toarray()).min() > 0.0

    def test_one_balance_row_per_element(self):
        mesh = generate_structured_mesh(((0.0, 1.0), (0.0, 1.0)), 5, 4, kind="tri3")
        system = assemble_primitive(mesh, thermal_like_problem())
        assert system.ac.shape == (mesh.nele, mesh.nnodes)
        assert system.aq.shape == (mesh.nele, 2 * mesh.nnodes)
        assert system.bf.shape == (mesh.nele,)

    def test_zero_data_zero_loads(self):
        mesh = generate_structured_mesh(((0.0, 1.0), (0.0, 1.0)), 4, 4, kind="quad4")
        problem = Problem(
            velocity=PolyVelocity(),
            diffusivity=ScalarDiffusivity(0.1),
            alpha=varying_alpha,
            alpha_grad=varying_alpha_grad,
        )
        stab = compute_stabilization(mesh, problem, {"delta0": 0.05, "tau0": 0.01})
        system = assemble_nssd(mesh, problem, stab)
        assert np.all(system.rc == 0.0)
        assert np.all(system.rq == 0.0)
        assert system.c0 == 0.0

    def test_linearity_in_data(self):
        mesh = generate_structured_mesh(((0.0, 1.0), (0.0, 1.0)), 4, 4, kind="quad4")
        scale = 3.7

        def solve(problem):
            system = assemble_primitive(mesh, problem)
            fixed, vals = problem.dirichlet_nodes(mesh.coords)
            red = apply_dirichlet(system, fixed, vals)
            x = np.linalg.solve(red.full_matrix().toarray(), red.full_rhs())
            return x

        base = thermal_like_problem()
        scaled = Problem(
            velocity=base.velocity,
            diffusivity=base.diffusivity,
            alpha=base.alpha,
            source=lambda p, t=0.0: scale * base.source(p, t),
            source_grad=lambda p, t=0.0: scale * base.source_grad(p, t),
            dirichlet=[
                DirichletBC(
                    where=base.dirichlet[0].where,
                    value=lambda c: scale * base.dirichlet[0].value(c),
                )
            ],
        )
        np.testing.assert_allclose(
            solve(scaled), scale * solve(base), rtol=1e-10, atol=1e-12
        )

    def test_exact_reproduction_of_in_space_solution(self):
        # c = 1 + x + 2y, v = (2, -1) makes v.grad c = 0, alpha = 0, f = 0;
        # q = c v - D grad c is bilinear and is interpolated exactly
        mesh = generate_structured_mesh(((0.0, 1.0), (0.0, 1.0)), 4, 4, kind="quad4")
        d_val = 0.1
        problem = Problem(
            velocity=ConstantVelocity([2.0, -1.0]),
            diffusivity=ScalarDiffusivity(d_val),
            dirichlet=[
                DirichletBC(
                    where=lambda c: (
                        (c[:, 0] < 1e-12)
                        | (c[:, 0] > 1 - 1e-12)
                        | (c[:, 1] < 1e-12)
                        | (c[:, 1] > 1 - 1e-12)
                    ),
                    value=lambda c: 1.0 + c[:, 0] + 2.0 * c[:, 1],
                )
            ],
        )
        c_exact = 1.0 + mesh.coords[:, 0] + 2.0 * mesh.coords[:, 1]
        q_exact = c_exact[:, None] * np.array([2.0, -1.0]) - d_val * np.array([1.0, 2.0])

        for use_stab in (False, True):
            if use_stab:
                stab = compute_stabilization(
                    mesh, problem, {"delta0": 0.01, "tau0": 0.001}
                )
                system = assemble_nssd(mesh, problem, stab)
            else:
                system = assemble_primitive(mesh, problem)
            fixed, vals = problem.dirichlet_nodes(mesh.coords)
            red = apply_dirichlet(system, fixed, vals)
            x = np.linalg.solve(red.full_matrix().toarray(), red.full_rhs())
            nfree = red.ncdofs
            c_full = red.expand_concentration(x[:nfree])
            q_full = x[nfree:]
            np.testing.assert_allclose(c_full, c_exact, atol=1e-10)
            np.testing.assert_allclose(q_full, q_exact.ravel(), atol=1e-10)
            # the residual-wise evaluation sees pointwise residuals at
            # round-off, so their squares sit far below any energy scale
            value = least_squares_functional(
                mesh, problem, c_full, q_full, stab=stab if use_stab else None
            )
            assert 0.0 <= value <= 1e-20

    def test_residual_functional_matches_quadratic_form(self):
        # on arbitrary fields the two evaluations agree to round-off of
        # the quadratic form itself
        mesh = generate_structured_mesh(((0.0, 1.0), (0.0, 1.0)), 4, 4, kind="quad4")
        problem = thermal_like_problem()
        stab = compute_stabilization(mesh, problem, {"delta0": 0.03, "tau0": 0.004})
        system = assemble_nssd(mesh, problem, stab)
        rng = np.random.default_rng(7)
        for _ in range(4):
            c = rng.standard_normal(mesh.nnodes)
            q = rng.standard_normal(mesh.nnodes * mesh.dim)
            lhs = least_squares_functional(mesh, problem, c, q, stab=stab)
            rhs = functional_value(system, c, q)
            np.testing.assert_allclose(lhs, rhs, rtol=1e-11, atol=1e-12)


# ---------------------------------------------------------------------------
# Local species balance rows
# ---------------------------------------------------------------------------


def all_dirichlet(value=0.0):
    """Fix every node so each boundary edge keeps the solved flux."""
    return [
        DirichletBC(
            where=lambda c: np.ones(len(c), dtype=bool),
            value=lambda c, v=value: np.full(len(c), v),
        )
    ]


class TestBalanceRows:
    def test_pure_flux_row_and_hand_values(self):
        # unit square element: oint N_i n_a over the four edges gives +-1/2
        mesh = single_element_mesh(
            "quad4", np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        )
        problem = Problem(
            velocity=ConstantVelocity([1.0, 0.0]),
            diffusivity=ScalarDiffusivity(1.0),
            dirichlet=all_dirichlet(),
        )
        ac, aq, bf = assemble_lsb_constraints(mesh, problem)
        assert np.all(ac.toarray() == 0.0)
        np.testing.assert_allclose(bf, 0.0)
        row = aq.toarray()[0]
        # node 0 = (0,0): edges (0,1) n=(0,-1) and (3,0) n=(-1,0)
        assert row[0] == pytest.approx(-0.5)  # x component
        assert row[1] == pytest.approx(-0.5)  # y component
        # node 2 = (1,1): edges (1,2) n=(1,0) and (2,3) n=(0,1)
        assert row[4] == pytest.approx(0.5)
        assert row[5] == pytest.approx(0.5)

    def test_constant_flux_is_balanced(self):
        mesh = generate_structured_mesh(((0.0, 2.0), (0.0, 1.0)), 4, 3, kind="tri3")
        problem = Problem(
            velocity=ConstantVelocity([1.0, 0.0]),
            diffusivity=ScalarDiffusivity(1.0),
            dirichlet=all_dirichlet(),
        )
        _, aq, _ = assemble_lsb_constraints(mesh, problem)
        q_const = np.tile([1.0, 0.0], mesh.nnodes)
        np.testing.assert_allclose(aq @ q_const, 0.0, atol=1e-13)

    @pytest.mark.parametrize("kind", ["quad4", "tri3"])
    def test_rows_telescope_to_outer_boundary(self, kind):
        mesh = generate_structured_mesh(((0.0, 1.0), (0.0, 1.0)), 3, 3, kind=kind)
        problem = Problem(
            velocity=ConstantVelocity([1.0, 0.0]),
            diffusivity=ScalarDiffusivity(1.0),
            dirichlet=all_dirichlet(),
        )
        _, aq, _ = assemble_lsb_constraints(mesh, problem)
        q_nodal = RNG.standard_normal(2 * mesh.nnodes)
        summed = float(np.ones(mesh.nele) @ (aq @ q_nodal))
        # independent outer-boundary integral of the nodal flux
        total = 0.0
        for nodes in mesh.boundary_edge_nodes():
            p0, p1 = mesh.coords[nodes[0]], mesh.coords[nodes[1]]
            tang = p1 - p0
            nrm = np.array([tang[1], -tang[0]])  # length-scaled outward normal
            q0 = q_nodal[2 * nodes[0] : 2 * nodes[0] + 2]
            q1 = q_nodal[2 * nodes[1] : 2 * nodes[1] + 2]
            total += 0.5 * (q0 + q1) @ nrm
        assert summed == pytest.approx(total, abs=1e-12)

    def test_reaction_and_source_terms(self):
        mesh = generate_structured_mesh(((0.0, 1.0), (0.0, 1.0)), 3, 3, kind="quad4")
        problem = Problem(
            velocity=ConstantVelocity([1.0, 0.0]),
            diffusivity=ScalarDiffusivity(1.0),
            alpha=constant_scalar(3.0),
            source=constant_scalar(5.0),
        )
        ac, _, bf = assemble_lsb_constraints(mesh, problem)
        area = 0.25
        np.testing.assert_allclose(ac @ np.ones(mesh.nnodes), 3.0 * area, rtol=1e-12)
        np.testing.assert_allclose(bf, 5.0 * area, rtol=1e-12)

    def test_line_rows(self):
        mesh = generate_structured_mesh((0.0, 1.0), 4, kind="line2")
        problem = Problem(
            velocity=ConstantVelocity([1.0]),
            diffusivity=ScalarDiffusivity(1.0, dim=1),
            dirichlet=all_dirichlet(),
        )
        _, aq, _ = assemble_lsb_constraints(mesh, problem)
        expected = np.zeros((3, 4))
        for e in range(3):
            expected[e, e] = -1.0
            expected[e, e + 1] = 1.0
        np.testing.assert_allclose(aq.toarray(), expected)

    def test_flux_boundary_edges_use_prescribed_datum(self):
        # with no Dirichlet patch every boundary edge carries the datum:
        # the flux columns empty out and the rhs collects -oint q^p dGamma
        mesh = single_element_mesh(
            "quad4", np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        )
        problem = Problem(
            velocity=ConstantVelocity([1.0, 0.0]),
            diffusivity=ScalarDiffusivity(1.0),
            neumann_value=lambda pts, normals, t=0.0: np.full(len(pts), 2.0),
        )
        ac, aq, bf = assemble_lsb_constraints(mesh, problem)
        assert np.all(ac.toarray() == 0.0)
        np.testing.assert_allclose(aq.toarray(), 0.0, atol=1e-15)
        # perimeter 4, datum 2, no volumetric source
        np.testing.assert_allclose(bf, [-8.0], rtol=1e-13)

    def test_closed_tank_rows_sum_to_content_change(self):
        # zero prescribed flux everywhere: summing the rows must cancel every
        # flux column exactly, leaving pure volumetric content bookkeeping
        mesh = generate_structured_mesh(((0.0, 1.0), (0.0, 0.5)), 5, 4, kind="quad4")
        problem = Problem(
            velocity=ConstantVelocity([1.0, 0.0]),
            diffusivity=ScalarDiffusivity(1.0),
            alpha=constant_scalar(2.0),
        )
        ac, aq, bf = assemble_lsb_constraints(mesh, problem)
        col_sums = np.ones(mesh.nele) @ aq.toarray()
        np.testing.assert_allclose(col_sums, 0.0, atol=1e-13)
        np.testing.assert_allclose(bf, 0.0, atol=1e-15)
        # volumetric term integrates alpha * (nodal interpolant)
        c = RNG.standard_normal(mesh.nnodes)
        total = float(np.ones(mesh.nele) @ (ac @ c))
        oracle = 0.0
        pts, wts = mesh.element.quadrature()
        n_sh = mesh.element.shape(pts)
        xe = mesh.element_coords()
        for e in range(mesh.nele):
            jac = np.einsum("ia,pij->paj", xe[e], mesh.element.dshape(pts))
            det = np.linalg.det(jac)
            ce = n_sh @ c[mesh.connect[e]]
            oracle += float(np.sum(wts * det * 2.0 * ce))
        assert total == pytest.approx(oracle, abs=1e-12)


# ---------------------------------------------------------------------------
# Dirichlet elimination
# ---------------------------------------------------------------------------


class TestDirichlet:
    def test_penalty_oracle(self):
        mesh = generate_structured_mesh(((0.0, 1.0), (0.0, 1.0)), 4, 4, kind="quad4")
        problem = thermal_like_problem()
        system = assemble_primitive(mesh, problem)
        fixed, vals = problem.dirichlet_nodes(mesh.coords)
        red = apply_dirichlet(system, fixed, vals)
        x_red = np.linalg.solve(red.full_matrix().toarray(), red.full_rhs())
        c_red = red.expand_concentration(x_red[: red.ncdofs])
        q_red = x_red[red.ncdofs :]

        pen = 1e12
        k_full = system.full_matrix().toarray()
        r_full = system.full_rhs()
        for node, val in zip(fixed, vals):
            k_full[node, node] += pen
            r_full[node] += pen * val
        x_pen = np.linalg.solve(k_full, r_full)
        np.testing.assert_allclose(c_red, x_pen[: mesh.nnodes], atol=1e-6)
        np.testing.assert_allclose(q_red, x_pen[mesh.nnodes :], atol=1e-6)

    def test_zero_values_leave_loads_alone(self):
        mesh = generate_structured_mesh(((0.0, 1.0), (0.0, 1.0)), 4, 4, kind="quad4")
        problem = thermal_like_problem()
        system = assemble_primitive(mesh, problem)
        fixed, _ = problem.dirichlet_nodes(mesh.coords)
        red = apply_dirichlet(system, fixed, np.zeros(len(fixed)))
        free = np.setdiff1d(np.arange(mesh.nnodes), fixed)
        np.testing.assert_array_equal(red.rc, system.rc[free])
        np.testing.assert_array_equal(red.rq, system.rq)
        np.testing.assert_array_equal(red.bf, system.bf)

    def test_constant_solution_kills_reduced_residual(self):
        mesh = generate_structured_mesh(((0.0, 1.0), (0.0, 1.0)), 5, 5, kind="quad4")
        problem = Problem(
            velocity=ConstantVelocity([0.0, 0.0]),
            diffusivity=ScalarDiffusivity(1.0),
            dirichlet=[
                DirichletBC(
                    where=lambda c: (
                        (c[:, 0] < 1e-12)
                        | (c[:, 0] > 1 - 1e-12)
                        | (c[:, 1] < 1e-12)
                        | (c[:, 1] > 1 - 1e-12)
                    ),
                    value=lambda c: np.full(len(c), 2.0),
                )
            ],
        )
        system = assemble_primitive(mesh, problem)
        fixed, vals = problem.dirichlet_nodes(mesh.coords)
        red = apply_dirichlet(system, fixed, vals)
        x_exact = np.concatenate(
            [np.full(red.ncdofs, 2.0), np.zeros(red.nqdofs)]
        )
        resid = red.full_matrix() @ x_exact - red.full_rhs()
        np.testing.assert_allclose(resid, 0.0, atol=1e-12)

    def test_balance_rhs_picks_up_fixed_values(self):
        mesh = generate_structured_mesh(((0.0, 1.0), (0.0, 1.0)), 3, 3, kind="quad4")
        problem = Problem(
            velocity=ConstantVelocity([1.0, 0.0]),
            diffusivity=ScalarDiffusivity(1.0),
            alpha=constant_scalar(2.0),
            dirichlet=[
                DirichletBC(
                    where=lambda c: c[:, 0] < 1e-12,
                    value=lambda c: np.full(len(c), 3.0),
                )
            ],
        )
        system = assemble_primitive(mesh, problem)
        fixed, vals = problem.dirichlet_nodes(mesh.coords)
        red = apply_dirichlet(system, fixed, vals)
        np.testing.assert_allclose(
            red.bf, system.bf - system.ac[:, fixed] @ vals, atol=1e-14
        )
        assert red.ac.shape[1] == mesh.nnodes - len(fixed)


class TestDump:
    def test_roundtrip(self, tmp_path):
        from scipy.io import mmread

        mesh = generate_structured_mesh(((0.0, 1.0), (0.0, 1.0)), 3, 3, kind="quad4")
        system = assemble_primitive(mesh, thermal_like_problem())
        dump_system(system, tmp_path)
        back = mmread(tmp_path / "kcc.mtx").toarray()
        np.testing.assert_allclose(back, system.kcc.toarray(), rtol=1e-12)
        rc = np.loadtxt(tmp_path / "rc.txt")
        np.testing.assert_allclose(rc, system.rc, rtol=1e-12)
