"""Coefficient models: velocities, diffusivities, weights, problem container."""

import numpy as np
import pytest

from artifact.errors import ConfigurationError, EllipticityError
from artifact.physics import (
    CellularVelocity,
    ChaoticVortexVelocity,
    ConstantVelocity,
    DirichletBC,
    MultimodeStreamVelocity,
    Problem,
    RotatedAnisotropicDiffusivity,
    ScalarDiffusivity,
    ShearVelocity,
    VortexVelocity,
    build_diffusivity,
    build_velocity,
    check_assumptions,
    constant_scalar,
    sign,
    strongly_nonuniform_indicator,
    weight_arrays,
)

RNG = np.random.default_rng(20260814)


def random_points(n=40, lo=0.05, hi=0.95):
    return lo + (hi - lo) * RNG.random((n, 2))


def fd_divergence(velocity, pts, t=0.0, h=1e-6):
    div = np.zeros(pts.shape[0])
    for a in range(pts.shape[1]):
        step = np.zeros_like(pts)
        step[:, a] = h
        div += (velocity(pts + step, t)[:, a] - velocity(pts - step, t)[:, a]) / (2 * h)
    return div


def fd_strain_difference(velocity, pts, t=0.0, h=1e-6):
    ex = np.zeros_like(pts)
    ex[:, 0] = h
    ey = np.zeros_like(pts)
    ey[:, 1] = h
    dvx = (velocity(pts + ex, t)[:, 0] - velocity(pts - ex, t)[:, 0]) / (2 * h)
    dvy = (velocity(pts + ey, t)[:, 1] - velocity(pts - ey, t)[:, 1]) / (2 * h)
    return dvx - dvy


def multimode_flow():
    return MultimodeStreamVelocity(
        amplitudes=(0.08, 0.02, 0.01),
        p_modes=(4.0, 5.0, 10.0),
        q_modes=(1.0, 5.0, 10.0),
        lx=2.0,
        ly=1.0,
    )


class TestSign:
    def test_trichotomy(self):
        np.testing.assert_array_equal(
            sign(np.array([-3.0, 0.0, 1e-300, 2.0])), [-1.0, 0.0, 1.0, 1.0]
        )


class TestVelocities:
    def test_constant(self):
        v = ConstantVelocity([1.5, -0.5])
        pts = random_points()
        np.testing.assert_allclose(v(pts), np.tile([1.5, -0.5], (len(pts), 1)))
        np.testing.assert_allclose(v.divergence(pts), 0.0)
        np.testing.assert_allclose(v.strain_difference(pts), 0.0)

    def test_constant_1d(self):
        v = ConstantVelocity([0.25])
        assert v.dim == 1
        np.testing.assert_allclose(v(np.array([[0.3], [0.7]])), 0.25)

    def test_shear_profile(self):
        v = ShearVelocity(rate=2.0)
        out = v(np.array([[0.3, 0.25], [0.9, 0.5]]))
        np.testing.assert_allclose(out, [[0.5, 0.0], [1.0, 0.0]])
        np.testing.assert_allclose(v.divergence(random_points()), 0.0)

    def test_multimode_matches_stream_function(self):
        v = multimode_flow()
        pts = random_points(30, 0.1, 0.9) * np.array([2.0, 1.0])
        h = 1e-6
        ey = np.array([0.0, h])
        ex = np.array([h, 0.0])
        vx_fd = -(v.stream_function(pts + ey) - v.stream_function(pts - ey)) / (2 * h)
        vy_fd = (v.stream_function(pts + ex) - v.stream_function(pts - ex)) / (2 * h)
        out = v(pts)
        np.testing.assert_allclose(out[:, 0], vx_fd, atol=1e-7)
        np.testing.assert_allclose(out[:, 1], vy_fd, atol=1e-7)

    def test_multimode_divergence_free(self):
        v = multimode_flow()
        pts = random_points(30) * np.array([2.0, 1.0])
        np.testing.assert_allclose(v.divergence(pts), 0.0)
        np.testing.assert_allclose(fd_divergence(v, pts), 0.0, atol=1e-6)

    def test_multimode_strain_vs_fd(self):
        v = multimode_flow()
        pts = random_points(30) * np.array([2.0, 1.0])
        np.testing.assert_allclose(
            v.strain_difference(pts), fd_strain_difference(v, pts), atol=1e-6
        )

    def test_vortex_values(self):
        v = VortexVelocity()
        out = v(np.array([[0.25, 0.0], [0.0, 0.25]]))
        np.testing.assert_allclose(out, [[1.0, 0.0], [0.0, 1.0]], atol=1e-15)
        np.testing.assert_allclose(v.divergence(random_points()), 0.0)
        np.testing.assert_allclose(v.strain_difference(random_points()), 0.0)

    def test_chaotic_vortex_switching(self):
        v = ChaoticVortexVelocity(period=0.8, v0=1.0)
        pts = np.array([[0.1, 0.2]])
        base_x = np.cos(2 * np.pi * 0.2)
        base_y = np.cos(2 * np.pi * 0.1)
        early = v(pts, t=0.0)[0]
        np.testing.assert_allclose(
            early, [base_x + np.sin(2 * np.pi * 0.2), base_y], atol=1e-15
        )
        late = v(pts, t=0.5)[0]  # phase 0.625: second half of the period
        np.testing.assert_allclose(
            late, [base_x, base_y + np.sin(2 * np.pi * 0.1)], atol=1e-15
        )
        wrapped = v(pts, t=0.8)[0]  # back to the first half
        np.testing.assert_allclose(wrapped, early, atol=1e-15)

    def test_chaotic_vortex_divergence_free_both_halves(self):
        v = ChaoticVortexVelocity()
        pts = random_points()
        for t in (0.0, 0.5):
            np.testing.assert_allclose(v.divergence(pts, t), 0.0)
            np.testing.assert_allclose(fd_divergence(v, pts, t), 0.0, atol=1e-6)

    def test_cellular_no_normal_flow_through_walls(self):
        v = CellularVelocity(0.5)
        ys = np.linspace(0.0, 0.5, 21)
        xs = np.linspace(0.0, 1.0, 41)
        left = np.stack([np.zeros_like(ys), ys], axis=1)
        right = np.stack([np.ones_like(ys), ys], axis=1)
        bottom = np.stack([xs, np.zeros_like(xs)], axis=1)
        top = np.stack([xs, np.full_like(xs, 0.5)], axis=1)
        np.testing.assert_allclose(v(left)[:, 0], 0.0, atol=1e-14)
        np.testing.assert_allclose(v(right)[:, 0], 0.0, atol=1e-13)
        np.testing.assert_allclose(v(bottom)[:, 1], 0.0, atol=1e-14)
        np.testing.assert_allclose(v(top)[:, 1], 0.0, atol=1e-13)

    def test_cellular_strain_vs_fd(self):
        v = CellularVelocity(0.25)
        pts = random_points(30)
        np.testing.assert_allclose(
            v.strain_difference(pts), fd_strain_difference(v, pts), atol=1e-4
        )
        np.testing.assert_allclose(v.divergence(pts), 0.0)
        np.testing.assert_allclose(fd_divergence(v, pts), 0.0, atol=1e-5)

    def test_nonuniformity_indicator_peak(self):
        # peak stretching of the cellular flow is 4 pi / L_cell
        l_cell, dt = 0.5, 0.1
        xs = np.linspace(0.0, 1.0, 81)
        ys = np.linspace(0.0, 0.5, 41)
        gx, gy = np.meshgrid(xs, ys)
        grid = np.stack([gx.ravel(), gy.ravel()], axis=1)
        got = strongly_nonuniform_indicator(CellularVelocity(l_cell), dt, grid)
        assert got == pytest.approx(4.0 * np.pi / l_cell * dt, rel=1e-12)
        assert got > 1.0  # this (L_cell, dt) pair is in the flagged regime

    def test_nonuniformity_indicator_uniform_flow(self):
        grid = random_points()
        assert strongly_nonuniform_indicator(ConstantVelocity([1.0, 1.0]), 10.0, grid) == 0.0


class TestDiffusivities:
    def test_scalar_tensor_and_inverse(self):
        d = ScalarDiffusivity(1e-2)
        pts = random_points(5)
        tensors = d(pts)
        np.testing.assert_allclose(tensors, np.tile(1e-2 * np.eye(2), (5, 1, 1)))
        np.testing.assert_allclose(d.divergence(pts), 0.0)
        np.testing.assert_allclose(
            np.einsum("nab,nbc->nac", tensors, d.inverse(pts)),
            np.tile(np.eye(2), (5, 1, 1)),
            atol=1e-15,
        )

    def test_scalar_must_be_positive(self):
        with pytest.raises(EllipticityError):
            ScalarDiffusivity(0.0)

    def test_anisotropic_symmetry_and_similarity(self):
        d = RotatedAnisotropicDiffusivity(theta=np.pi / 6.0)
        pts = random_points(20)
        tensors = d(pts)
        np.testing.assert_allclose(tensors, tensors.transpose(0, 2, 1), atol=1e-15)
        lo, hi = d.eigenvalues(pts)
        computed = np.linalg.eigvalsh(tensors)
        np.testing.assert_allclose(computed[:, 0], lo, rtol=1e-12)
        np.testing.assert_allclose(computed[:, 1], hi, rtol=1e-12)

    def test_anisotropic_origin_eigenvalues(self):
        d = RotatedAnisotropicDiffusivity(theta=np.pi / 6.0, w0=1.0, w1=1e-3, w2=1e-3)
        lo, hi = d.eigenvalues(np.array([[0.0, 0.0]]))
        assert lo[0] == pytest.approx(2e-9, rel=1e-12)
        assert hi[0] == pytest.approx(2e-6, rel=1e-12)
        assert hi[0] / lo[0] == pytest.approx(1e3, rel=1e-12)

    def test_anisotropic_divergence_vs_fd(self):
        d = RotatedAnisotropicDiffusivity(theta=np.pi / 6.0, w0=2.0, w1=0.3, w2=0.1)
        pts = random_points(25)
        h = 1e-6
        fd = np.zeros((len(pts), 2))
        for b in range(2):
            step = np.zeros_like(pts)
            step[:, b] = h
            fd += (d(pts + step)[:, :, b] - d(pts - step)[:, :, b]) / (2 * h)
        np.testing.assert_allclose(d.divergence(pts), fd, atol=1e-7)

    def test_anisotropic_inverse(self):
        d = RotatedAnisotropicDiffusivity(theta=0.7, w0=1.0, w1=0.5, w2=0.2)
        pts = random_points(10)
        prod = np.einsum("nab,nbc->nac", d(pts), d.inverse(pts))
        np.testing.assert_allclose(prod, np.tile(np.eye(2), (10, 1, 1)), atol=1e-10)

    def test_anisotropic_requires_positive_weights(self):
        with pytest.raises(EllipticityError):
            RotatedAnisotropicDiffusivity(theta=0.0, w0=-1.0)


class TestWeights:
    def test_type1_identity(self):
        d = ScalarDiffusivity(1e-2)
        pts = random_points(4)
        a2, b2 = weight_arrays("type1", d(pts), np.array([0.0, 1.0, 2.0, 3.0]))
        np.testing.assert_allclose(a2, np.tile(np.eye(2), (4, 1, 1)))
        np.testing.assert_allclose(b2, 1.0)

    def test_type2_inverts_diffusivity_and_alpha(self):
        d = RotatedAnisotropicDiffusivity(theta=0.3, w0=1.0, w1=0.4, w2=0.5)
        pts = random_points(4)
        tensors = d(pts)
        a2, b2 = weight_arrays("type2", tensors, np.array([4.0, 0.0, 0.25, 2.0]))
        np.testing.assert_allclose(
            np.einsum("nab,nbc->nac", a2, tensors),
            np.tile(np.eye(2), (4, 1, 1)),
            atol=1e-12,
        )
        np.testing.assert_allclose(b2, [0.25, 1.0, 4.0, 0.5])

    def test_unknown_scheme(self):
        with pytest.raises(ConfigurationError):
            weight_arrays("type3", ScalarDiffusivity(1.0)(random_points(1)), np.zeros(1))


class TestProblem:
    def make(self, **kw):
        kw.setdefault("velocity", ConstantVelocity([1.0, 0.0]))
        kw.setdefault("diffusivity", ScalarDiffusivity(1e-2))
        return Problem(**kw)

    def test_defaults(self):
        p = self.make()
        pts = random_points(3)
        np.testing.assert_allclose(p.alpha(pts), 0.0)
        np.testing.assert_allclose(p.source(pts), 0.0)
        np.testing.assert_allclose(p.neumann(pts, pts), 0.0)

    def test_weight_validation(self):
        with pytest.raises(ConfigurationError):
            self.make(weight="type-9")

    def test_dirichlet_first_match_wins(self):
        coords = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.5, 0.5]])
        p = self.make(
            dirichlet=[
                DirichletBC(
                    where=lambda c: c[:, 0] < 1e-12,
                    value=lambda c: np.ones(len(c)),
                ),
                DirichletBC(
                    where=lambda c: c[:, 1] < 1e-12,
                    value=lambda c: np.zeros(len(c)),
                ),
            ]
        )
        nodes, values = p.dirichlet_nodes(coords)
        np.testing.assert_array_equal(nodes, [0, 1, 2])
        # the corner (0, 0) hits the first patch and keeps its value 1
        np.testing.assert_allclose(values, [1.0, 0.0, 1.0])

    def test_assumption_check_warns_on_negative_balance(self):
        class Contracting(ConstantVelocity):
            def divergence(self, pts, t=0.0):
                return np.full(np.atleast_2d(pts).shape[0], -2.0)

        p = self.make(velocity=Contracting([1.0, 0.0]), alpha=constant_scalar(1.0))
        with pytest.warns(RuntimeWarning):
            full, half = check_assumptions(p, random_points(5))
        assert full == pytest.approx(-1.0)
        assert half == pytest.approx(0.0)

    def test_assumption_check_quiet_when_satisfied(self):
        import warnings

        p = self.make(alpha=constant_scalar(1.0))
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            check_assumptions(p, random_points(5))


class TestRegistries:
    def test_build_velocity(self):
        v = build_velocity({"kind": "cellular", "l_cell": 0.5})
        assert isinstance(v, CellularVelocity)
        assert v.l_cell == 0.5

    def test_build_diffusivity(self):
        d = build_diffusivity({"kind": "scalar", "value": 1e-2, "dim": 2})
        assert isinstance(d, ScalarDiffusivity)

    def test_unknown_kind(self):
        with pytest.raises(ConfigurationError):
            build_velocity({"kind": "warp"})
        with pytest.raises(ConfigurationError):
            build_diffusivity({"kind": "warp"})

    def test_bad_parameters(self):
        with pytest.raises(ConfigurationError):
            build_velocity({"kind": "cellular", "spin": 3.0})
