"""Named, fully resolved benchmark configurations.

Each factory returns a PresetCase bundling mesh, problem data, formulation
choices, and stabilization constants. Large studies ship both their
full-scale form and a small "desk" variant that runs in seconds; the desk
variants are the ones exercised by the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .analysis import manufactured_problem
from .errors import ConfigurationError
from .mesh import generate_structured_mesh
from .physics import (
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
)
from .reactions import ReactionSystem, SpeciesData, Stoichiometry
from .solver import TransientConfig

__all__ = ["PresetCase", "PRESETS", "build_preset", "preset_names"]


@dataclass
class PresetCase:
    """One runnable benchmark: data plus solver settings."""

    name: str
    mode: str  # "solve" | "bimolecular" | "converge" | "demo"
    description: str
    mesh: Optional[object] = None
    problem: Optional[object] = None
    system: Optional[object] = None
    exact: Optional[object] = None
    formulation: str = "nssd"
    constraints: str = "none"
    stab: Optional[dict] = None
    transient: Optional[TransientConfig] = None
    seeds: tuple = ()
    kind: str = "quad4"
    demo_params: dict = field(default_factory=dict)
    expected: dict = field(default_factory=dict)


def _edge(side, tol=1e-12):
    """Planar boundary predicate factory for axis-aligned rectangles."""

    def where(coords, side=side):
        axis, cut, sense = side
        if sense > 0:
            return coords[:, axis] > cut - tol
        return coords[:, axis] < cut + tol

    return where


def _const(value):
    return lambda coords, t=0.0: np.full(len(np.atleast_2d(coords)), float(value))


def academic_1d(nelem=11, velocity=1.0, diffusivity=1.0 / 150.0, source=1.0):
    """Oscillating 1D Galerkin system and its bounded re-solve."""
    return PresetCase(
        name="academic-1d",
        mode="demo",
        description=(
            "1D advection-diffusion on a coarse mesh: conditioning of the "
            "Galerkin system vs its normal equations, oscillation counts, "
            "and a non-negativity-constrained re-solve"
        ),
        kind="line2",
        demo_params={
            "nelem": int(nelem),
            "velocity": float(velocity),
            "diffusivity": float(diffusivity),
            "source": float(source),
        },
        expected={"pe_h": velocity / (diffusivity * nelem * 2.0) * 1.0},
    )


def hconv(seeds=(11, 21, 41, 81), diffusivity=1e-2, kind="quad4"):
    """Mesh-refinement error study on the boundary-layer manufactured case."""
    problem, exact = manufactured_problem(diffusivity)
    return PresetCase(
        name="hconv",
        mode="converge",
        description=(
            "h-convergence of the stabilized formulation against a "
            "manufactured outflow-layer solution on the unit square"
        ),
        problem=problem,
        exact=exact,
        seeds=tuple(int(s) for s in seeds),
        kind=kind,
        formulation="nssd",
        constraints="none",
        stab={"delta0": 0.01, "tau0": 0.01},
    )


def hconv_desk(seeds=(11, 21, 41), diffusivity=0.1, kind="quad4"):
    """Reduced-seed variant in the layer-resolved regime."""
    case = hconv(seeds=seeds, diffusivity=diffusivity, kind=kind)
    case.name = "hconv-desk"
    return case


def thermal_layer(xseed=41, yseed=21, formulation="nssd", constraints="lsb+nn"):
    """Sheared transport past a hot wall on [0,1] x [0,0.5] at Pe_h = 125."""
    mesh = generate_structured_mesh(((0.0, 1.0), (0.0, 0.5)), xseed, yseed)
    problem = Problem(
        velocity=ShearVelocity(2.0),
        diffusivity=ScalarDiffusivity(1e-4),
        dirichlet=[
            DirichletBC(where=_edge((0, 0.0, -1)), value=_const(1.0)),
            DirichletBC(
                where=_edge((0, 1.0, +1)),
                value=lambda coords: 2.0 * coords[:, 1],
            ),
            DirichletBC(where=_edge((1, 0.0, -1)), value=_const(0.0)),
            DirichletBC(where=_edge((1, 0.5, +1)), value=_const(1.0)),
        ],
    )
    return PresetCase(
        name="thermal-layer",
        mode="solve",
        description=(
            "thermal boundary layer: maximum-principle stress test with "
            "a steep outflow gradient under a linear shear velocity"
        ),
        mesh=mesh,
        problem=problem,
        formulation=formulation,
        constraints=constraints,
        stab={"delta0": 0.01, "tau0": 0.001},
        expected={"bounds": (0.0, 1.0), "pe_edge": 125.0},
    )


# Streamline-fitted stabilization for the 1D reactive benchmarks: the
# flux-correction constant delta0 is matched to the optimal upwind
# diffusion vh/2*coth(Pe_h) - D for the two stated velocities.
_BIMOLECULAR_STAB = {
    0.25: {"delta0": 0.04, "tau0": 0.08},
    1.0: {"delta0": 0.0121, "tau0": 0.083},
}


def _fitted_stab(velocity, diffusivity, h):
    key = round(float(velocity), 6)
    if key in _BIMOLECULAR_STAB:
        return dict(_BIMOLECULAR_STAB[key])
    pe = abs(velocity) * h / (2.0 * diffusivity)
    if pe == 0.0:
        return {"delta0": 0.0, "tau0": 0.0}
    added = abs(velocity) * h / (2.0 * np.tanh(pe)) - diffusivity
    delta0 = max(added * diffusivity / (h * velocity) ** 2, 0.0)
    return {"delta0": delta0, "tau0": 2.0 * delta0}


def _line_species(feed_a, feed_b, source_b=None):
    left = _edge((0, 0.0, -1))
    right = _edge((0, 1.0, +1))
    mk = lambda l, r: [
        DirichletBC(where=left, value=_const(l)),
        DirichletBC(where=right, value=_const(r)),
    ]
    return (
        SpeciesData(dirichlet=mk(*feed_a)),
        SpeciesData(dirichlet=mk(*feed_b), source=source_b),
        SpeciesData(dirichlet=mk(0.0, 0.0)),
    )


def bimolecular_1d(case=1, velocity=0.25, diffusivity=2.5e-3, xseed=11):
    """Fast bimolecular reaction on a line with closed-form invariants.

    Case 1 feeds A at the inlet against a volumetrically generated B;
    case 2 feeds A and B from opposite ends.
    """
    if case not in (1, 2):
        raise ConfigurationError("case must be 1 or 2")
    mesh = generate_structured_mesh((0.0, 1.0), xseed, kind="line2")
    if case == 1:
        species = _line_species((1.0, 0.0), (0.0, 0.0), source_b=_const(1.0))
    else:
        species = _line_species((1.0, 0.0), (0.0, 1.0))
    system = ReactionSystem(
        velocity=ConstantVelocity([velocity]),
        diffusivity=ScalarDiffusivity(diffusivity, dim=1),
        stoich=Stoichiometry(2.0, 1.0, 1.0),
        species_a=species[0],
        species_b=species[1],
        species_c=species[2],
    )
    h = 1.0 / (xseed - 1)
    return PresetCase(
        name=f"bimolecular-1d-case{case}",
        mode="bimolecular",
        description=(
            "1D transport-limited bimolecular reaction against the exact "
            "invariant profiles; the unconstrained primitive solve drives "
            "the product negative on coarse meshes"
        ),
        mesh=mesh,
        system=system,
        formulation="nssd",
        constraints="none",
        stab=_fitted_stab(velocity, diffusivity, h),
        expected={"pe_h": abs(velocity) * h / (2.0 * diffusivity)},
    )


def _plume_diffusivity(variant):
    if variant == "type1":
        return ScalarDiffusivity(1e-2)
    if variant == "type2":
        return RotatedAnisotropicDiffusivity(np.pi / 6.0, w0=1.0, w1=1e-3, w2=1e-3)
    raise ConfigurationError("plume diffusivity variant must be type1 or type2")


def plume(variant="type1", xseed=101, yseed=None):
    """Steady reactive plume fed from the left edge of a 2:1 tank."""
    if yseed is None:
        yseed = (int(xseed) + 1) // 2
    mesh = generate_structured_mesh(((0.0, 2.0), (0.0, 1.0)), xseed, yseed)
    left = _edge((0, 0.0, -1))
    boundary = lambda coords: (
        (coords[:, 0] < 1e-12)
        | (coords[:, 0] > 2.0 - 1e-12)
        | (coords[:, 1] < 1e-12)
        | (coords[:, 1] > 1.0 - 1e-12)
    )
    feed = [
        DirichletBC(where=left, value=_const(1.0)),
        DirichletBC(where=boundary, value=_const(0.0)),
    ]
    clean = [DirichletBC(where=boundary, value=_const(0.0))]
    system = ReactionSystem(
        velocity=MultimodeStreamVelocity(
            amplitudes=(0.08, 0.02, 0.01),
            p_modes=(4.0, 5.0, 10.0),
            q_modes=(1.0, 5.0, 10.0),
            lx=2.0,
            ly=1.0,
        ),
        diffusivity=_plume_diffusivity(variant),
        stoich=Stoichiometry(1.0, 1.0, 1.0),
        species_a=SpeciesData(dirichlet=list(feed)),
        species_b=SpeciesData(dirichlet=list(feed)),
        species_c=SpeciesData(dirichlet=list(clean)),
    )
    return PresetCase(
        name=f"plume-{variant}",
        mode="bimolecular",
        description=(
            "steady plume in a multimode recirculating flow; reactants "
            "enter together on the left and the product spreads downstream"
        ),
        mesh=mesh,
        system=system,
        formulation="nssd",
        constraints="lsb+nn",
        stab={"delta0": 1e-3, "tau0": 1e-3, "delta2": 1e-4, "tau2": 1e-4},
    )


def plume_desk(variant="type1", xseed=51, yseed=None):
    case = plume(variant=variant, xseed=xseed, yseed=yseed)
    case.name = f"plume-desk-{variant}"
    return case


def _slug_mask(pts):
    centers = ((0.25, 0.75), (0.75, 0.25))
    inside = np.zeros(len(pts), dtype=bool)
    for cx, cy in centers:
        inside |= (np.abs(pts[:, 0] - cx) <= 0.125) & (
            np.abs(pts[:, 1] - cy) <= 0.125
        )
    return inside


def vortex_mix(chaotic=False, xseed=121, yseed=None, dt=0.1, t_final=5.0):
    """Closed-tank stirred mixing of two initially separated reactants."""
    yseed = int(xseed) if yseed is None else yseed
    mesh = generate_structured_mesh(((0.0, 1.0), (0.0, 1.0)), xseed, yseed)
    velocity = ChaoticVortexVelocity(period=0.8, v0=1.0) if chaotic else VortexVelocity()
    system = ReactionSystem(
        velocity=velocity,
        diffusivity=ScalarDiffusivity(1e-2),
        stoich=Stoichiometry(1.0, 1.0, 1.0),
        species_a=SpeciesData(initial=lambda pts: np.where(_slug_mask(pts), 8.0, 0.0)),
        species_b=SpeciesData(initial=lambda pts: np.where(_slug_mask(pts), 0.0, 1.5)),
        species_c=SpeciesData(),
    )
    name = "vortex-mix-chaotic" if chaotic else "vortex-mix"
    return PresetCase(
        name=name,
        mode="bimolecular",
        description=(
            "transient vortex-stirred mixing in a zero-flux tank; the two "
            "reactant slugs wind around the vortices and form product at "
            "their interface"
        ),
        mesh=mesh,
        system=system,
        formulation="nssd",
        constraints="lsb+nn",
        stab={"delta0": 1e-3, "tau0": 1e-3, "delta1": 1e-4, "tau1": 1e-4},
        transient=TransientConfig(dt=dt, t_final=t_final),
    )


def vortex_mix_desk(chaotic=False, xseed=41, yseed=None, dt=0.1, t_final=1.0):
    case = vortex_mix(
        chaotic=chaotic, xseed=xseed, yseed=yseed, dt=dt, t_final=t_final
    )
    case.name = "vortex-mix-desk-chaotic" if chaotic else "vortex-mix-desk"
    return case


def cellular(l_cell=0.5, xseed=61, yseed=241, dt=0.1, t_final=5.0):
    """Layered reactants stirred by an array of counter-rotating cells."""
    mesh = generate_structured_mesh(((0.0, 1.0), (0.0, 0.5)), xseed, yseed)
    system = ReactionSystem(
        velocity=CellularVelocity(l_cell),
        diffusivity=ScalarDiffusivity(5e-3),
        stoich=Stoichiometry(1.0, 1.0, 1.0),
        species_a=SpeciesData(
            initial=lambda pts: (pts[:, 1] < 0.25).astype(float)
        ),
        species_b=SpeciesData(
            initial=lambda pts: (pts[:, 1] >= 0.25).astype(float)
        ),
        species_c=SpeciesData(),
    )
    return PresetCase(
        name="cellular",
        mode="bimolecular",
        description=(
            "transient mixing of two stacked reactant layers in a cellular "
            "flow whose strongly non-uniform velocity stresses the "
            "transport scheme"
        ),
        mesh=mesh,
        system=system,
        formulation="nssd",
        constraints="lsb+nn",
        stab={"delta0": 1e-3, "tau0": 1e-3, "delta1": 1e-4, "tau1": 1e-4},
        transient=TransientConfig(dt=dt, t_final=t_final),
        expected={"bounds": (0.0, 1.0), "symmetry_line": 0.25},
    )


def cellular_desk(l_cell=0.5, xseed=21, yseed=41, dt=0.1, t_final=0.5):
    case = cellular(l_cell=l_cell, xseed=xseed, yseed=yseed, dt=dt, t_final=t_final)
    case.name = "cellular-desk"
    return case


PRESETS = {
    "academic-1d": academic_1d,
    "hconv": hconv,
    "hconv-desk": hconv_desk,
    "thermal-layer": thermal_layer,
    "bimolecular-1d-case1": lambda **kw: bimolecular_1d(case=1, **kw),
    "bimolecular-1d-case2": lambda **kw: bimolecular_1d(case=2, **kw),
    "plume-type1": lambda **kw: plume(variant="type1", **kw),
    "plume-type2": lambda **kw: plume(variant="type2", **kw),
    "plume-desk": plume_desk,
    "vortex-mix": vortex_mix,
    "vortex-mix-chaotic": lambda **kw: vortex_mix(chaotic=True, **kw),
    "vortex-mix-desk": vortex_mix_desk,
    "cellular": cellular,
    "cellular-desk": cellular_desk,
}


def preset_names():
    return sorted(PRESETS)


def build_preset(name, **overrides):
    """Instantiate a preset by name, forwarding keyword overrides."""
    if name not in PRESETS:
        raise ConfigurationError(
            f"unknown preset {name!r}; available: {', '.join(preset_names())}"
        )
    overrides = {k: v for k, v in overrides.items() if v is not None}
    try:
        return PRESETS[name](**overrides)
    except TypeError as exc:
        raise ConfigurationError(f"bad overrides for preset {name!r}: {exc}")
