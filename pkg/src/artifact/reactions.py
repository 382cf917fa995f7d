"""Fast irreversible bimolecular reaction workflow.

For n_A A + n_B B -> n_C C in the instantaneous-kinetics limit, the linear
invariants c_F = c_A + (n_A/n_C) c_C and c_G = c_B + (n_B/n_C) c_C satisfy
reaction-free transport problems. The workflow solves those two problems,
recovers the species nodally (A and B cannot coexist), and evaluates mixing
diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .analysis import integrate_field
from .errors import ConfigurationError
from .physics import DirichletBC, Problem
from .solver import solve_steady, solve_transient

__all__ = [
    "Stoichiometry",
    "SpeciesData",
    "ReactionSystem",
    "MixingDiagnostics",
    "SpeciesConcentrations",
    "BimolecularResult",
    "transform_to_invariants",
    "recover_species",
    "second_moment",
    "reference_ordinate",
    "analytical_invariants_1d",
    "run_bimolecular",
    "write_diagnostics_csv",
]


@dataclass(frozen=True)
class Stoichiometry:
    """Positive coefficients of n_A A + n_B B -> n_C C."""

    n_a: float = 1.0
    n_b: float = 1.0
    n_c: float = 1.0

    def __post_init__(self):
        if min(self.n_a, self.n_b, self.n_c) <= 0:
            raise ConfigurationError("stoichiometric coefficients must be positive")


@dataclass
class SpeciesData:
    """Per-species problem data; transport coefficients are shared.

    ``velocity``/``diffusivity`` may restate the shared objects (identity
    check only) — any other value is rejected, because the invariant
    decoupling requires every species to ride the same transport operator.
    """

    source: Optional[object] = None
    dirichlet: list = field(default_factory=list)
    neumann_value: Optional[object] = None
    initial: Optional[object] = None
    velocity: Optional[object] = None
    diffusivity: Optional[object] = None


@dataclass
class ReactionSystem:
    velocity: object
    diffusivity: object
    stoich: Stoichiometry
    species_a: SpeciesData
    species_b: SpeciesData
    species_c: SpeciesData
    alpha: Optional[object] = None
    weight: str = "type1"


def _check_shared_transport(system):
    for name, sp in (
        ("A", system.species_a),
        ("B", system.species_b),
        ("C", system.species_c),
    ):
        if sp.velocity is not None and sp.velocity is not system.velocity:
            raise ConfigurationError(f"species {name} does not share the velocity")
        if sp.diffusivity is not None and sp.diffusivity is not system.diffusivity:
            raise ConfigurationError(f"species {name} does not share the diffusivity")


def _first_match(bcs, coords):
    """First-match-wins evaluation of a Dirichlet patch list."""
    coords = np.atleast_2d(coords)
    mask = np.zeros(len(coords), dtype=bool)
    vals = np.zeros(len(coords))
    for bc in bcs:
        hit = np.asarray(bc.where(coords), dtype=bool) & ~mask
        if hit.any():
            vals[hit] = np.asarray(bc.value(coords[hit]), dtype=float)
            mask |= hit
    return mask, vals


def _combine_dirichlet(bcs1, bcs2, w):
    """Patches prescribing value1 + w*value2 on the union region."""
    if not bcs1 and not bcs2:
        return []

    def where(coords):
        m1, _ = _first_match(bcs1, coords)
        m2, _ = _first_match(bcs2, coords)
        return m1 | m2

    def value(coords):
        m1, v1 = _first_match(bcs1, coords)
        m2, v2 = _first_match(bcs2, coords)
        return np.where(m1, v1, 0.0) + w * np.where(m2, v2, 0.0)

    return [DirichletBC(where=where, value=value)]


def _combine_scalar(f1, f2, w):
    if f1 is None and f2 is None:
        return None

    def combined(pts, t=0.0):
        pts = np.atleast_2d(pts)
        out = np.zeros(len(pts))
        if f1 is not None:
            out = out + np.asarray(f1(pts, t), dtype=float)
        if f2 is not None:
            out = out + w * np.asarray(f2(pts, t), dtype=float)
        return out

    return combined


def _combine_neumann(h1, h2, w):
    if h1 is None and h2 is None:
        return None

    def combined(pts, normals, t=0.0):
        pts = np.atleast_2d(pts)
        out = np.zeros(len(pts))
        if h1 is not None:
            out = out + np.asarray(h1(pts, normals, t), dtype=float)
        if h2 is not None:
            out = out + w * np.asarray(h2(pts, normals, t), dtype=float)
        return out

    return combined


def _combine_initial(i1, i2, w):
    if i1 is None and i2 is None:
        return None

    def evaluate(init, pts):
        if callable(init):
            return np.asarray(init(pts), dtype=float)
        return np.asarray(init, dtype=float)

    def combined(pts):
        pts = np.atleast_2d(pts)
        out = np.zeros(len(pts))
        if i1 is not None:
            out = out + evaluate(i1, pts)
        if i2 is not None:
            out = out + w * evaluate(i2, pts)
        return out

    return combined


def transform_to_invariants(system):
    """Two reaction-free transport problems for c_F and c_G.

    All species data (sources, boundary values, flux data, initial states)
    combine through the same linear map as the concentrations.
    """
    _check_shared_transport(system)
    n = system.stoich
    pairs = (
        (system.species_a, n.n_a / n.n_c),
        (system.species_b, n.n_b / n.n_c),
    )
    problems = []
    for primary, w in pairs:
        other = system.species_c
        problems.append(
            Problem(
                velocity=system.velocity,
                diffusivity=system.diffusivity,
                alpha=system.alpha,
                source=_combine_scalar(primary.source, other.source, w),
                dirichlet=_combine_dirichlet(primary.dirichlet, other.dirichlet, w),
                neumann_value=_combine_neumann(
                    primary.neumann_value, other.neumann_value, w
                ),
                initial=_combine_initial(primary.initial, other.initial, w),
                weight=system.weight,
            )
        )
    return problems[0], problems[1]


def recover_species(c_f, c_g, stoich):
    """Nodal species from invariant fields; A and B cannot coexist."""
    c_f = np.asarray(c_f, dtype=float)
    c_g = np.asarray(c_g, dtype=float)
    n = stoich
    c_a = np.maximum(c_f - (n.n_a / n.n_b) * c_g, 0.0)
    c_b = np.maximum(c_g - (n.n_b / n.n_a) * c_f, 0.0)
    c_c = (n.n_c / n.n_a) * (c_f - c_a)
    return c_a, c_b, c_c


def reference_ordinate(mesh, c_c, threshold=1e-6):
    """Ordinate of the first node (smallest y, ties by x) carrying product.

    Returns None when the field has no positive values.
    """
    c_c = np.asarray(c_c, dtype=float)
    peak = c_c.max(initial=0.0)
    if peak <= 0.0:
        return None
    active = c_c > threshold * peak
    coords = mesh.coords
    axis = 1 if mesh.dim > 1 else 0
    order = np.lexsort((coords[:, 0], coords[:, axis]))
    ordered = order[active[order]]
    return float(coords[ordered[0], axis])


@dataclass(frozen=True)
class MixingDiagnostics:
    """Second-moment spread of the product plus per-species summaries."""

    time: float
    theta2: Optional[float]
    y0: Optional[float]
    negative: bool
    means: dict
    ranges: dict


def second_moment(mesh, c_c, y0):
    """Position-weighted second moment of the product about the line y = y0.

    Returns (theta2, negative_flag); theta2 is None when the total product
    integrates to exactly zero. A negative ratio — possible only for
    mixed-sign fields — raises the flag.
    """
    axis = 1 if mesh.dim > 1 else 0
    numerator = integrate_field(
        mesh, c_c, weight=lambda pts: (pts[:, axis] - y0) ** 2
    )
    denominator = integrate_field(mesh, c_c)
    if denominator == 0.0:
        return None, False
    theta2 = numerator / denominator
    return theta2, theta2 < 0.0


@dataclass(frozen=True)
class SpeciesConcentrations:
    c_a: np.ndarray
    c_b: np.ndarray
    c_c: np.ndarray


@dataclass
class BimolecularResult:
    mesh: object
    stoich: Stoichiometry
    times: np.ndarray
    invariant_f: object
    invariant_g: object
    species: list
    diagnostics: list

    @property
    def final(self):
        return self.species[-1]


def _diagnose(mesh, species, time, y0):
    if y0 is None:
        theta2, negative = None, False
    else:
        theta2, negative = second_moment(mesh, species.c_c, y0)
    area = integrate_field(mesh, np.ones(mesh.nnodes))
    means = {
        name: integrate_field(mesh, vals) / area
        for name, vals in (("a", species.c_a), ("b", species.c_b), ("c", species.c_c))
    }
    ranges = {
        name: (float(vals.min()), float(vals.max()))
        for name, vals in (("a", species.c_a), ("b", species.c_b), ("c", species.c_c))
    }
    return MixingDiagnostics(
        time=time, theta2=theta2, y0=y0, negative=negative, means=means, ranges=ranges
    )


def run_bimolecular(
    mesh,
    system,
    formulation="nssd",
    constraints="none",
    stab=None,
    config=None,
    bounds=None,
    tol=None,
    y0=None,
):
    """Solve both invariant problems, recover species, attach diagnostics.

    ``config`` switches to transient stepping; otherwise both solves are
    steady. The moment reference y0 is located on the first snapshot that
    carries product and frozen for the remaining snapshots (override via
    the ``y0`` argument).
    """
    prob_f, prob_g = transform_to_invariants(system)
    kwargs = dict(formulation=formulation, constraints=constraints, stab=stab)
    if bounds is not None:
        kwargs["bounds"] = bounds
    if tol is not None:
        kwargs["tol"] = tol

    if config is None:
        res_f = solve_steady(mesh, prob_f, **kwargs)
        res_g = solve_steady(mesh, prob_g, **kwargs)
        times = np.array([0.0])
        snapshots = [(res_f.field.c, res_g.field.c)]
    else:
        res_f = solve_transient(mesh, prob_f, config=config, **kwargs)
        res_g = solve_transient(mesh, prob_g, config=config, **kwargs)
        times = np.array([f.time for f in res_f.fields])
        snapshots = [(ff.c, fg.c) for ff, fg in zip(res_f.fields, res_g.fields)]

    species = [
        SpeciesConcentrations(*recover_species(cf, cg, system.stoich))
        for cf, cg in snapshots
    ]
    if y0 is None:
        for snap in species:
            y0 = reference_ordinate(mesh, snap.c_c)
            if y0 is not None:
                break
    diagnostics = [
        _diagnose(mesh, snap, t, y0) for snap, t in zip(species, times)
    ]
    return BimolecularResult(
        mesh=mesh,
        stoich=system.stoich,
        times=times,
        invariant_f=res_f,
        invariant_g=res_g,
        species=species,
        diagnostics=diagnostics,
    )


def analytical_invariants_1d(case, v, d, f_g=1.0):
    """Closed-form invariant profiles on (0, 1) for the two 1D setups.

    Both share c_F(0)=1, c_F(1)=0. Case 1 adds a uniform source f_g to the
    G-problem with c_G = 0 at both ends; case 2 is source-free with
    c_G(1) = 1, so c_F + c_G = 1 everywhere. The exponential ramp
    (1 - e^{v x / D})/(1 - e^{v / D}) is evaluated in overflow-free form.
    """
    if case not in (1, 2):
        raise ConfigurationError("case must be 1 or 2")
    if d <= 0:
        raise ConfigurationError("diffusivity must be positive")
    if case == 1 and v == 0.0:
        raise ConfigurationError("case 1 needs nonzero velocity")
    s = v / d

    def ramp(x):
        x = np.asarray(x, dtype=float)
        if s == 0.0:
            return x.copy()
        if s > 0:
            em = np.exp(-s)
            return (em - np.exp(s * (x - 1.0))) / (em - 1.0)
        return (1.0 - np.exp(s * x)) / (1.0 - np.exp(s))

    def c_f(x):
        return 1.0 - ramp(x)

    if case == 1:
        def c_g(x):
            return (f_g / v) * (np.asarray(x, dtype=float) - ramp(x))
    else:
        def c_g(x):
            return ramp(x)

    return c_f, c_g


def write_diagnostics_csv(path, result):
    """Per-snapshot mixing table: moments, means, and field ranges."""
    header = [
        "t",
        "mean_a",
        "mean_b",
        "mean_c",
        "theta2",
        "y0",
        "negative_moment",
        "min_a",
        "max_a",
        "min_b",
        "max_b",
        "min_c",
        "max_c",
    ]
    lines = [",".join(header)]
    for diag in result.diagnostics:
        cells = [
            f"{diag.time:.12g}",
            f"{diag.means['a']:.12e}",
            f"{diag.means['b']:.12e}",
            f"{diag.means['c']:.12e}",
            "" if diag.theta2 is None else f"{diag.theta2:.12e}",
            "" if diag.y0 is None else f"{diag.y0:.12g}",
            str(int(diag.negative)),
        ]
        for name in ("a", "b", "c"):
            lo, hi = diag.ranges[name]
            cells += [f"{lo:.12e}", f"{hi:.12e}"]
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
