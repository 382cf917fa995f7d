"""Steady and transient drivers for the mixed least-squares formulations.

A steady solve assembles the requested formulation, eliminates Dirichlet
dofs, wraps the result as a QP whose constraint set is selected by name
(``none``, ``nn``, ``dmp``, ``lsb``, ``lsb+nn``, ``lsb+dmp``), and always
routes through the QP driver so every answer carries an optimality
certificate. Transient runs are backward Euler: each step is a steady
solve with the reaction coefficient shifted by 1/dt and the previous
concentration folded into the source, with stabilization parameters and
constraints recomputed every step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .assembly import (
    StabilizationParams,
    _sample,
    apply_dirichlet,
    assemble_system,
    compute_stabilization,
)
from .errors import ConfigurationError
from .qp import DEFAULT_TOL, QPProblem, solve_qp

__all__ = [
    "BalanceReport",
    "ConstraintMode",
    "Field",
    "SteadyResult",
    "TransientConfig",
    "TransientResult",
    "default_dmp_bounds",
    "solve_steady",
    "solve_transient",
]

_MODES = {
    "none": (False, "none"),
    "nn": (False, "nn"),
    "dmp": (False, "dmp"),
    "lsb": (True, "none"),
    "lsb+nn": (True, "nn"),
    "lsb+dmp": (True, "dmp"),
}


@dataclass(frozen=True)
class ConstraintMode:
    """Which constraints the QP enforces: balance rows and/or bounds."""

    balance: bool
    bounds: str  # "none" | "nn" | "dmp"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = "none" if name is None else str(name).strip().lower()
        if key not in _MODES:
            raise ConfigurationError(
                f"unknown constraint mode {name!r}; pick one of {sorted(_MODES)}"
            )
        balance, bounds = _MODES[key]
        return cls(balance=balance, bounds=bounds)

    @property
    def name(self):
        if self.balance:
            return "lsb" if self.bounds == "none" else f"lsb+{self.bounds}"
        return self.bounds


@dataclass
class Field:
    """Nodal concentration and flux on a mesh at one time level."""

    mesh: object
    c: np.ndarray
    q: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.q = np.asarray(self.q, dtype=float).reshape(
            self.mesh.nnodes, self.mesh.dim
        )
        if self.c.shape != (self.mesh.nnodes,):
            raise ConfigurationError("concentration size does not match mesh")
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.q))):
            raise ConfigurationError("field contains non-finite values")

    @property
    def q_flat(self):
        return self.q.reshape(-1)


@dataclass(frozen=True)
class BalanceReport:
    """Per-element species balance residuals of a solved field."""

    element_residuals: np.ndarray

    @property
    def max_abs(self):
        return float(np.max(np.abs(self.element_residuals)))

    @property
    def global_abs(self):
        # element rows telescope across interior edges, so their sum is
        # the whole-domain balance residual
        return float(abs(np.sum(self.element_residuals)))


@dataclass
class SteadyResult:
    field: Field
    certificate: object
    balance: BalanceReport
    mode: ConstraintMode
    objective: float


@dataclass
class TransientConfig:
    """Backward Euler stepping: fixed dt up to t_final."""

    dt: float
    t_final: float
    initial: Optional[object] = None  # callable(points) or nodal array

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ConfigurationError("time step must be positive")
        if self.t_final < self.dt:
            raise ConfigurationError("final time earlier than first step")

    def times(self):
        nsteps = int(round(self.t_final / self.dt))
        return self.dt * np.arange(1, nsteps + 1)


@dataclass
class TransientResult:
    fields: list
    balances: list
    certificates: list

    def __iter__(self):
        return iter(self.fields)

    def __len__(self):
        return len(self.fields)


def default_dmp_bounds(problem, mesh, initial=None):
    """Bound pair from the problem data: Dirichlet values and initial field."""
    _, vals = problem.dirichlet_nodes(mesh.coords)
    data = [np.asarray(vals, dtype=float).ravel()]
    if initial is not None:
        data.append(np.asarray(initial, dtype=float).ravel())
    data = np.concatenate([d for d in data if d.size])
    if data.size == 0:
        raise ConfigurationError(
            "maximum-principle bounds need Dirichlet or initial data"
        )
    return min(0.0, float(data.min())), float(data.max())


def _resolve_stabilization(mesh, problem, formulation, stab, t, alpha_shift):
    form = str(formulation).strip().lower()
    if form == "primitive":
        return None
    if form != "nssd":
        raise ConfigurationError(
            f"unknown formulation {formulation!r}; pick 'primitive' or 'nssd'"
        )
    if stab is None:
        raise ConfigurationError(
            "the stabilized formulation needs stabilization constants"
        )
    if isinstance(stab, StabilizationParams) and stab.delta_e.size == mesh.nele:
        return stab  # already sized to this mesh: use as given
    return compute_stabilization(mesh, problem, stab, t=t, alpha_shift=alpha_shift)


def solve_steady(
    mesh,
    problem,
    formulation="nssd",
    constraints="none",
    stab=None,
    bounds=None,
    tol=DEFAULT_TOL,
    x0=None,
    t=0.0,
    alpha_shift=0.0,
    nodal_source=None,
    initial=None,
):
    """One constrained least-squares solve; returns field + certificate.

    ``stab`` is a constants dict (or precomputed parameters) for the
    stabilized formulation; ``bounds`` overrides the data-derived bound
    pair in ``dmp`` modes; ``initial`` feeds the default bound data and
    ``alpha_shift``/``nodal_source`` fold one implicit time step into the
    steady form.
    """
    mode = ConstraintMode.parse(constraints)
    stab_params = _resolve_stabilization(
        mesh, problem, formulation, stab, t, alpha_shift
    )

    fixed, vals = problem.dirichlet_nodes(mesh.coords)
    if fixed.size == 0 and alpha_shift == 0.0:
        alpha_nodal = _sample(problem.alpha, mesh.coords, t, 0)
        if not np.any(alpha_nodal > 0.0):
            raise ConfigurationError(
                "ill-posed: no concentration boundary and no reaction term"
            )

    system = assemble_system(
        mesh,
        problem,
        stab=stab_params,
        t=t,
        alpha_shift=alpha_shift,
        nodal_source=nodal_source,
    )
    ac_full, aq_full, bf_full = system.ac, system.aq, system.bf
    red = apply_dirichlet(system, fixed, vals)

    lower = upper = None
    if mode.bounds == "nn":
        lower = 0.0
    elif mode.bounds == "dmp":
        if bounds is None:
            bounds = default_dmp_bounds(problem, mesh, initial=initial)
        lower, upper = bounds

    qp = QPProblem.from_system(
        red,
        equalities=mode.balance,
        lower=lower,
        upper=upper,
        tol=tol,
    )
    x_start = None
    if x0 is not None:
        mask = np.ones(red.nnodes + red.nqdofs, dtype=bool)
        mask[red.fixed_nodes] = False
        x_start = np.asarray(x0, dtype=float)[mask]
    sol = solve_qp(qp, x0=x_start)

    nfree = red.ncdofs
    c_full = red.expand_concentration(sol.x[:nfree])
    q = sol.x[nfree:].reshape(mesh.nnodes, mesh.dim)
    fld = Field(mesh=mesh, c=c_full, q=q, time=t)
    resid = ac_full @ c_full + aq_full @ fld.q_flat - bf_full
    return SteadyResult(
        field=fld,
        certificate=sol,
        balance=BalanceReport(element_residuals=resid),
        mode=mode,
        objective=sol.objective + red.c0,
    )


def _initial_concentration(mesh, problem, config):
    init = config.initial if config.initial is not None else problem.initial
    if init is None:
        raise ConfigurationError("transient run needs an initial condition")
    if callable(init):
        c0 = np.asarray(init(mesh.coords), dtype=float).ravel()
    else:
        c0 = np.asarray(init, dtype=float).ravel()
    if c0.shape != (mesh.nnodes,):
        raise ConfigurationError("initial condition size does not match mesh")
    return c0


def solve_transient(
    mesh,
    problem,
    formulation="nssd",
    constraints="none",
    config=None,
    stab=None,
    bounds=None,
    tol=DEFAULT_TOL,
):
    """Backward Euler march; each level re-solves the shifted steady form.

    The effective reaction is alpha + 1/dt and the previous concentration
    enters the source as c_prev/dt; stabilization parameters are rebuilt
    from the effective reaction at every level.
    """
    if config is None:
        raise ConfigurationError("transient run needs a stepping config")
    mode = ConstraintMode.parse(constraints)
    c0 = _initial_concentration(mesh, problem, config)
    if mode.bounds == "dmp" and bounds is None:
        bounds = default_dmp_bounds(problem, mesh, initial=c0)

    fields = [Field(mesh=mesh, c=c0, q=np.zeros((mesh.nnodes, mesh.dim)), time=0.0)]
    balances = []
    certificates = []
    inv_dt = 1.0 / config.dt
    x_prev = None
    for t_k in config.times():
        step = solve_steady(
            mesh,
            problem,
            formulation=formulation,
            constraints=mode,
            stab=stab,
            bounds=bounds,
            tol=tol,
            x0=x_prev,
            t=t_k,
            alpha_shift=inv_dt,
            nodal_source=fields[-1].c * inv_dt,
            initial=c0,
        )
        fields.append(step.field)
        balances.append(step.balance)
        certificates.append(step.certificate)
        x_prev = np.concatenate([step.field.c, step.field.q_flat])
    return TransientResult(
        fields=fields, balances=balances, certificates=certificates
    )
