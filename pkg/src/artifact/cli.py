"""Command-line entry point: configuration ingestion, runs, and exports.

Configuration comes from three layers with increasing precedence: built-in
defaults, an INI-style config file (``--config``), and command-line flags.
Unknown config sections or keys are rejected by name. Heavy numerical
imports are deferred into the subcommands so that ``--threads`` can cap the
BLAS pools before any numeric library starts.
"""

from __future__ import annotations

import configparser
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import click

EXIT_OK = 0
EXIT_CERTIFICATE = 2
EXIT_CONFIG = 3

_SECTION_KEYS = {
    "run": {"preset", "formulation", "constraints", "tolerance"},
    "mesh": {"xseed", "yseed", "kind"},
    "transient": {"dt", "t_final"},
    "stabilization": {"delta0", "delta1", "delta2", "tau0", "tau1", "tau2"},
    "problem": {"domain", "velocity", "diffusivity", "alpha", "source", "dirichlet"},
    "output": {"directory", "formats"},
}

_FORMATS = {"vtk", "csv", "json"}


@dataclass
class RunConfig:
    """Resolved run settings; None means "use the preset's own value"."""

    preset: str = None
    formulation: str = None
    constraints: str = None
    tolerance: float = None
    xseed: int = None
    yseed: int = None
    kind: str = None
    dt: float = None
    t_final: float = None
    stab: dict = field(default_factory=dict)
    problem_spec: dict = field(default_factory=dict)
    out_dir: Path = Path(".")
    formats: set = field(default_factory=lambda: set(_FORMATS))

    def describe(self):
        rows = []
        for name in (
            "preset",
            "formulation",
            "constraints",
            "tolerance",
            "xseed",
            "yseed",
            "kind",
            "dt",
            "t_final",
        ):
            value = getattr(self, name)
            if value is not None:
                rows.append(f"  {name} = {value}")
        if self.stab:
            rows.append("  stabilization = " + ", ".join(
                f"{k}={v}" for k, v in sorted(self.stab.items())
            ))
        for key, value in sorted(self.problem_spec.items()):
            rows.append(f"  problem.{key} = {value}")
        rows.append(f"  out = {self.out_dir}")
        rows.append("  formats = " + ",".join(sorted(self.formats)))
        return "\n".join(rows)


def _fail_config(message):
    click.echo(f"configuration error: {message}", err=True)
    sys.exit(EXIT_CONFIG)


def _load_config_file(path):
    from .errors import ConfigurationError

    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if not parser.read(path):
        raise ConfigurationError(f"config file {path!r} not found or unreadable")
    values = {}
    for section in parser.sections():
        if section not in _SECTION_KEYS:
            raise ConfigurationError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SECTION_KEYS[section]:
                raise ConfigurationError(
                    f"unknown config key {key!r} in section [{section}]"
                )
            values[(section, key)] = raw.strip()
    return values


def _merge_config(file_values, cli):
    """Defaults <- file <- CLI flags; typed conversions happen here."""
    from .errors import ConfigurationError

    cfg = RunConfig()

    def take(section, key, cast, attr=None):
        if (section, key) in file_values:
            raw = file_values[(section, key)]
            try:
                value = cast(raw)
            except ValueError:
                raise ConfigurationError(
                    f"config key {key!r} in [{section}] has bad value {raw!r}"
                )
            setattr(cfg, attr or key, value)

    take("run", "preset", str)
    take("run", "formulation", str)
    take("run", "constraints", str)
    take("run", "tolerance", float)
    take("mesh", "xseed", int)
    take("mesh", "yseed", int)
    take("mesh", "kind", str)
    take("transient", "dt", float)
    take("transient", "t_final", float)
    for key in _SECTION_KEYS["stabilization"]:
        if ("stabilization", key) in file_values:
            raw = file_values[("stabilization", key)]
            try:
                cfg.stab[key] = float(raw)
            except ValueError:
                raise ConfigurationError(
                    f"config key {key!r} in [stabilization] has bad value {raw!r}"
                )
    for key in _SECTION_KEYS["problem"]:
        if ("problem", key) in file_values:
            cfg.problem_spec[key] = file_values[("problem", key)]
    if ("output", "directory") in file_values:
        cfg.out_dir = Path(file_values[("output", "directory")])
    if ("output", "formats") in file_values:
        formats = {
            token.strip()
            for token in file_values[("output", "formats")].split(",")
            if token.strip()
        }
        unknown = formats - _FORMATS
        if unknown:
            raise ConfigurationError(
                f"unknown output formats: {', '.join(sorted(unknown))}"
            )
        cfg.formats = formats

    for name in (
        "preset",
        "formulation",
        "constraints",
        "xseed",
        "yseed",
        "dt",
        "t_final",
    ):
        if cli.get(name) is not None:
            setattr(cfg, name, cli[name])
    if cli.get("out") is not None:
        cfg.out_dir = Path(cli["out"])
    return cfg


def _build_inline_problem(cfg):
    """Mesh + Problem from the [problem]/[mesh] sections."""
    import numpy as np

    from .errors import ConfigurationError
    from .mesh import generate_structured_mesh
    from .physics import DirichletBC, Problem, build_diffusivity, build_velocity

    spec = cfg.problem_spec
    if "velocity" not in spec or "diffusivity" not in spec:
        raise ConfigurationError(
            "inline problem needs 'velocity' and 'diffusivity' in [problem]"
        )

    domain_raw = spec.get("domain", "0,1,0,1")
    bounds = [float(tok) for tok in domain_raw.split(",")]
    if len(bounds) == 2:
        domain = (bounds[0], bounds[1])
        dim = 1
    elif len(bounds) == 4:
        domain = ((bounds[0], bounds[1]), (bounds[2], bounds[3]))
        dim = 2
    else:
        raise ConfigurationError(
            "problem domain must be 'x0,x1' or 'x0,x1,y0,y1'"
        )

    kind = cfg.kind or ("line2" if dim == 1 else "quad4")
    xseed = cfg.xseed or 11
    if dim == 1:
        mesh = generate_structured_mesh(domain, xseed, kind="line2")
    else:
        mesh = generate_structured_mesh(domain, xseed, cfg.yseed or xseed, kind=kind)

    def parse_model(raw, builder, positional):
        head, _, tail = raw.partition(":")
        params = [float(tok) for tok in tail.split(",") if tok.strip()] if tail else []
        names = positional.get(head)
        if names is None:
            raise ConfigurationError(f"unknown model {head!r}")
        if names == "vector":
            return builder({"kind": head, "components": params or [1.0]})
        if len(params) > len(names):
            raise ConfigurationError(
                f"model {head!r} takes at most {len(names)} parameters"
            )
        return builder({"kind": head, **dict(zip(names, params))})

    velocity = parse_model(
        spec["velocity"],
        build_velocity,
        {
            "constant": "vector",
            "shear": ("rate",),
            "vortex": (),
            "chaotic-vortex": ("period", "v0"),
            "cellular": ("l_cell",),
        },
    )
    diffusivity = parse_model(
        spec["diffusivity"],
        build_diffusivity,
        {
            "scalar": ("value", "dim"),
            "rotated-anisotropic": ("theta", "w0", "w1", "w2"),
        },
    )
    if dim == 1 and getattr(diffusivity, "dim", dim) != 1:
        diffusivity = build_diffusivity(
            {"kind": "scalar", "value": diffusivity.value, "dim": 1}
        )

    def constant(value):
        return lambda pts, t=0.0: np.full(len(np.atleast_2d(pts)), float(value))

    alpha = constant(float(spec["alpha"])) if "alpha" in spec else None
    source = constant(float(spec["source"])) if "source" in spec else None

    lo = np.array([domain[0]] if dim == 1 else [domain[0][0], domain[1][0]])
    hi = np.array([domain[1]] if dim == 1 else [domain[0][1], domain[1][1]])
    edges = {
        "left": (0, lo[0], -1),
        "right": (0, hi[0], +1),
    }
    if dim == 2:
        edges["bottom"] = (1, lo[1], -1)
        edges["top"] = (1, hi[1], +1)

    patches = []
    for chunk in spec.get("dirichlet", "").split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        name, _, raw = chunk.partition(":")
        name = name.strip()
        if name not in edges:
            raise ConfigurationError(f"unknown boundary edge {name!r}")
        try:
            value = float(raw)
        except ValueError:
            raise ConfigurationError(f"bad Dirichlet value {raw!r} for {name!r}")
        axis, cut, sense = edges[name]

        def where(coords, axis=axis, cut=cut, sense=sense):
            if sense > 0:
                return coords[:, axis] > cut - 1e-12
            return coords[:, axis] < cut + 1e-12

        patches.append(DirichletBC(where=where, value=constant(value)))

    problem = Problem(
        velocity=velocity,
        diffusivity=diffusivity,
        alpha=alpha,
        source=source,
        dirichlet=patches,
    )
    return mesh, problem


def _materialize(cfg, modes):
    """Turn a RunConfig into a PresetCase, applying common overrides."""
    from .errors import ConfigurationError
    from .presets import PresetCase, build_preset

    if cfg.preset:
        overrides = {}
        if cfg.xseed is not None:
            overrides["xseed"] = cfg.xseed
        if cfg.yseed is not None:
            overrides["yseed"] = cfg.yseed
        case = build_preset(cfg.preset, **overrides)
    elif cfg.problem_spec:
        mesh, problem = _build_inline_problem(cfg)
        case = PresetCase(
            name="inline",
            mode="solve",
            description="inline problem from config",
            mesh=mesh,
            problem=problem,
            formulation="primitive",
            constraints="none",
        )
    else:
        raise ConfigurationError("give --preset or an inline [problem] config")

    if case.mode not in modes:
        raise ConfigurationError(
            f"preset {case.name!r} is a {case.mode!r} case; "
            f"this command handles: {', '.join(sorted(modes))}"
        )
    if cfg.formulation is not None:
        case.formulation = cfg.formulation
    if cfg.constraints is not None:
        case.constraints = cfg.constraints
    if cfg.stab:
        case.stab = {**(case.stab or {}), **cfg.stab}
    if cfg.dt is not None or cfg.t_final is not None:
        from .solver import TransientConfig

        base = case.transient
        dt = cfg.dt if cfg.dt is not None else (base.dt if base else None)
        t_final = (
            cfg.t_final if cfg.t_final is not None else (base.t_final if base else None)
        )
        if dt is None or t_final is None:
            raise ConfigurationError("transient overrides need both dt and t_final")
        case.transient = TransientConfig(
            dt=dt, t_final=t_final, initial=base.initial if base else None
        )
    return case


def _common_options(fn):
    decorators = [
        click.option("--config", "config_path", type=click.Path(), default=None,
                     help="INI config file."),
        click.option("--preset", default=None, help="Named benchmark."),
        click.option("--formulation", default=None,
                     type=click.Choice(["primitive", "nssd"])),
        click.option("--constraints", default=None,
                     type=click.Choice(["none", "nn", "dmp", "lsb", "lsb+nn", "lsb+dmp"])),
        click.option("--xseed", type=int, default=None),
        click.option("--yseed", type=int, default=None),
        click.option("--dt", type=float, default=None),
        click.option("--tfinal", "t_final", type=float, default=None),
        click.option("--out", type=click.Path(), default=None,
                     help="Output directory."),
        click.option("--dry-run", is_flag=True, default=False,
                     help="Validate and print the resolved config, then stop."),
    ]
    for dec in reversed(decorators):
        fn = dec(fn)
    return fn


def _resolve(config_path, cli_values):
    from .errors import ConfigurationError

    try:
        file_values = _load_config_file(config_path) if config_path else {}
        return _merge_config(file_values, cli_values)
    except ConfigurationError as exc:
        _fail_config(exc)


def _prepare_out(cfg):
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    return cfg.out_dir


def _cert_ok(certificate):
    report = getattr(certificate, "report", None)
    if report is not None:
        return bool(report.passed)
    return getattr(certificate, "status", "optimal") == "optimal"


def _cert_stationarity(certificate):
    residuals = getattr(certificate, "residuals", None) or {}
    return float(residuals.get("stationarity", 0.0))


@click.group()
@click.option("--threads", type=int, default=None,
              help="Cap the numeric thread pools (set before numpy loads).")
def main(threads):
    """Least-squares transport solver with constrained quadratic programs."""
    if threads is not None:
        if threads < 1:
            _fail_config("--threads must be a positive integer")
        for name in (
            "OMP_NUM_THREADS",
            "OPENBLAS_NUM_THREADS",
            "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS",
        ):
            os.environ[name] = str(threads)


@main.command()
@_common_options
def solve(config_path, preset, formulation, constraints, xseed, yseed, dt,
          t_final, out, dry_run):
    """Run one steady or transient solve and export the fields."""
    cfg = _resolve(config_path, dict(
        preset=preset, formulation=formulation, constraints=constraints,
        xseed=xseed, yseed=yseed, dt=dt, t_final=t_final, out=out,
    ))
    from .errors import ConfigurationError

    try:
        case = _materialize(cfg, modes={"solve", "demo"})
    except ConfigurationError as exc:
        _fail_config(exc)
    if dry_run:
        click.echo(f"resolved configuration ({case.name}):")
        click.echo(cfg.describe())
        return
    if case.mode == "demo":
        _run_demo(cfg, case)
        return
    from .solver import solve_steady, solve_transient

    kwargs = dict(
        formulation=case.formulation,
        constraints=case.constraints,
        stab=case.stab,
    )
    if cfg.tolerance is not None:
        kwargs["tol"] = cfg.tolerance
    try:
        if case.transient is not None:
            result = solve_transient(
                case.mesh, case.problem, config=case.transient, **kwargs
            )
            fields = result.fields
            certificates = result.certificates
            balances = result.balances
        else:
            result = solve_steady(case.mesh, case.problem, **kwargs)
            fields = [result.field]
            certificates = [result.certificate]
            balances = [result.balance]
    except ConfigurationError as exc:
        _fail_config(exc)

    outdir = _prepare_out(cfg)
    _export_fields(outdir, case, cfg.formats, fields, certificates, balances)
    ok = all(_cert_ok(cert) for cert in certificates)
    worst = max((_cert_stationarity(c) for c in certificates), default=0.0)
    click.echo(
        f"{case.name}: {len(fields)} snapshot(s), "
        f"c in [{min(f.c.min() for f in fields):.6g}, "
        f"{max(f.c.max() for f in fields):.6g}], "
        f"certificates {'passed' if ok else 'FAILED'} "
        f"(max stationarity {worst:.3e})"
    )
    if not ok:
        sys.exit(EXIT_CERTIFICATE)


def _run_demo(cfg, case):
    from .analysis import normal_equations_demo
    from .exports import certificate_payload, write_json_report

    params = case.demo_params
    demo = normal_equations_demo(
        nelem=params["nelem"],
        v=params["velocity"],
        d=params["diffusivity"],
        f=params["source"],
    )
    click.echo(f"{case.name}: h={demo.h:.6g} Pe_h={demo.pe_h:.6g}")
    click.echo(
        f"cond2(K)={demo.cond_galerkin:.6g} "
        f"cond2(K^T K)={demo.cond_normal:.6g}"
    )
    click.echo(
        f"sign changes: direct={demo.sign_changes_galerkin} "
        f"bounded={demo.sign_changes_constrained}"
    )
    click.echo(f"bounded minimum: {demo.constrained.min():.6g}")
    if "json" in cfg.formats:
        outdir = _prepare_out(cfg)
        path = outdir / f"{case.name}_report.json"
        write_json_report(path, {
            "case": case.name,
            "h": demo.h,
            "pe_h": demo.pe_h,
            "cond_galerkin": demo.cond_galerkin,
            "cond_normal": demo.cond_normal,
            "sign_changes_galerkin": demo.sign_changes_galerkin,
            "sign_changes_constrained": demo.sign_changes_constrained,
            "galerkin": demo.galerkin,
            "constrained": demo.constrained,
            "certificate": certificate_payload(demo.certificate),
        })
        click.echo(f"wrote {path}")
    if not _cert_ok(demo.certificate):
        sys.exit(EXIT_CERTIFICATE)


def _export_fields(outdir, case, formats, fields, certificates, balances):
    from .exports import (
        certificate_payload,
        field_summary,
        write_field_vtk,
        write_json_report,
        write_table_csv,
    )

    if "vtk" in formats:
        if len(fields) == 1:
            write_field_vtk(
                outdir / f"{case.name}.vtk",
                case.mesh,
                {"concentration": fields[0].c, "flux": fields[0].q},
                title=case.name,
            )
        else:
            for index, snap in enumerate(fields):
                write_field_vtk(
                    outdir / f"{case.name}_{index:04d}.vtk",
                    case.mesh,
                    {"concentration": snap.c, "flux": snap.q},
                    title=f"{case.name} t={snap.time:g}",
                )
    if "csv" in formats:
        rows = []
        for index, snap in enumerate(fields):
            balance = balances[index - 1] if index > 0 or len(fields) == 1 else None
            if len(fields) == 1:
                balance = balances[0]
            rows.append([
                snap.time,
                snap.c.min(),
                snap.c.max(),
                balance.max_abs if balance is not None else None,
                balance.global_abs if balance is not None else None,
            ])
        write_table_csv(
            outdir / f"{case.name}_summary.csv",
            ["t", "c_min", "c_max", "lsb_max_abs", "gsb_abs"],
            rows,
        )
    if "json" in formats:
        write_json_report(
            outdir / f"{case.name}_certificate.json",
            {
                "case": case.name,
                "formulation": case.formulation,
                "constraints": case.constraints,
                "snapshots": [field_summary(f) for f in fields],
                "certificates": [certificate_payload(c) for c in certificates],
            },
        )


@main.command()
@_common_options
def converge(config_path, preset, formulation, constraints, xseed, yseed, dt,
             t_final, out, dry_run):
    """Mesh-refinement error study; writes the rate table."""
    cfg = _resolve(config_path, dict(
        preset=preset or "hconv-desk", formulation=formulation,
        constraints=constraints, xseed=xseed, yseed=yseed, dt=dt,
        t_final=t_final, out=out,
    ))
    from .errors import ConfigurationError

    try:
        case = _materialize(cfg, modes={"converge"})
    except ConfigurationError as exc:
        _fail_config(exc)
    if dry_run:
        click.echo(f"resolved configuration ({case.name}):")
        click.echo(cfg.describe())
        return

    from .analysis import error_norms, write_convergence_csv
    from .mesh import generate_structured_mesh
    from .solver import solve_steady

    hs, dofs, rows = [], [], []
    for seed in case.seeds:
        mesh = generate_structured_mesh(
            ((0.0, 1.0), (0.0, 1.0)), seed, seed, kind=case.kind
        )
        result = solve_steady(
            mesh,
            case.problem,
            formulation=case.formulation,
            constraints=case.constraints,
            stab=case.stab,
        )
        errors = error_norms(result.field, case.exact)
        hs.append(mesh.h)
        dofs.append(mesh.nnodes * (1 + mesh.dim))
        rows.append(errors)
        click.echo(
            f"  seed {seed:4d}: h={mesh.h:.5f} "
            + " ".join(f"{k}={rows[-1][k]:.4e}" for k in sorted(errors))
        )

    outdir = _prepare_out(cfg)
    path = outdir / f"{case.name}_rates.csv"
    write_convergence_csv(path, hs, dofs, rows)
    click.echo(f"wrote {path}")


@main.command()
@_common_options
def bimolecular(config_path, preset, formulation, constraints, xseed, yseed,
                dt, t_final, out, dry_run):
    """Run a reactive-mixing case and export species plus diagnostics."""
    cfg = _resolve(config_path, dict(
        preset=preset, formulation=formulation, constraints=constraints,
        xseed=xseed, yseed=yseed, dt=dt, t_final=t_final, out=out,
    ))
    from .errors import ConfigurationError

    try:
        case = _materialize(cfg, modes={"bimolecular"})
    except ConfigurationError as exc:
        _fail_config(exc)
    if dry_run:
        click.echo(f"resolved configuration ({case.name}):")
        click.echo(cfg.describe())
        return

    from .exports import certificate_payload, write_field_vtk, write_json_report
    from .reactions import run_bimolecular, write_diagnostics_csv

    kwargs = dict(
        formulation=case.formulation,
        constraints=case.constraints,
        stab=case.stab,
    )
    if cfg.tolerance is not None:
        kwargs["tol"] = cfg.tolerance
    if case.transient is not None:
        kwargs["config"] = case.transient
    try:
        result = run_bimolecular(case.mesh, case.system, **kwargs)
    except ConfigurationError as exc:
        _fail_config(exc)

    outdir = _prepare_out(cfg)
    if "vtk" in cfg.formats:
        for index, snap in enumerate(result.species):
            suffix = f"_{index:04d}" if len(result.species) > 1 else ""
            write_field_vtk(
                outdir / f"{case.name}{suffix}.vtk",
                case.mesh,
                {"c_a": snap.c_a, "c_b": snap.c_b, "c_c": snap.c_c},
                title=f"{case.name} t={result.times[index]:g}",
            )
    if "csv" in cfg.formats:
        write_diagnostics_csv(outdir / f"{case.name}_mixing.csv", result)

    def collect(res):
        if hasattr(res, "certificates"):
            return list(res.certificates)
        return [res.certificate]

    certs = collect(result.invariant_f) + collect(result.invariant_g)
    if "json" in cfg.formats:
        write_json_report(
            outdir / f"{case.name}_certificate.json",
            {
                "case": case.name,
                "formulation": case.formulation,
                "constraints": case.constraints,
                "certificates": [certificate_payload(c) for c in certs],
            },
        )
    final = result.diagnostics[-1]
    moment = "n/a" if final.theta2 is None else f"{final.theta2:.6g}"
    ok = all(cert.passed for cert in certs)
    click.echo(
        f"{case.name}: {len(result.species)} snapshot(s), "
        f"product range [{result.final.c_c.min():.6g}, "
        f"{result.final.c_c.max():.6g}], spread {moment}, "
        f"certificates {'passed' if ok else 'FAILED'}"
    )
    if not ok:
        sys.exit(EXIT_CERTIFICATE)


@main.command()
@_common_options
def diagnose(config_path, preset, formulation, constraints, xseed, yseed, dt,
             t_final, out, dry_run):
    """Report mesh metrics, matrix classes, and the coarse-mesh verdict."""
    cfg = _resolve(config_path, dict(
        preset=preset, formulation=formulation, constraints=constraints,
        xseed=xseed, yseed=yseed, dt=dt, t_final=t_final, out=out,
    ))
    from .errors import ConfigurationError

    try:
        case = _materialize(cfg, modes={"solve", "bimolecular", "converge"})
    except ConfigurationError as exc:
        _fail_config(exc)

    import numpy as np

    from .analysis import classify_matrix, galerkin_1d_system, zmatrix_threshold_1d
    from .assembly import apply_dirichlet, assemble_system
    from .mesh import generate_structured_mesh, mesh_metrics
    from .physics import ConstantVelocity, ScalarDiffusivity

    if case.mode == "bimolecular":
        from .reactions import transform_to_invariants

        problem, _ = transform_to_invariants(case.system)
    elif case.mode == "converge":
        problem = case.problem
    else:
        problem = case.problem
    mesh = case.mesh
    if mesh is None:
        seed = cfg.xseed or case.seeds[0] if case.seeds else 11
        mesh = generate_structured_mesh(
            ((0.0, 1.0), (0.0, 1.0)), seed, seed, kind=case.kind
        )

    metrics = mesh_metrics(mesh, problem.velocity, problem.diffusivity, problem.alpha)
    formulation_name = cfg.formulation or "primitive"
    stab = case.stab if formulation_name == "nssd" else None
    system = assemble_system(mesh, problem, formulation=formulation_name, stab=stab)
    fixed, values = problem.dirichlet_nodes(mesh.coords)
    reduced = apply_dirichlet(system, fixed, values)
    classes = classify_matrix(reduced.full_matrix().toarray())

    report = {
        "mesh": {
            "kind": mesh.kind,
            "nodes": int(mesh.nnodes),
            "elements": int(mesh.nele),
            "h": float(metrics["h"]),
        },
        "metrics": {
            "pe_h": float(metrics["Pe_h"]),
            "da_h": float(metrics["Da_h"]),
            "lambda_min": float(metrics["lambda_min"]),
            "lambda_max": float(metrics["lambda_max"]),
        },
        "system_matrix": classes,
        "coarse_mesh": {
            "oscillations": bool(metrics["Pe_h"] > 1.0),
            "oscillations_and_reaction": bool(
                metrics["Pe_h"] > 1.0 and metrics["Da_h"] > 1.0
            ),
            "maximum_principle": bool(not classes["is_M"]),
        },
    }

    velocity = problem.velocity
    diffusivity = problem.diffusivity
    if (
        mesh.dim == 1
        and isinstance(velocity, ConstantVelocity)
        and isinstance(diffusivity, ScalarDiffusivity)
    ):
        v = float(np.asarray(velocity(np.zeros((1, 1))))[0, 0])
        d = diffusivity.value
        a = float(np.max(problem.alpha(mesh.coords)))
        k, _, h = galerkin_1d_system(mesh.nele, v, d, alpha=a)
        galerkin = classify_matrix(k)
        threshold = zmatrix_threshold_1d(v, d, alpha=a)
        report["galerkin_1d"] = {
            **galerkin,
            "h": h,
            "z_threshold": threshold,
            "within_threshold": bool(h <= threshold),
        }

    click.echo(
        f"mesh: kind={mesh.kind} nodes={mesh.nnodes} elements={mesh.nele} "
        f"h={metrics['h']:.6g}"
    )
    click.echo(
        f"metrics: Pe_h={metrics['Pe_h']:.6g} Da_h={metrics['Da_h']:.6g} "
        f"lambda=[{metrics['lambda_min']:.3g}, {metrics['lambda_max']:.3g}]"
    )
    click.echo(
        "reduced system matrix: "
        + " ".join(f"{k}={'yes' if v else 'no'}" for k, v in classes.items())
    )
    verdict = report["coarse_mesh"]
    click.echo(
        "coarse wrt oscillations: "
        + ("yes" if verdict["oscillations"] else "no")
    )
    click.echo(
        "coarse wrt oscillations and reaction: "
        + ("yes" if verdict["oscillations_and_reaction"] else "no")
    )
    click.echo(
        "coarse wrt maximum principle: "
        + ("yes" if verdict["maximum_principle"] else "no")
    )
    if "galerkin_1d" in report:
        g = report["galerkin_1d"]
        click.echo(
            f"tridiagonal transport rows: Z={'yes' if g['is_Z'] else 'no'} "
            f"(h={g['h']:.6g}, threshold={g['z_threshold']:.6g})"
        )

    if out is not None:
        outdir = _prepare_out(cfg)
        from .exports import write_json_report

        path = outdir / f"{case.name}_diagnose.json"
        write_json_report(path, report)
        click.echo(f"wrote {path}")


@main.command("mesh-export")
@_common_options
def mesh_export(config_path, preset, formulation, constraints, xseed, yseed,
                dt, t_final, out, dry_run):
    """Write a preset's mesh as a legacy ASCII VTK file."""
    cfg = _resolve(config_path, dict(
        preset=preset, formulation=formulation, constraints=constraints,
        xseed=xseed, yseed=yseed, dt=dt, t_final=t_final, out=out,
    ))
    from .errors import ConfigurationError

    try:
        case = _materialize(cfg, modes={"solve", "bimolecular", "converge"})
    except ConfigurationError as exc:
        _fail_config(exc)
    mesh = case.mesh
    if mesh is None:
        from .mesh import generate_structured_mesh

        seed = cfg.xseed or (case.seeds[0] if case.seeds else 11)
        mesh = generate_structured_mesh(
            ((0.0, 1.0), (0.0, 1.0)), seed, seed, kind=case.kind
        )
    from .exports import write_mesh_vtk

    outdir = _prepare_out(cfg)
    path = outdir / f"{case.name}_mesh.vtk"
    write_mesh_vtk(path, mesh, title=case.name)
    click.echo(f"wrote {path}")


@main.command("presets")
def list_presets():
    """List the shipped benchmark names."""
    from .presets import PRESETS, build_preset

    for name in sorted(PRESETS):
        case = build_preset(name)
        click.echo(f"{name:24s} [{case.mode}] {case.description}")


if __name__ == "__main__":
    main()
