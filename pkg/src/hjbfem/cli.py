"""Command-line front end.

Subcommands:

* ``solve CONFIG``            run a configured problem, write CSV artifacts
* ``check-mesh``              print mesh statistics and the acuteness audit
* ``bench-eikonal``           convergence table for the transport benchmark
* ``consistency-demo``        pointwise-consistency ratios on patterned meshes

Exit codes: 0 success, 2 parse/usage error, 3 monotonicity certification
failure, 4 solver non-convergence, 5 I/O error.  Runs are deterministic:
two invocations with the same config produce bit-identical CSV files.
The output directory can be overridden with the HJBFEM_OUTPUT environment
variable.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import math
import os
import sys
import time

import numpy as np

from . import catalog
from .assembly import assemble, certify_monotonicity
from .diagnostics import consistency_experiment, convergence_study
from .errors import (ConfigurationError, MeshFormatError, MonotonicityError,
                     NonConvergenceError, QueryError, SolverError)
from .mesh import (Mesh, acuteness_certificate, build_interval_mesh,
                   build_patterned_rectangle_mesh, mesh_size, read_mesh)
from .problem import (ControlProblem, OperatorSplitting,
                      compute_diffusion_budget, fixed_diffusion_budget)
from .expressions import compile_scalar, compile_vector
from .solver import (TimeGrid, backward_solve, dump_policy, dump_report,
                     dump_solution)

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_CERTIFICATION = 3
EXIT_NONCONVERGENCE = 4
EXIT_IO = 5


def _fmt(x):
    return format(float(x), ".17g")


class NodalField:
    """Per-node tabulated values evaluated by P1 interpolation."""

    def __init__(self, mesh: Mesh, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (mesh.n_nodes,):
            raise ConfigurationError(
                f"table has {values.shape[0]} values for {mesh.n_nodes} nodes"
            )
        self.mesh = mesh
        self.values = values

    def __call__(self, x):
        elem, weights = self.mesh.locate(x)
        return float(weights @ self.values[self.mesh.elements[elem]])


def _load_table(path, mesh, base_dir):
    full = path if os.path.isabs(path) else os.path.join(base_dir, path)
    if not os.path.exists(full):
        raise OSError(f"table file {full} does not exist")
    values = [float(line.strip()) for line in open(full, encoding="utf-8")
              if line.strip()]
    if mesh.input_to_internal is not None:
        reordered = np.empty(len(values))
        reordered[mesh.input_to_internal] = values
        values = reordered
    return NodalField(mesh, values)


def _coefficient(raw, mesh, dimension, base_dir, vector=False):
    raw = raw.strip()
    if raw.startswith("@table:"):
        if vector:
            raise ConfigurationError("tabulated vector fields are not supported")
        return _load_table(raw[len("@table:"):].strip(), mesh, base_dir)
    if vector:
        return compile_vector(raw, dimension)
    return compile_scalar(raw, dimension)


def _build_mesh(cfg):
    sect = cfg["mesh"]
    kind = sect.get("kind", "interval").strip()
    if kind == "interval":
        return build_interval_mesh(sect.getfloat("a"), sect.getfloat("b"),
                                   sect.getint("n"))
    if kind == "rectangle":
        rect = tuple(float(v) for v in sect.get("rect").split())
        return build_patterned_rectangle_mesh(
            rect, sect.getint("nx"), sect.getint("ny"),
            sect.get("pattern", "equilateral").strip())
    if kind == "file":
        return read_mesh(sect.get("path"))
    raise ConfigurationError(f"unknown mesh kind {kind!r}")


def _build_problem(cfg, mesh, base_dir):
    sect = cfg["problem"]
    name = sect.get("name", "custom").strip()
    if name in catalog.BUILTIN_PROBLEMS:
        return catalog.BUILTIN_PROBLEMS[name]()
    if name != "custom":
        raise ConfigurationError(
            f"unknown problem {name!r}; use one of "
            f"{sorted(catalog.BUILTIN_PROBLEMS)} or 'custom'"
        )
    controls = sect.get("controls").split()
    if not controls:
        raise ConfigurationError("custom problem needs a control list")
    dim = mesh.dimension
    fields = {"a": [], "b": [], "c": [], "d": []}
    for ctrl in controls:
        for key in fields:
            raw = sect.get(f"{key}.{ctrl}", fallback=None)
            if raw is None:
                raise ConfigurationError(
                    f"missing coefficient {key}.{ctrl} in [problem]"
                )
            fields[key].append(
                _coefficient(raw, mesh, dim, base_dir, vector=(key == "b")))
    final = _coefficient(sect.get("vT", "0"), mesh, dim, base_dir)
    horizon = sect.getfloat("T")
    return ControlProblem(controls=controls, diffusion=fields["a"],
                          drift=fields["b"], reaction=fields["c"],
                          source=fields["d"], final_data=final,
                          horizon=horizon, dimension=dim)


def _build_splitting(cfg, problem):
    sect = cfg["splitting"] if cfg.has_section("splitting") else {}
    mode = sect.get("mode", "implicit").strip() if sect else "implicit"
    fractions = (0.5, 0.5, 0.5)
    if sect and sect.get("fractions", None):
        fractions = tuple(float(v) for v in sect.get("fractions").split())
        if len(fractions) != 3:
            raise ConfigurationError(
                "fractions needs 3 values: diffusion drift reaction"
            )
    gamma = None
    if sect and sect.get("gamma", None):
        gamma = float(sect.get("gamma"))
    epsilon = sect.get("epsilon", "auto").strip() if sect else "auto"
    splitting = OperatorSplitting.from_problem(problem, mode, fractions, gamma)
    return splitting, epsilon


def _build_budget(mesh, splitting, epsilon):
    if epsilon == "auto":
        return compute_diffusion_budget(mesh, splitting,
                                        acuteness_certificate(mesh))
    eps = float(epsilon)
    if splitting.mode == "explicit":
        return fixed_diffusion_budget(mesh, splitting, explicit_value=eps)
    if splitting.mode == "implicit":
        return fixed_diffusion_budget(mesh, splitting, implicit_value=eps)
    return fixed_diffusion_budget(mesh, splitting, explicit_value=eps,
                                  implicit_value=eps)


def _build_timegrid(cfg, report, horizon):
    sect = cfg["time"]
    if sect.get("h", None):
        return TimeGrid.make(horizon, sect.getfloat("h"))
    cfl = sect.getfloat("cfl", fallback=None)
    if cfl is None:
        raise ConfigurationError("[time] needs either h or cfl")
    if not math.isfinite(report.max_stable_h):
        raise ConfigurationError(
            "cfl-based step needs a positive explicit diagonal; give h instead"
        )
    raw = cfl * report.max_stable_h
    n = max(1, math.ceil(horizon / raw - 1e-12))
    h = horizon / n
    if abs(h - raw) > 1e-12 * max(1.0, raw):
        print(f"warning: rounding time step down to {h:.12g} so the horizon "
              f"divides evenly", file=sys.stderr)
    return TimeGrid.make(horizon, h)


def cmd_solve(args) -> int:
    cfg = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = cfg.read(args.config)
    if not read:
        raise OSError(f"config file {args.config} does not exist")
    for section in ("problem", "mesh", "time"):
        if not cfg.has_section(section):
            raise ConfigurationError(f"config is missing the [{section}] section")
    base_dir = os.path.dirname(os.path.abspath(args.config))

    start = time.perf_counter()
    mesh = _build_mesh(cfg)
    problem = _build_problem(cfg, mesh, base_dir)
    problem.validate_on(mesh)
    splitting, epsilon = _build_splitting(cfg, problem)
    splitting.validate_on(mesh)
    budget = _build_budget(mesh, splitting, epsilon)
    ops = assemble(mesh, splitting, budget)

    probe_report = certify_monotonicity(ops, 1.0)  # h-independent structure
    timegrid = _build_timegrid(cfg, probe_report, problem.horizon)
    report = certify_monotonicity(ops, timegrid.step)
    if not report.admissible:
        detail = "; ".join(report.violations) or "certification failed"
        raise MonotonicityError(f"monotonicity certification failed: {detail}")

    solver_sect = cfg["solver"] if cfg.has_section("solver") else {}
    tol = float(solver_sect.get("tol")) if solver_sect and solver_sect.get(
        "tol", None) else None
    max_iter = int(solver_sect.get("max_iter", 50)) if solver_sect else 50

    solution, iteration_report = backward_solve(
        problem, mesh, splitting, timegrid, tol=tol, max_iter=max_iter,
        budget=budget, operators=ops)

    out_sect = cfg["output"] if cfg.has_section("output") else {}
    out_dir = os.environ.get("HJBFEM_OUTPUT") or (
        out_sect.get("directory", "out") if out_sect else "out")
    dumps = (out_sect.get("dumps", "solution,policy,report") if out_sect
             else "solution,policy,report")
    os.makedirs(out_dir, exist_ok=True)
    wanted = {d.strip() for d in dumps.split(",") if d.strip()}
    if "solution" in wanted:
        dump_solution(solution, os.path.join(out_dir, "solution.csv"))
    if "policy" in wanted:
        dump_policy(iteration_report, os.path.join(out_dir, "policy.csv"))
    if "report" in wanted:
        dump_report(iteration_report, os.path.join(out_dir, "report.csv"))

    wall = time.perf_counter() - start
    print(f"N={mesh.n_interior} dx={mesh_size(mesh):.12g} h={timegrid.step:.12g} "
          f"steps={timegrid.n_steps} "
          f"policy_iterations={iteration_report.total_iterations} "
          f"min_value={solution.values.min():.12g} wall_time_s={wall:.3f}")
    return EXIT_OK


def _mesh_from_args(args):
    if args.file:
        return read_mesh(args.file)
    if args.interval:
        a, b, n = args.interval
        return build_interval_mesh(float(a), float(b), int(n))
    if args.rectangle:
        x0, y0, x1, y1, nx, ny = args.rectangle
        return build_patterned_rectangle_mesh(
            (float(x0), float(y0), float(x1), float(y1)), int(nx), int(ny),
            args.pattern)
    raise ConfigurationError("give --file, --interval or --rectangle")


def cmd_check_mesh(args) -> int:
    mesh = _mesh_from_args(args)
    cert = acuteness_certificate(mesh)
    print(f"dimension={mesh.dimension} nodes={mesh.n_nodes} "
          f"interior={mesh.n_interior} elements={mesh.n_elements}")
    print(f"mesh_size={_fmt(mesh_size(mesh))}")
    print(f"sin_theta={_fmt(cert.sin_theta)} strictly_acute={cert.strictly_acute}")
    elem, na, nb = cert.worst_pair
    print(f"worst_pair: element={elem} nodes=({na}, {nb})")
    return EXIT_OK


def cmd_bench_eikonal(args) -> int:
    levels = [int(v) for v in args.levels.split(",")]
    if len(levels) < 2:
        raise ConfigurationError("bench-eikonal needs at least 2 levels")
    problem = catalog.eikonal_1d()
    splitting = OperatorSplitting.from_problem(problem, args.mode)
    pairs = []
    for n in levels:
        mesh = catalog.eikonal_1d_mesh(n)
        dx = mesh_size(mesh)
        pairs.append((mesh, TimeGrid.make(problem.horizon, dx * args.cfl)))
    rows = convergence_study(problem, splitting, pairs, catalog.eikonal_exact,
                             catalog.eikonal_exact_gradient)
    writer = csv.writer(sys.stdout)
    writer.writerow(["mesh_size", "h", "linf_error", "l2h1_error",
                     "linf_factor", "l2h1_factor"])
    for row in rows:
        writer.writerow([_fmt(row["mesh_size"]), _fmt(row["h"]),
                         _fmt(row["linf_error"]), _fmt(row["l2h1_error"]),
                         _fmt(row["linf_factor"]), _fmt(row["l2h1_factor"])])
    errors = [row["linf_error"] for row in rows]
    non_increasing = all(b <= a * (1 + 1e-12) + 1e-15
                         for a, b in zip(errors, errors[1:]))
    return EXIT_OK if non_increasing else 1


def cmd_consistency_demo(args) -> int:
    levels = [1.0 / int(v) for v in args.levels.split(",")]
    if len(levels) < 2:
        raise ConfigurationError("consistency-demo needs at least 2 levels")

    def w(x):
        return math.sin(math.pi * x[0]) * math.sin(math.pi * x[1])

    def grad_w(x):
        return np.array([
            math.pi * math.cos(math.pi * x[0]) * math.sin(math.pi * x[1]),
            math.pi * math.sin(math.pi * x[0]) * math.cos(math.pi * x[1]),
        ])

    def laplacian(x):
        return -2.0 * math.pi ** 2 * w(x)

    probe = (0.5, 0.5)
    interp = consistency_experiment(args.pattern, w, laplacian, probe, levels,
                                    field="interpolant")
    proj = consistency_experiment(args.pattern, w, laplacian, probe, levels,
                                  field="projection", grad_w=grad_w)
    writer = csv.writer(sys.stdout)
    writer.writerow(["dx", "field", "measured", "reference", "ratio"])
    for row in interp + proj:
        writer.writerow([_fmt(row.dx), row.field, _fmt(row.measured),
                         _fmt(row.reference), _fmt(row.ratio)])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hjbfem",
        description="Monotone P1 finite element solver for parabolic "
                    "Hamilton-Jacobi-Bellman problems.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run a configured problem")
    p.add_argument("config", help="INI configuration file")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("check-mesh", help="mesh statistics and acuteness audit")
    p.add_argument("--file", help="mesh file path")
    p.add_argument("--interval", nargs=3, metavar=("A", "B", "N"),
                   help="uniform interval mesh")
    p.add_argument("--rectangle", nargs=6,
                   metavar=("X0", "Y0", "X1", "Y1", "NX", "NY"),
                   help="patterned rectangle mesh")
    p.add_argument("--pattern", default="equilateral",
                   choices=("consistent", "inconsistent", "equilateral"))
    p.set_defaults(func=cmd_check_mesh)

    p = sub.add_parser("bench-eikonal", help="transport benchmark table")
    p.add_argument("--levels", default="16,32,64",
                   help="comma list of element counts")
    p.add_argument("--mode", default="explicit",
                   choices=("explicit", "implicit", "semi-implicit"))
    p.add_argument("--cfl", type=float, default=1.0,
                   help="time step as a fraction of the mesh width")
    p.set_defaults(func=cmd_bench_eikonal)

    p = sub.add_parser("consistency-demo", help="pointwise consistency ratios")
    p.add_argument("--pattern", default="inconsistent",
                   choices=("consistent", "inconsistent"))
    p.add_argument("--levels", default="8,16,32",
                   help="comma list of 1/dx values")
    p.set_defaults(func=cmd_consistency_demo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (ConfigurationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except MonotonicityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CERTIFICATION
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (OSError, MeshFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
