"""Error metrics, projection consistency probes and convergence studies.

All diagnostics are pure read-only computations over immutable inputs.
Space quadrature uses degree-2 rules whose points avoid element vertices,
so fields with measure-zero kinks (one-sided gradients at quadrature
points) integrate cleanly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .assembly import DiscreteOperatorSet, stiffness_matrix, mass_matrix
from .errors import ConfigurationError, SolverError
from .mesh import Mesh, build_patterned_rectangle_mesh
from .solver import DiscreteSolution, TimeGrid, solve_mmatrix_system

# Degree-2 quadrature on the reference simplex: (barycentric points, weights).
_QUAD_1D = (np.array([[0.5 + 0.5 / math.sqrt(3.0), 0.5 - 0.5 / math.sqrt(3.0)],
                      [0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0)]]),
            np.array([0.5, 0.5]))
_QUAD_2D = (np.array([[0.5, 0.5, 0.0],
                      [0.0, 0.5, 0.5],
                      [0.5, 0.0, 0.5]]),
            np.array([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]))
_TIME_GAUSS = np.array([0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0)])


def _space_quadrature(mesh):
    """Physical quadrature points (m, q, d) and weights (q,) per element."""
    bary, weights = _QUAD_1D if mesh.dimension == 1 else _QUAD_2D
    verts = mesh.nodes[mesh.elements]  # (m, d+1, d)
    points = np.einsum("qb,mbd->mqd", bary, verts)
    return points, weights


@dataclass(frozen=True)
class ErrorReport:
    """Errors of one run against a reference field."""

    linf_error: float
    l2h1_error: float
    mesh_size: float
    time_step: float
    tag: str = ""


def linf_error(solution: DiscreteSolution, exact) -> float:
    """Max over time levels and nodes of |solution - exact(s_k, y)|."""
    worst = 0.0
    for k, s in enumerate(solution.timegrid.levels):
        vals = np.array([exact(s, x) for x in solution.mesh.nodes])
        worst = max(worst, float(np.abs(solution.values[k] - vals).max()))
    return worst


def l2h1_error(solution: DiscreteSolution, exact_gradient) -> float:
    """L2-in-time H1-seminorm error, treating the solution as affine in time.

    Two-point Gauss in time per level interval, degree-2 quadrature in
    space per element; `exact_gradient(t, x)` must return the spatial
    gradient (one-sided values at kinks are fine since quadrature points
    avoid the mesh skeleton).
    """
    mesh = solution.mesh
    tg = solution.timegrid
    points, weights = _space_quadrature(mesh)
    total = 0.0
    for k in range(tg.n_steps):
        for tau in _TIME_GAUSS:
            t = tg.levels[k] + tau * tg.step
            theta = (tg.levels[k + 1] - t) / tg.step
            nodal = theta * solution.values[k] + (1 - theta) * solution.values[k + 1]
            elem_vals = nodal[mesh.elements]  # (m, d+1)
            grads_num = np.einsum("mb,mbd->md", elem_vals, mesh.gradients)
            for e in range(mesh.n_elements):
                for q, wq in enumerate(weights):
                    diff = grads_num[e] - np.asarray(
                        exact_gradient(t, points[e, q]), dtype=float)
                    total += 0.5 * tg.step * wq * mesh.volumes[e] * float(diff @ diff)
    return math.sqrt(total)


def compute_error_report(solution, exact, exact_gradient=None, tag="") -> ErrorReport:
    from .mesh import mesh_size as _ms
    l2h1 = l2h1_error(solution, exact_gradient) if exact_gradient else float("nan")
    return ErrorReport(linf_error=linf_error(solution, exact),
                       l2h1_error=l2h1,
                       mesh_size=_ms(solution.mesh),
                       time_step=solution.timegrid.step,
                       tag=tag)


@dataclass(frozen=True)
class EllipticProjection:
    """Discrete field whose stiffness action matches a continuous field's.

    Interior coefficients solve the stiffness system; boundary
    coefficients interpolate the field.
    """

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        self.values.setflags(write=False)


def _stiffness_rhs(mesh, grad_w):
    """Quadrature of <grad w, grad phi_l> for every node l."""
    points, weights = _space_quadrature(mesh)
    rhs = np.zeros(mesh.n_nodes)
    for e, elem in enumerate(mesh.elements):
        avg = np.zeros(mesh.dimension)
        for q, wq in enumerate(weights):
            avg += wq * np.asarray(grad_w(points[e, q]), dtype=float)
        for loc, g in enumerate(elem):
            rhs[g] += mesh.volumes[e] * float(mesh.gradients[e, loc] @ avg)
    return rhs


def elliptic_projection(mesh: Mesh, w, grad_w) -> EllipticProjection:
    """Projection with matching stiffness action and interpolated boundary."""
    N = mesh.n_interior
    stiff = stiffness_matrix(mesh)
    boundary_vals = np.array([w(x) for x in mesh.nodes[N:]])
    rhs = _stiffness_rhs(mesh, grad_w)[:N]
    rhs -= stiff[:N, N:] @ boundary_vals
    try:
        interior_vals = solve_mmatrix_system(stiff[:N, :N], rhs, tol=1e-11)
    except SolverError as exc:
        raise SolverError(f"stiffness system is degenerate: {exc}") from exc
    return EllipticProjection(mesh, np.concatenate([interior_vals, boundary_vals]))


def stiffness_action(mesh: Mesh, nodal_values, node: int) -> float:
    """<grad u, grad hat_node> / |hat_node|_L1 for the P1 field u (exact)."""
    nodal_values = np.asarray(nodal_values, dtype=float)
    total = 0.0
    for e in mesh.patches[node]:
        elem = mesh.elements[e]
        grad_u = nodal_values[elem] @ mesh.gradients[e]
        gl = mesh.gradients[e, mesh.local_index(e, node)]
        total += mesh.volumes[e] * float(grad_u @ gl)
    return total / mesh.hat_norms[node]


@dataclass(frozen=True)
class ConsistencyProbe:
    """One pointwise-consistency measurement at a probe node."""

    pattern: str
    field: str
    dx: float
    node: int
    measured: float
    reference: float
    ratio: float


def consistency_experiment(pattern: str, w, laplacian, probe, levels,
                           field: str = "interpolant", grad_w=None,
                           rect=(0.0, 0.0, 1.0, 1.0)) -> list:
    """Probe the discrete Laplacian's pointwise consistency at one node.

    For each mesh width dx, measures the normalized stiffness action at
    the probe node of either the nodal interpolant of w or its elliptic
    projection.  Interpolant probes are referenced against -laplacian(w)
    at the probe point; projection probes against the quadrature
    stiffness action of w itself, whose agreement is exact up to the
    linear-solve tolerance.
    """
    if field not in ("interpolant", "projection"):
        raise ConfigurationError("field must be 'interpolant' or 'projection'")
    if field == "projection" and grad_w is None:
        raise ConfigurationError("projection probes need grad_w")
    probe = np.asarray(probe, dtype=float)
    x0, y0, x1, y1 = rect
    out = []
    for dx in levels:
        nx = round((x1 - x0) / dx)
        ny = round((y1 - y0) / dx)
        if abs(nx * dx - (x1 - x0)) > 1e-9 or abs(ny * dx - (y1 - y0)) > 1e-9:
            raise ConfigurationError(f"dx = {dx} does not tile the rectangle")
        mesh = build_patterned_rectangle_mesh(rect, nx, ny, pattern)
        node = mesh.node_at(probe)
        if node is None or mesh.is_boundary(node):
            raise ConfigurationError(
                f"probe {probe.tolist()} is not an interior mesh node at dx={dx}"
            )
        if field == "interpolant":
            vals = mesh.interpolate(w)
            measured = stiffness_action(mesh, vals, node)
            reference = -float(laplacian(probe))
        else:
            proj = elliptic_projection(mesh, w, grad_w)
            measured = stiffness_action(mesh, proj.values, node)
            reference = _stiffness_rhs(mesh, grad_w)[node] / mesh.hat_norms[node]
        if reference == 0.0:
            raise ConfigurationError("reference value vanishes at the probe")
        out.append(ConsistencyProbe(pattern=pattern, field=field, dx=float(dx),
                                    node=node, measured=float(measured),
                                    reference=float(reference),
                                    ratio=float(measured / reference)))
    return out


def convergence_study(problem, splitting, levels, exact, exact_gradient=None,
                      tol=None, max_iter: int = 50) -> list:
    """Solve on a list of (mesh, timegrid) levels and tabulate the errors.

    Returns one dict per level with mesh_size, h, linf_error, l2h1_error
    and the reduction factors relative to the previous level.
    """
    from .solver import backward_solve
    if len(levels) < 2:
        raise ConfigurationError("convergence study needs at least 2 levels")
    rows = []
    previous = None
    for mesh, timegrid in levels:
        solution, _ = backward_solve(problem, mesh, splitting, timegrid,
                                     tol=tol, max_iter=max_iter)
        report = compute_error_report(solution, exact, exact_gradient)
        row = {
            "mesh_size": report.mesh_size,
            "h": report.time_step,
            "linf_error": report.linf_error,
            "l2h1_error": report.l2h1_error,
            "linf_factor": float("nan"),
            "l2h1_factor": float("nan"),
        }
        if previous is not None:
            if report.linf_error > 0:
                row["linf_factor"] = previous["linf_error"] / report.linf_error
            if report.l2h1_error and report.l2h1_error > 0:
                row["l2h1_factor"] = previous["l2h1_error"] / report.l2h1_error
        rows.append(row)
        previous = row
    return rows


def coercivity_probe(ops: DiscreteOperatorSet, mesh: Mesh, timegrid: TimeGrid,
                     trials, control=0) -> float:
    """Empirical lower bound for the discrete space-time coercivity constant.

    Each trial is a (n_steps+1, n_nodes) array of nodal values: a
    non-negative discrete space-time function vanishing on the boundary,
    affine in time between levels.  For the selected control the probe
    evaluates the scheme's quadratic form

        sum_k <<(h E - Id) w_{k+1} + (h I + Id) w_k, w_k>>
        + 0.5 <<w_K, w_K>> + |w_K|_{H1}^2

    against the squared L2(H1) seminorm of the trial and returns the
    minimum ratio over trials; non-positive values flag that the
    coercivity screening fails on the trial set.  Zero-seminorm trials
    are skipped.  The pivot bracket << . , . >> weights interior nodes by
    their hat L1 norms.
    """
    k_ctrl = ops.control_index(control)
    N = mesh.n_interior
    stiff = stiffness_matrix(mesh)
    mass = mass_matrix(mesh)
    hat = mesh.hat_norms[:N]
    h = timegrid.step
    mat_e = ops.explicit[k_ctrl]
    mat_i = ops.implicit[k_ctrl]
    src_identity = sp.eye(N, mesh.n_nodes, format="csr")

    def pivot(row_values, u):
        return float(np.sum(u[:N] * row_values * hat))

    best = None
    for trial in trials:
        w = np.asarray(trial, dtype=float)
        if w.shape != (timegrid.n_steps + 1, mesh.n_nodes):
            raise ConfigurationError(
                f"trial shape {w.shape} does not match the grid and mesh"
            )
        if w.min() < -1e-12:
            raise ConfigurationError("trial fields must be non-negative")
        if np.abs(w[:, N:]).max() > 1e-12:
            raise ConfigurationError("trial fields must vanish on the boundary")
        seminorm_sq = 0.0
        for k in range(timegrid.n_steps):
            a, b = w[k], w[k + 1]
            seminorm_sq += h / 3.0 * float(a @ (stiff @ a) + a @ (stiff @ b)
                                           + b @ (stiff @ b))
        if seminorm_sq <= 1e-14:
            continue  # zero-seminorm trial: skipped
        quad = 0.0
        for k in range(timegrid.n_steps):
            row_next = h * (mat_e @ w[k + 1]) - src_identity @ w[k + 1]
            row_curr = h * (mat_i @ w[k]) + src_identity @ w[k]
            quad += pivot(row_next + row_curr, w[k])
        w_final = w[timegrid.n_steps]
        quad += 0.5 * float(np.sum(w_final[:N] ** 2 * hat))
        quad += float(w_final @ (stiff @ w_final) + w_final @ (mass @ w_final))
        ratio = quad / seminorm_sq
        best = ratio if best is None else min(best, ratio)
    if best is None:
        raise ConfigurationError("all trials had zero seminorm")
    return float(best)
