"""Backward-in-time solution of the discrete HJB system by policy iteration.

Each time level solves the nonlinear system

    -(v_next - v_curr)/h + max over controls of
        (E v_next + I v_curr - C) = 0      (interior rows)

by Howard's method: select the row-wise maximizing control, solve the
resulting linear system with h*I + Id on the left, repeat until the
policy is stationary or the residual drops below tolerance.  When every
implicit operator is zero the level reduces to one explicit sweep.

Time levels are strictly sequential; everything within a level is pure
linear algebra on immutable inputs.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
import warnings

from .assembly import DiscreteOperatorSet, assemble, certify_monotonicity
from .errors import (ConfigurationError, MonotonicityError, NonConvergenceError,
                     QueryError, SolverError)
from .mesh import Mesh, acuteness_certificate
from .problem import ControlProblem, DiffusionBudget, OperatorSplitting, \
    compute_diffusion_budget

_DIRECT_SOLVE_LIMIT = 20_000
_LINEAR_TOL = 1e-11


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time levels s_k = k*h for k = 0..horizon/h."""

    horizon: float
    step: float
    n_steps: int
    levels: np.ndarray

    @classmethod
    def make(cls, horizon: float, step: float) -> "TimeGrid":
        if not horizon > 0 or not step > 0:
            raise ConfigurationError("horizon and time step must be positive")
        ratio = horizon / step
        n = round(ratio)
        if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, ratio):
            raise ConfigurationError(
                f"horizon/step = {ratio:.12g} is not a positive integer"
            )
        levels = np.linspace(0.0, horizon, n + 1)
        levels.setflags(write=False)
        return cls(horizon=float(horizon), step=float(step), n_steps=int(n),
                   levels=levels)


class DiscreteSolution:
    """Node values at every time level, affine in time between levels."""

    def __init__(self, mesh: Mesh, timegrid: TimeGrid, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape != (timegrid.n_steps + 1, mesh.n_nodes):
            raise ConfigurationError(
                f"values shape {values.shape} does not match grid/mesh"
            )
        values.setflags(write=False)
        self.mesh = mesh
        self.timegrid = timegrid
        self.values = values

    def _bracket(self, t):
        tg = self.timegrid
        if t < -1e-12 or t > tg.horizon * (1 + 1e-12):
            raise QueryError(f"time {t} outside [0, {tg.horizon}]")
        t = min(max(t, 0.0), tg.horizon)
        k = min(int(t / tg.step), tg.n_steps - 1)
        theta = (tg.levels[k + 1] - t) / tg.step
        return k, theta

    def values_at(self, t):
        """Nodal values at time t (affine interpolation between levels)."""
        k, theta = self._bracket(t)
        return theta * self.values[k] + (1.0 - theta) * self.values[k + 1]

    def __call__(self, t, x):
        k, theta = self._bracket(t)
        elem, weights = self.mesh.locate(x)
        nodal = (theta * self.values[k, self.mesh.elements[elem]]
                 + (1.0 - theta) * self.values[k + 1, self.mesh.elements[elem]])
        return float(weights @ nodal)

    def gradient(self, t, x):
        """Spatial gradient at (t, x); constant per element, affine in time."""
        k, theta = self._bracket(t)
        elem, _ = self.mesh.locate(x)
        nodal = (theta * self.values[k, self.mesh.elements[elem]]
                 + (1.0 - theta) * self.values[k + 1, self.mesh.elements[elem]])
        return nodal @ self.mesh.gradients[elem]


def evaluate(solution: DiscreteSolution, t: float, x) -> float:
    return solution(t, x)


def evaluate_gradient(solution: DiscreteSolution, t: float, x) -> np.ndarray:
    return solution.gradient(t, x)


@dataclass
class HowardStepRecord:
    """One time level: solve count, residual history, selected policy."""

    level: int
    iteration_count: int
    residual_history: tuple
    final_policy: np.ndarray


@dataclass
class PolicyIterationReport:
    """Per-level records in execution order (final level first)."""

    records: list = field(default_factory=list)

    def for_level(self, k):
        for rec in self.records:
            if rec.level == k:
                return rec
        raise KeyError(f"no record for level {k}")

    @property
    def iteration_counts(self):
        return [rec.iteration_count for rec in self.records]

    @property
    def total_iterations(self):
        return sum(self.iteration_counts)


def solve_mmatrix_system(matrix, rhs, tol: float = _LINEAR_TOL) -> np.ndarray:
    """Solve matrix @ x = rhs for a (presumed) strictly dominant M-matrix.

    Direct sparse elimination up to 20k unknowns, BiCGStab beyond.  The
    contract is the residual bound, enforced here; a singular or badly
    conditioned system raises SolverError.
    """
    rhs = np.asarray(rhs, dtype=float)
    n = rhs.shape[0]
    matrix = sp.csc_matrix(matrix)
    if matrix.shape != (n, n):
        raise ConfigurationError(
            f"matrix shape {matrix.shape} does not match rhs length {n}"
        )
    if n <= _DIRECT_SOLVE_LIMIT:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", spla.MatrixRankWarning)
            x = spla.spsolve(matrix, rhs)
    else:
        diag = matrix.diagonal()
        precond = spla.LinearOperator((n, n), matvec=lambda v: v / diag)
        x, info = spla.bicgstab(matrix, rhs, rtol=tol / 10.0, atol=0.0,
                                M=precond, maxiter=20 * n)
        if info != 0:
            raise SolverError(f"iterative solve failed (bicgstab info={info})")
    if not np.all(np.isfinite(x)):
        raise SolverError(
            "linear system is singular; the scheme's M-matrix certification "
            "was skipped or has been violated"
        )
    residual = float(np.abs(matrix @ x - rhs).max())
    bound = tol * (1.0 + float(np.abs(rhs).max()))
    if residual > bound:
        raise SolverError(
            f"linear solve residual {residual:.3e} exceeds bound {bound:.3e}"
        )
    return x


def select_policy(ops: DiscreteOperatorSet, v_next, v_curr):
    """Row-wise maximizing control of E v_next + I v_curr - C.

    Ties break toward the lowest control index.  Returns the policy and
    the operators assembled by copying row l from the selected control.
    """
    if ops.n_controls == 0:
        raise ConfigurationError("control list must not be empty")
    v_next = np.asarray(v_next, dtype=float)
    v_curr = np.asarray(v_curr, dtype=float)
    scores = np.stack([
        ops.explicit[k] @ v_next + ops.implicit[k] @ v_curr - ops.source[k]
        for k in range(ops.n_controls)
    ])
    policy = np.argmax(scores, axis=0)  # first maximizer wins
    return (policy,) + _reshuffle(ops, policy)


def _reshuffle(ops, policy):
    """Operators whose row l is copied from control policy[l]."""
    N = ops.n_interior
    sel_e = None
    sel_i = None
    sel_c = np.zeros(N)
    for k in range(ops.n_controls):
        mask = (policy == k).astype(float)
        if not mask.any():
            continue
        chooser = sp.diags(mask)
        contrib_e = chooser @ ops.explicit[k]
        contrib_i = chooser @ ops.implicit[k]
        sel_e = contrib_e if sel_e is None else sel_e + contrib_e
        sel_i = contrib_i if sel_i is None else sel_i + contrib_i
        sel_c += mask * ops.source[k]
    return sel_e.tocsr(), sel_i.tocsr(), sel_c


def eq_residual(ops: DiscreteOperatorSet, v_next, v_curr, h: float) -> float:
    """Sup-norm residual of the time-level system, evaluated from scratch."""
    v_next = np.asarray(v_next, dtype=float)
    v_curr = np.asarray(v_curr, dtype=float)
    N = ops.n_interior
    best = np.max(np.stack([
        ops.explicit[k] @ v_next + ops.implicit[k] @ v_curr - ops.source[k]
        for k in range(ops.n_controls)
    ]), axis=0)
    res = -(v_next[:N] - v_curr[:N]) / h + best
    return float(np.abs(res).max()) if N else 0.0


def _policy_system_solve(ops, sel_e, sel_i, sel_c, v_next, h, lin_tol):
    N = ops.n_interior
    matrix = h * sel_i[:, :N] + sp.eye(N, format="csr")
    rhs = h * sel_c - h * (sel_e @ v_next) + v_next[:N]
    w = np.zeros(ops.mesh.n_nodes)
    w[:N] = solve_mmatrix_system(matrix, rhs, lin_tol)
    return w


def howard_solve_step(ops: DiscreteOperatorSet, v_next, h: float, tol: float,
                      max_iter: int = 50, level: int = -1) -> tuple:
    """Solve one backward time level.

    Returns (v_curr, HowardStepRecord).  Assumes certify_monotonicity
    passed for this h.  Raises NonConvergenceError with the residual
    history if the iteration budget is exhausted.
    """
    if not tol > 0:
        raise ConfigurationError("tolerance must be positive")
    if max_iter < 1:
        raise ConfigurationError("max_iter must be at least 1")
    v_next = np.asarray(v_next, dtype=float)
    N = ops.n_interior

    if ops.is_explicit_scheme():
        scores = np.stack([
            ops.explicit[k] @ v_next - ops.source[k]
            for k in range(ops.n_controls)
        ])
        policy = np.argmax(scores, axis=0)
        v_curr = np.zeros_like(v_next)
        v_curr[:N] = v_next[:N] - h * scores[policy, np.arange(N)]
        res = eq_residual(ops, v_next, v_curr, h)
        return v_curr, HowardStepRecord(level, 1, (res,), policy)

    lin_tol = min(_LINEAR_TOL, tol / 10.0)
    prev_policy = np.zeros(N, dtype=int)  # arbitrary start: first control
    sel = _reshuffle(ops, prev_policy)
    w = _policy_system_solve(ops, *sel, v_next, h, lin_tol)
    solves = 1
    history = []
    while True:
        policy, sel_e, sel_i, sel_c = select_policy(ops, v_next, w)
        res = eq_residual(ops, v_next, w, h)
        history.append(res)
        if res <= tol or np.array_equal(policy, prev_policy):
            return w, HowardStepRecord(level, solves, tuple(history), policy)
        if solves >= max_iter:
            raise NonConvergenceError(
                f"policy iteration did not reach tolerance {tol:.3e} within "
                f"{max_iter} solves (last residual {res:.3e})",
                residual_history=history,
            )
        w = _policy_system_solve(ops, sel_e, sel_i, sel_c, v_next, h, lin_tol)
        solves += 1
        prev_policy = policy


def default_tolerance(ops: DiscreteOperatorSet) -> float:
    """1e-10 * (1 + sup-norm of the source vectors)."""
    top = max((float(np.abs(c).max()) if c.size else 0.0) for c in ops.source)
    return 1e-10 * (1.0 + top)


def _prepare(problem, mesh, splitting, timegrid, budget, operators):
    problem.validate_on(mesh)
    splitting.validate_on(mesh)
    if budget is None:
        budget = compute_diffusion_budget(mesh, splitting,
                                          acuteness_certificate(mesh))
    ops = operators if operators is not None else assemble(mesh, splitting, budget)
    report = certify_monotonicity(ops, timegrid.step)
    if not report.admissible:
        detail = "; ".join(report.violations) or "certification failed"
        raise MonotonicityError(
            f"refusing to run a non-monotone scheme: {detail}"
        )
    final = mesh.interpolate(problem.final_data)
    return ops, final


def backward_solve(problem: ControlProblem, mesh: Mesh,
                   splitting: OperatorSplitting, timegrid: TimeGrid,
                   tol: float = None, max_iter: int = 50,
                   budget: DiffusionBudget = None,
                   operators: DiscreteOperatorSet = None):
    """Full backward sweep from the final data.

    Certifies monotonicity first and refuses to run on failure.  Returns
    (DiscreteSolution, PolicyIterationReport).
    """
    ops, final = _prepare(problem, mesh, splitting, timegrid, budget, operators)
    if tol is None:
        tol = default_tolerance(ops)
    values = np.zeros((timegrid.n_steps + 1, mesh.n_nodes))
    values[timegrid.n_steps] = final
    report = PolicyIterationReport()
    for k in range(timegrid.n_steps - 1, -1, -1):
        v_curr, rec = howard_solve_step(ops, values[k + 1], timegrid.step,
                                        tol, max_iter, level=k)
        values[k] = v_curr
        report.records.append(rec)
    return DiscreteSolution(mesh, timegrid, values), report


def fixed_control_solve(problem: ControlProblem, mesh: Mesh,
                        splitting: OperatorSplitting, timegrid: TimeGrid,
                        control, tol: float = None,
                        budget: DiffusionBudget = None,
                        operators: DiscreteOperatorSet = None) -> DiscreteSolution:
    """Linear evolution for one frozen control; no policy iteration."""
    ops, final = _prepare(problem, mesh, splitting, timegrid, budget, operators)
    k_ctrl = ops.control_index(control)
    if tol is None:
        tol = default_tolerance(ops)
    lin_tol = min(_LINEAR_TOL, tol / 10.0)
    N = ops.n_interior
    mat_e = ops.explicit[k_ctrl]
    mat_i = ops.implicit[k_ctrl]
    src = ops.source[k_ctrl]
    h = timegrid.step
    values = np.zeros((timegrid.n_steps + 1, mesh.n_nodes))
    values[timegrid.n_steps] = final
    system = h * mat_i[:, :N] + sp.eye(N, format="csr")
    for k in range(timegrid.n_steps - 1, -1, -1):
        rhs = h * src - h * (mat_e @ values[k + 1]) + values[k + 1, :N]
        if mat_i.nnz == 0:
            values[k, :N] = rhs
        else:
            values[k, :N] = solve_mmatrix_system(system, rhs, lin_tol)
    return DiscreteSolution(mesh, timegrid, values)


def _fmt(x):
    return format(float(x), ".17g")


def dump_solution(solution: DiscreteSolution, path) -> None:
    """CSV rows (k, s_k, node, coordinates..., value)."""
    mesh = solution.mesh
    coord_cols = ["x"] if mesh.dimension == 1 else ["x", "y"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "s", "node"] + coord_cols + ["value"])
        for k, s in enumerate(solution.timegrid.levels):
            for node in range(mesh.n_nodes):
                coords = [_fmt(c) for c in mesh.nodes[node]]
                writer.writerow([k, _fmt(s), node] + coords
                                + [_fmt(solution.values[k, node])])


def dump_policy(report: PolicyIterationReport, path) -> None:
    """CSV rows (k, node, control_index) for interior nodes."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "node", "control_index"])
        for rec in sorted(report.records, key=lambda r: r.level):
            for node, ctrl in enumerate(rec.final_policy):
                writer.writerow([rec.level, node, int(ctrl)])


def dump_report(report: PolicyIterationReport, path) -> None:
    """CSV rows (k, iteration, residual)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "iteration", "residual"])
        for rec in sorted(report.records, key=lambda r: r.level):
            for i, res in enumerate(rec.residual_history):
                writer.writerow([rec.level, i, _fmt(res)])
