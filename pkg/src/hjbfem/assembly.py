"""Assembly of the per-control discrete operators and their certification.

Row l of an assembled operator realizes, with the normalized hat of the
interior node l as test function,

    a(y_l) <grad w, grad hat_l> + <drift . grad w + reaction w, hat_l>

where a(y_l) is the augmented nodal diffusion from the budget.  Rows range
over interior nodes, columns over all nodes.  Quadrature: the stiffness
term is exact (P1 gradients are constant); drift, reaction and source
integrals evaluate the coefficient at the element centroid and integrate
the remaining polynomial exactly (consistent mass for the reaction term).
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError
from .mesh import Mesh
from .problem import DiffusionBudget, OperatorSplitting

_CERT_REL_TOL = 1e-12

PARTS = ("explicit", "implicit")


@dataclass(frozen=True)
class DiscreteOperatorSet:
    """Per-control sparse operators on interior rows.

    `explicit[k]` and `implicit[k]` are (N x n_nodes) CSR matrices for
    control k, `source[k]` the length-N source vector.  Immutable and
    shareable across workers.
    """

    mesh: Mesh
    controls: tuple
    mode: str
    explicit: tuple
    implicit: tuple
    source: tuple

    @property
    def n_controls(self):
        return len(self.controls)

    @property
    def n_interior(self):
        return self.mesh.n_interior

    def control_index(self, control):
        for i, label in enumerate(self.controls):
            if label == control:
                return i
        if isinstance(control, (int, np.integer)) and 0 <= control < self.n_controls:
            return int(control)
        raise ConfigurationError(f"unknown control {control!r}")

    def part(self, control, part):
        if part not in PARTS:
            raise ConfigurationError(f"part must be one of {PARTS}")
        k = self.control_index(control)
        return self.explicit[k] if part == "explicit" else self.implicit[k]

    def apply(self, control, part, w):
        """Matrix-vector product of the selected part; w has one value per node."""
        w = np.asarray(w, dtype=float)
        if w.shape != (self.mesh.n_nodes,):
            raise ConfigurationError(
                f"vector has shape {w.shape}, expected ({self.mesh.n_nodes},)"
            )
        return self.part(control, part) @ w

    def is_explicit_scheme(self):
        """True when every implicit operator is structurally zero."""
        return all(mat.nnz == 0 for mat in self.implicit)


def assemble(mesh: Mesh, splitting: OperatorSplitting,
             budget: DiffusionBudget) -> DiscreteOperatorSet:
    """Assemble explicit/implicit operators and source vectors per control."""
    if budget.mesh is not mesh:
        raise ConfigurationError("budget was computed for a different mesh")
    if splitting.dimension != mesh.dimension:
        raise ConfigurationError("splitting dimension does not match the mesh")
    d = mesh.dimension
    N = mesh.n_interior
    n = mesh.n_nodes
    vols = mesh.volumes
    grads = mesh.gradients
    hat = mesh.hat_norms
    cent = mesh.centroids
    mass_diag = 2.0 / ((d + 1) * (d + 2))
    mass_off = 1.0 / ((d + 1) * (d + 2))

    explicit = []
    implicit = []
    source = []
    for k in range(splitting.n_controls):
        drift_e = np.array([splitting.drift_explicit[k](c) for c in cent])
        drift_i = np.array([splitting.drift_implicit[k](c) for c in cent])
        react_e = np.array([splitting.reaction_explicit[k](c) for c in cent])
        react_i = np.array([splitting.reaction_implicit[k](c) for c in cent])
        src = np.array([splitting.source[k](c) for c in cent])

        rows, cols, vals_e, vals_i = [], [], [], []
        cvec = np.zeros(N)
        for e, elem in enumerate(mesh.elements):
            v = vols[e]
            for l_loc, g in enumerate(elem):
                if g >= N:
                    continue
                gl = grads[e, l_loc]
                hn = hat[g]
                a_e = budget.diffusion_explicit_nodal[k, g]
                a_i = budget.diffusion_implicit_nodal[k, g]
                for j_loc, gj in enumerate(elem):
                    gjv = grads[e, j_loc]
                    stiff = v * float(gl @ gjv)
                    conv_e = float(drift_e[e] @ gjv) * v / (d + 1)
                    conv_i = float(drift_i[e] @ gjv) * v / (d + 1)
                    mass = v * (mass_diag if j_loc == l_loc else mass_off)
                    rows.append(g)
                    cols.append(gj)
                    vals_e.append((a_e * stiff + conv_e + react_e[e] * mass) / hn)
                    vals_i.append((a_i * stiff + conv_i + react_i[e] * mass) / hn)
                cvec[g] += src[e] * v / (d + 1) / hn

        mat_e = sp.coo_matrix((vals_e, (rows, cols)), shape=(N, n)).tocsr()
        mat_i = sp.coo_matrix((vals_i, (rows, cols)), shape=(N, n)).tocsr()
        mat_e.eliminate_zeros()
        mat_i.eliminate_zeros()
        explicit.append(mat_e)
        implicit.append(mat_i)
        source.append(cvec)

    return DiscreteOperatorSet(mesh, splitting.controls, splitting.mode,
                               tuple(explicit), tuple(implicit), tuple(source))


@dataclass(frozen=True)
class MonotonicityReport:
    """Structural certification of an operator set at time step h.

    Per control: `explicit_offdiag_ok` (off-diagonals of the explicit part
    non-positive), `lmp_ok` (implicit part: non-positive off-diagonals on
    all columns and non-negative full row sums, a sufficient criterion for
    the local monotonicity property) and `mmatrix_ok` (h*implicit + Id is
    strictly diagonally dominant with non-positive off-diagonals on the
    interior block).  `max_stable_h` is the largest admissible time step
    imposed by positive explicit diagonals (inf when there are none).
    """

    h: float
    explicit_offdiag_ok: tuple
    lmp_ok: tuple
    mmatrix_ok: tuple
    max_stable_h: float
    violations: tuple

    @property
    def admissible(self):
        return (all(self.explicit_offdiag_ok) and all(self.lmp_ok)
                and all(self.mmatrix_ok)
                and self.h <= self.max_stable_h * (1.0 + _CERT_REL_TOL))


def _offdiag_violation(mat, tol):
    """Largest positive off-diagonal entry, or None."""
    coo = mat.tocoo()
    mask = (coo.row != coo.col) & (coo.data > tol)
    if not mask.any():
        return None
    k = int(np.argmax(np.where(mask, coo.data, -np.inf)))
    return int(coo.row[k]), int(coo.col[k]), float(coo.data[k])


def certify_monotonicity(ops: DiscreteOperatorSet, h: float) -> MonotonicityReport:
    """Check the sign structure required for a monotone scheme.

    Failures are reported, not raised; the scheme is admissible iff all
    explicit off-diagonal checks and LMP checks pass and h does not
    exceed max_stable_h.
    """
    if not h > 0:
        raise ConfigurationError("time step must be positive")
    N = ops.n_interior
    expl_ok, lmp_ok, mm_ok = [], [], []
    violations = []
    max_stable = np.inf
    for k, label in enumerate(ops.controls):
        mat_e = ops.explicit[k]
        mat_i = ops.implicit[k]
        scale_e = max(1.0, float(np.abs(mat_e.data).max()) if mat_e.nnz else 1.0)
        scale_i = max(1.0, float(np.abs(mat_i.data).max()) if mat_i.nnz else 1.0)
        tol_e = _CERT_REL_TOL * scale_e
        tol_i = _CERT_REL_TOL * scale_i

        bad = _offdiag_violation(mat_e, tol_e)
        expl_ok.append(bad is None)
        if bad is not None:
            violations.append(
                f"control {label!r}: explicit entry ({bad[0]}, {bad[1]}) = "
                f"{bad[2]:.6g} > 0"
            )

        bad = _offdiag_violation(mat_i, tol_i)
        row_sums = np.asarray(mat_i.sum(axis=1)).ravel()
        sums_ok = bool(row_sums.min() >= -tol_i) if N else True
        lmp_ok.append(bad is None and sums_ok)
        if bad is not None:
            violations.append(
                f"control {label!r}: implicit entry ({bad[0]}, {bad[1]}) = "
                f"{bad[2]:.6g} > 0"
            )
        elif not sums_ok:
            r = int(np.argmin(row_sums))
            violations.append(
                f"control {label!r}: implicit row {r} sums to {row_sums[r]:.6g} < 0"
            )

        diag_e = mat_e.diagonal()[:N] if mat_e.shape[0] else np.zeros(0)
        positive = diag_e > tol_e
        if positive.any():
            max_stable = min(max_stable, float(1.0 / diag_e[positive].max()))

        interior = mat_i[:, :N]
        a_sys = (h * interior + sp.eye(N, format="csr")).tocsr()
        bad = _offdiag_violation(a_sys, tol_i * h)
        diag = a_sys.diagonal()
        off_abs = np.asarray(np.abs(a_sys).sum(axis=1)).ravel() - np.abs(diag)
        dominant = bool((diag - off_abs).min() > 0) if N else True
        mm_ok.append(bad is None and dominant)
        if bad is not None:
            violations.append(
                f"control {label!r}: h*implicit + Id entry ({bad[0]}, {bad[1]}) "
                f"= {bad[2]:.6g} > 0"
            )
        elif not dominant:
            r = int(np.argmin(diag - off_abs))
            violations.append(
                f"control {label!r}: h*implicit + Id row {r} not strictly dominant"
            )

    if h > max_stable * (1.0 + _CERT_REL_TOL):
        violations.append(
            f"time step {h:.6g} exceeds max stable step {max_stable:.6g}"
        )
    return MonotonicityReport(h=float(h),
                              explicit_offdiag_ok=tuple(expl_ok),
                              lmp_ok=tuple(lmp_ok),
                              mmatrix_ok=tuple(mm_ok),
                              max_stable_h=float(max_stable),
                              violations=tuple(violations))


def apply_operator(ops: DiscreteOperatorSet, control, part, w):
    """Functional alias of DiscreteOperatorSet.apply."""
    return ops.apply(control, part, w)


def dump_operators(ops: DiscreteOperatorSet, directory) -> list:
    """Write each operator part as 'row col value' triplets; returns the paths."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for k, label in enumerate(ops.controls):
        for part in PARTS:
            coo = ops.part(k, part).tocoo()
            path = os.path.join(directory, f"operator_{k}_{part}.txt")
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(f"# control {label!r} part {part}\n")
                for r, c, v in zip(coo.row, coo.col, coo.data):
                    fh.write(f"{r} {c} {format(v, '.17g')}\n")
            paths.append(path)
        path = os.path.join(directory, f"source_{k}.txt")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# control {label!r} source\n")
            for r, v in enumerate(ops.source[k]):
                fh.write(f"{r} {format(v, '.17g')}\n")
        paths.append(path)
    return paths


def stiffness_matrix(mesh: Mesh):
    """Exact P1 stiffness matrix over all nodes (n x n, CSR)."""
    rows, cols, vals = [], [], []
    for e, elem in enumerate(mesh.elements):
        v = mesh.volumes[e]
        g = mesh.gradients[e]
        local = v * (g @ g.T)
        for a in range(mesh.dimension + 1):
            for b in range(mesh.dimension + 1):
                rows.append(elem[a])
                cols.append(elem[b])
                vals.append(local[a, b])
    n = mesh.n_nodes
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def mass_matrix(mesh: Mesh):
    """Exact consistent P1 mass matrix over all nodes (n x n, CSR)."""
    d = mesh.dimension
    diag = 2.0 / ((d + 1) * (d + 2))
    off = 1.0 / ((d + 1) * (d + 2))
    rows, cols, vals = [], [], []
    for e, elem in enumerate(mesh.elements):
        v = mesh.volumes[e]
        for a in range(d + 1):
            for b in range(d + 1):
                rows.append(elem[a])
                cols.append(elem[b])
                vals.append(v * (diag if a == b else off))
    n = mesh.n_nodes
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
