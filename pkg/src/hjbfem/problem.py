"""Control problem data and the explicit/implicit splitting machinery.

A ControlProblem carries a finite list of controls with coefficient
fields (diffusion, drift, reaction, source), non-negative final data
vanishing on the boundary, and a horizon.  An OperatorSplitting divides
each control's operator into an explicitly and an implicitly treated
part; DiffusionBudget then sizes the artificial diffusion needed at each
interior node so the assembled operators are monotone on strictly acute
meshes.

Sup-norms of coefficient fields are approximated by sampling at element
vertices and centroids throughout; this is second-order accurate on
shape-regular meshes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, MonotonicityError
from .mesh import AcutenessCertificate, Mesh

_SIGN_TOL = 1e-12


def scalar_field(value):
    """Normalize a constant or callable x -> float into a callable."""
    if callable(value):
        return value
    const = float(value)
    return lambda x, _c=const: _c


def vector_field(value, dim):
    """Normalize a constant vector or callable x -> (d,) into a callable."""
    if callable(value):
        return lambda x, _f=value, _d=dim: np.asarray(_f(x), dtype=float).reshape(_d)
    const = np.asarray(value, dtype=float).reshape(dim)
    const.setflags(write=False)
    return lambda x, _c=const: _c


def _zero_scalar(x):
    return 0.0


def _scale_scalar(field, factor):
    if factor == 0.0:
        return _zero_scalar
    return lambda x, _f=field, _s=factor: _s * _f(x)


def _scale_vector(field, factor, dim):
    if factor == 0.0:
        return vector_field(np.zeros(dim), dim)
    return lambda x, _f=field, _s=factor: _s * _f(x)


def _sample_points(mesh):
    """Nodes plus element centroids; the standard sampling set for sup-norms."""
    return np.vstack([mesh.nodes, mesh.centroids])


class ControlProblem:
    """Finite-control HJB data on a fixed spatial domain.

    Parameters are per-control lists aligned with `controls`: `diffusion`
    (scalar, >= 0), `drift` (d-vector), `reaction` (scalar, >= 0) and
    `source` (scalar, >= 0); each entry is a constant or a callable of
    the spatial point.  `final_data` must be non-negative and vanish on
    the boundary; this is validated against a concrete mesh in
    validate_on().
    """

    def __init__(self, controls, diffusion, drift, reaction, source,
                 final_data, horizon, dimension):
        controls = tuple(controls)
        if not controls:
            raise ConfigurationError("control list must not be empty")
        for name, fields in (("diffusion", diffusion), ("drift", drift),
                             ("reaction", reaction), ("source", source)):
            if len(fields) != len(controls):
                raise ConfigurationError(
                    f"{name} has {len(fields)} entries for {len(controls)} controls"
                )
        if dimension not in (1, 2):
            raise ConfigurationError("dimension must be 1 or 2")
        if not horizon > 0:
            raise ConfigurationError("horizon must be positive")
        self.controls = controls
        self.dimension = int(dimension)
        self.diffusion = [scalar_field(f) for f in diffusion]
        self.drift = [vector_field(f, dimension) for f in drift]
        self.reaction = [scalar_field(f) for f in reaction]
        self.source = [scalar_field(f) for f in source]
        self.final_data = scalar_field(final_data)
        self.horizon = float(horizon)

    @property
    def n_controls(self):
        return len(self.controls)

    def control_index(self, control):
        """Resolve a control label (preferred) or a plain list index."""
        for i, label in enumerate(self.controls):
            if label == control:
                return i
        if isinstance(control, (int, np.integer)) and 0 <= control < self.n_controls:
            return int(control)
        raise ConfigurationError(f"unknown control {control!r}")

    def validate_on(self, mesh: Mesh) -> None:
        """Check sign conditions by sampling at nodes and element centroids."""
        if mesh.dimension != self.dimension:
            raise ConfigurationError(
                f"problem dimension {self.dimension} != mesh dimension {mesh.dimension}"
            )
        pts = _sample_points(mesh)
        for i, label in enumerate(self.controls):
            for name, field in (("reaction", self.reaction[i]),
                                ("source", self.source[i])):
                vals = np.array([field(p) for p in pts])
                if vals.min() < -_SIGN_TOL:
                    raise ConfigurationError(
                        f"{name} of control {label!r} is negative "
                        f"(min {vals.min():.3e})"
                    )
        final = np.array([self.final_data(x) for x in mesh.nodes])
        if final.min() < -_SIGN_TOL:
            raise ConfigurationError(
                f"final data is negative (min {final.min():.3e})"
            )
        bnd = final[mesh.n_interior:]
        if bnd.size and np.abs(bnd).max() > _SIGN_TOL * (1.0 + np.abs(final).max()):
            raise ConfigurationError(
                "final data does not vanish on the boundary "
                f"(max |value| {np.abs(bnd).max():.3e})"
            )


class OperatorSplitting:
    """Explicit/implicit decomposition of each control's operator.

    The diffusion seeds are the parts of the second-order coefficient
    assigned to each side before artificial diffusion is added; drift and
    reaction are split exactly.  In `explicit` mode all implicit fields
    are identically zero (and vice versa); `semi-implicit` splits by the
    explicit fractions (diffusion, drift, reaction) given at creation.
    """

    MODES = ("explicit", "implicit", "semi-implicit")

    def __init__(self, mode, controls, diffusion_explicit, diffusion_implicit,
                 drift_explicit, drift_implicit, reaction_explicit,
                 reaction_implicit, source, dimension, gamma=None):
        if mode not in self.MODES:
            raise ConfigurationError(f"unknown splitting mode {mode!r}")
        self.mode = mode
        self.controls = tuple(controls)
        self.dimension = int(dimension)
        self.diffusion_explicit = [scalar_field(f) for f in diffusion_explicit]
        self.diffusion_implicit = [scalar_field(f) for f in diffusion_implicit]
        self.drift_explicit = [vector_field(f, dimension) for f in drift_explicit]
        self.drift_implicit = [vector_field(f, dimension) for f in drift_implicit]
        self.reaction_explicit = [scalar_field(f) for f in reaction_explicit]
        self.reaction_implicit = [scalar_field(f) for f in reaction_implicit]
        self.source = [scalar_field(f) for f in source]
        self.gamma = None if gamma is None else float(gamma)

    @classmethod
    def from_problem(cls, problem: ControlProblem, mode: str,
                     explicit_fractions=(0.5, 0.5, 0.5), gamma=None):
        """Build the standard splittings.

        `implicit` treats everything implicitly (unconditionally stable),
        `explicit` the reverse; `semi-implicit` assigns the given explicit
        fractions of (diffusion, drift, reaction).  The discrete source is
        the identity approximation of the problem's source.
        """
        d = problem.dimension
        n = problem.n_controls
        zero_s = [_zero_scalar] * n
        zero_v = [vector_field(np.zeros(d), d)] * n
        if mode == "explicit":
            parts = (problem.diffusion, zero_s, problem.drift, zero_v,
                     problem.reaction, zero_s)
        elif mode == "implicit":
            parts = (zero_s, problem.diffusion, zero_v, problem.drift,
                     zero_s, problem.reaction)
        elif mode == "semi-implicit":
            fa, fb, fc = (float(f) for f in explicit_fractions)
            for f in (fa, fb, fc):
                if not 0.0 <= f <= 1.0:
                    raise ConfigurationError("explicit fractions must lie in [0, 1]")
            parts = (
                [_scale_scalar(f, fa) for f in problem.diffusion],
                [_scale_scalar(f, 1 - fa) for f in problem.diffusion],
                [_scale_vector(f, fb, d) for f in problem.drift],
                [_scale_vector(f, 1 - fb, d) for f in problem.drift],
                [_scale_scalar(f, fc) for f in problem.reaction],
                [_scale_scalar(f, 1 - fc) for f in problem.reaction],
            )
        else:
            raise ConfigurationError(f"unknown splitting mode {mode!r}")
        return cls(mode, problem.controls, *parts, source=list(problem.source),
                   dimension=d, gamma=gamma)

    @property
    def n_controls(self):
        return len(self.controls)

    def validate_on(self, mesh: Mesh) -> float:
        """Sign checks plus the reaction bound; returns the effective gamma."""
        pts = _sample_points(mesh)
        bound = 0.0
        for i, label in enumerate(self.controls):
            ce = np.array([self.reaction_explicit[i](p) for p in pts])
            ci = np.array([self.reaction_implicit[i](p) for p in pts])
            if min(ce.min(), ci.min()) < -_SIGN_TOL:
                raise ConfigurationError(
                    f"split reaction of control {label!r} is negative"
                )
            bound = max(bound, float(ce.max() + ci.max()))
            if self.mode in ("explicit", "implicit"):
                off = "implicit" if self.mode == "explicit" else "explicit"
                fields = {
                    "implicit": (self.diffusion_implicit[i], self.reaction_implicit[i],
                                 self.drift_implicit[i]),
                    "explicit": (self.diffusion_explicit[i], self.reaction_explicit[i],
                                 self.drift_explicit[i]),
                }[off]
                worst = max(
                    max(abs(float(fields[0](p))) for p in pts),
                    max(abs(float(fields[1](p))) for p in pts),
                    max(float(np.abs(fields[2](p)).max()) for p in pts),
                )
                if worst > _SIGN_TOL:
                    raise ConfigurationError(
                        f"mode {self.mode!r} requires zero {off} fields "
                        f"(control {label!r} has |value| up to {worst:.3e})"
                    )
        if self.gamma is not None and self.gamma < bound - _SIGN_TOL:
            raise ConfigurationError(
                f"stored reaction bound {self.gamma} below sampled bound {bound:.6g}"
            )
        return bound if self.gamma is None else self.gamma


@dataclass(frozen=True)
class DiffusionBudget:
    """Per-node artificial diffusion and the augmented nodal diffusions.

    nu_* have shape (n_controls, n_interior); diffusion_*_nodal hold
    max(seed(y), nu) and are the coefficients the assembly uses for the
    second-order terms.
    """

    mesh: Mesh
    nu_explicit: np.ndarray
    nu_implicit: np.ndarray
    diffusion_explicit_nodal: np.ndarray
    diffusion_implicit_nodal: np.ndarray

    def __post_init__(self):
        for arr in (self.nu_explicit, self.nu_implicit,
                    self.diffusion_explicit_nodal, self.diffusion_implicit_nodal):
            arr.setflags(write=False)


def _element_lower_order_stats(mesh, drift, reaction):
    """Per element: Euclidean sup of the drift and sup of the reaction.

    Component-wise sup-norms are taken over vertex and centroid samples,
    then combined into |drift|_T; the reaction sup is over the same
    samples.
    """
    m = mesh.n_elements
    bnorm = np.zeros(m)
    cmax = np.zeros(m)
    verts = mesh.nodes[mesh.elements]  # (m, d+1, d)
    for e in range(m):
        pts = np.vstack([verts[e], mesh.centroids[e][None, :]])
        bvals = np.array([drift(p) for p in pts])  # (d+2, d)
        bnorm[e] = float(np.linalg.norm(np.abs(bvals).max(axis=0)))
        cmax[e] = float(max(abs(reaction(p)) for p in pts))
    return bnorm, cmax


def _minimal_nu(mesh, sin_theta, bnorm, cmax):
    """Smallest per-node nu satisfying the patch-wise stabilization bound.

    For every element T in the patch of an interior node the inequality

        (|drift|_T + diam(T) * sup_T reaction) * (integral of the
        normalized hat over T)  <=  nu * sin_theta * |grad hat|_T * vol(T)

    must hold; equality is attained at the binding element.  Writing the
    hat integral as vol(T) / ((d+1) * |hat|_L1) this reduces to
    nu = max_T (|drift|_T + diam(T) c_T) / ((d+1) sin_theta |grad phi|_T).
    """
    d = mesh.dimension
    N = mesh.n_interior
    nu = np.zeros(N)
    for node in range(N):
        worst = 0.0
        for e in mesh.patches[node]:
            load = bnorm[e] + mesh.diameters[e] * cmax[e]
            if load == 0.0:
                continue
            gnorm = float(np.linalg.norm(
                mesh.gradients[e, mesh.local_index(e, node)]))
            worst = max(worst, load / ((d + 1) * sin_theta * gnorm))
        nu[node] = worst
    return nu


def compute_diffusion_budget(mesh: Mesh, splitting: OperatorSplitting,
                             certificate: AcutenessCertificate) -> DiffusionBudget:
    """Minimal artificial diffusion making both operator parts monotone.

    Requires a strictly acute mesh.  Per control and interior node the
    returned nu is the smallest value satisfying the stabilization bound
    on every patch element, so it scales like O(|drift| dx + reaction dx^2).
    """
    if not certificate.strictly_acute:
        elem, na, nb = certificate.worst_pair
        raise MonotonicityError(
            "mesh is not strictly acute (sin_theta = "
            f"{certificate.sin_theta:.6g} attained on element {elem} by the "
            f"hat gradients of nodes {na} and {nb}); a monotone scheme "
            "cannot be constructed"
        )
    n_ctrl = splitting.n_controls
    N = mesh.n_interior
    nu_e = np.zeros((n_ctrl, N))
    nu_i = np.zeros((n_ctrl, N))
    a_e = np.zeros((n_ctrl, N))
    a_i = np.zeros((n_ctrl, N))
    interior = mesh.nodes[:N]
    for k in range(n_ctrl):
        be, ce = _element_lower_order_stats(
            mesh, splitting.drift_explicit[k], splitting.reaction_explicit[k])
        bi, ci = _element_lower_order_stats(
            mesh, splitting.drift_implicit[k], splitting.reaction_implicit[k])
        nu_e[k] = _minimal_nu(mesh, certificate.sin_theta, be, ce)
        nu_i[k] = _minimal_nu(mesh, certificate.sin_theta, bi, ci)
        seed_e = np.array([splitting.diffusion_explicit[k](x) for x in interior])
        seed_i = np.array([splitting.diffusion_implicit[k](x) for x in interior])
        a_e[k] = np.maximum(seed_e, nu_e[k])
        a_i[k] = np.maximum(seed_i, nu_i[k])
    return DiffusionBudget(mesh, nu_e, nu_i, a_e, a_i)


def fixed_diffusion_budget(mesh: Mesh, splitting: OperatorSplitting,
                           explicit_value: float = 0.0,
                           implicit_value: float = 0.0) -> DiffusionBudget:
    """Budget with user-forced constant artificial diffusion.

    Bypasses the minimal-nu computation; monotonicity is then whatever
    certify_monotonicity reports for the assembled operators.
    """
    if explicit_value < 0 or implicit_value < 0:
        raise ConfigurationError("forced artificial diffusion must be >= 0")
    n_ctrl = splitting.n_controls
    N = mesh.n_interior
    interior = mesh.nodes[:N]
    nu_e = np.full((n_ctrl, N), float(explicit_value))
    nu_i = np.full((n_ctrl, N), float(implicit_value))
    a_e = np.zeros((n_ctrl, N))
    a_i = np.zeros((n_ctrl, N))
    for k in range(n_ctrl):
        seed_e = np.array([splitting.diffusion_explicit[k](x) for x in interior])
        seed_i = np.array([splitting.diffusion_implicit[k](x) for x in interior])
        a_e[k] = np.maximum(seed_e, nu_e[k])
        a_i[k] = np.maximum(seed_i, nu_i[k])
    return DiffusionBudget(mesh, nu_e, nu_i, a_e, a_i)


def splitting_consistency_residual(mesh: Mesh, problem: ControlProblem,
                                   splitting: OperatorSplitting,
                                   budget: DiffusionBudget) -> float:
    """Sup over controls and interior nodes of the splitting defect.

    Measures how far the augmented split coefficients are from the
    problem's coefficients on each hat support; sup-norms are sampled at
    the patch's nodes and element centroids.  For mesh-independent
    lower-order splittings the only surviving term is the artificial
    diffusion itself, which vanishes under refinement.
    """
    if budget.mesh is not mesh:
        raise ConfigurationError("budget was computed for a different mesh")
    worst = 0.0
    for node in range(mesh.n_interior):
        elems = mesh.patches[node]
        pts = np.vstack([
            mesh.nodes[np.unique(mesh.elements[elems])],
            mesh.centroids[elems],
        ])
        for k in range(problem.n_controls):
            a_total = (budget.diffusion_explicit_nodal[k, node]
                       + budget.diffusion_implicit_nodal[k, node])
            term_a = max(abs(problem.diffusion[k](p) - a_total) for p in pts)
            term_b = max(
                float(np.linalg.norm(
                    problem.drift[k](p)
                    - splitting.drift_explicit[k](p)
                    - splitting.drift_implicit[k](p)))
                for p in pts)
            term_c = max(
                abs(problem.reaction[k](p)
                    - splitting.reaction_explicit[k](p)
                    - splitting.reaction_implicit[k](p))
                for p in pts)
            term_d = max(abs(problem.source[k](p) - splitting.source[k](p))
                         for p in pts)
            worst = max(worst, term_a + term_b + term_c + term_d)
    return worst
