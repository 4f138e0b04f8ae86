"""Simplicial meshes (1D intervals, 2D triangles) with hat-function geometry.

Nodes are reordered at construction so that interior nodes come first;
per-element volumes, diameters and the constant gradients of the P1 hat
functions are precomputed.  Meshes are immutable after construction and
safe to share across workers.

Boundary detection is purely combinatorial: a node is a boundary node iff
it lies on a facet (endpoint in 1D, edge in 2D) that belongs to exactly
one element.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, MeshFormatError, QueryError

_BARY_TOL = 1e-9

RECT_PATTERNS = ("consistent", "inconsistent", "equilateral")


def _boundary_mask(n_nodes, elements):
    """Mark boundary nodes via facet counting.

    A facet is an element face of codimension one.  Facets incident to a
    single element lie on the boundary; more than two incidences means
    the connectivity is not a manifold triangulation.
    """
    d = elements.shape[1] - 1
    counts = {}
    for elem in elements:
        for omit in range(d + 1):
            facet = tuple(sorted(int(g) for i, g in enumerate(elem) if i != omit))
            counts[facet] = counts.get(facet, 0) + 1
    mask = np.zeros(n_nodes, dtype=bool)
    for facet, c in counts.items():
        if c > 2:
            raise ConfigurationError(
                f"facet {facet} shared by {c} elements; mesh is not a manifold"
            )
        if c == 1:
            mask[list(facet)] = True
    return mask


class Mesh:
    """P1 simplicial mesh with interior-first node ordering.

    Attributes:
        dimension: 1 or 2.
        nodes: (n_nodes, dimension) coordinates, interior nodes first.
        elements: (n_elements, dimension+1) node indices.
        n_interior: number of interior nodes N; indices 0..N-1 are interior.
        volumes: (n_elements,) element volumes (lengths/areas).
        diameters: (n_elements,) element diameters.
        gradients: (n_elements, dimension+1, dimension) hat gradients; row j
            is the gradient of the hat of local vertex j on that element.
        patches: per node, array of incident element indices.
        hat_norms: (n_nodes,) L1 norms of the nodal hat functions.
        input_to_internal: permutation mapping construction-order node
            indices to internal indices (useful for file-ordered data).
    """

    def __init__(self, nodes, elements):
        nodes = np.asarray(nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        if nodes.ndim != 2 or nodes.shape[1] not in (1, 2):
            raise ConfigurationError("nodes must have shape (n, 1) or (n, 2)")
        elements = np.asarray(elements, dtype=int)
        d = nodes.shape[1]
        if elements.ndim != 2 or elements.shape[1] != d + 1:
            raise ConfigurationError(
                f"elements must have shape (m, {d + 1}) for dimension {d}"
            )
        if elements.size == 0:
            raise ConfigurationError("mesh has no elements")
        if elements.min() < 0 or elements.max() >= len(nodes):
            raise ConfigurationError("element refers to a node that does not exist")

        boundary = _boundary_mask(len(nodes), elements)
        order = np.argsort(boundary, kind="stable")  # interior (False) first
        inverse = np.empty(len(order), dtype=int)
        inverse[order] = np.arange(len(order))

        self.dimension = d
        self.nodes = nodes[order]
        self.elements = inverse[elements]
        self.n_interior = int(np.count_nonzero(~boundary))
        self.input_to_internal = inverse

        self._build_geometry()
        for arr in (self.nodes, self.elements, self.volumes, self.diameters,
                    self.gradients, self.hat_norms, self.centroids):
            arr.setflags(write=False)

    def _build_geometry(self):
        d = self.dimension
        coords = self.nodes[self.elements]  # (m, d+1, d)
        edges = coords[:, 1:, :] - coords[:, :1, :]  # (m, d, d), rows are edges
        # Columns of the affine map are the edge vectors.
        maps = np.transpose(edges, (0, 2, 1))
        dets = np.linalg.det(maps)
        diam = np.zeros(len(coords))
        for a, b in itertools.combinations(range(d + 1), 2):
            diam = np.maximum(diam, np.linalg.norm(coords[:, a] - coords[:, b], axis=1))
        tiny = np.abs(dets) <= 1e-12 * diam**d
        if np.any(tiny):
            raise ConfigurationError(
                f"degenerate element {int(np.argmax(tiny))} (zero volume)"
            )
        inv_maps = np.linalg.inv(maps)
        grads = np.empty((len(coords), d + 1, d))
        grads[:, 1:, :] = inv_maps  # gradient of barycentric j is row j-1
        grads[:, 0, :] = -grads[:, 1:, :].sum(axis=1)

        self.volumes = np.abs(dets) / math.factorial(d)
        self.diameters = diam
        self.gradients = grads
        self.centroids = coords.mean(axis=1)
        self._origins = coords[:, 0, :]
        self._inv_maps = inv_maps

        patch_lists = [[] for _ in range(len(self.nodes))]
        for e, elem in enumerate(self.elements):
            for g in elem:
                patch_lists[g].append(e)
        self.patches = tuple(np.array(p, dtype=int) for p in patch_lists)

        hat = np.zeros(len(self.nodes))
        np.add.at(hat, self.elements.ravel(),
                  np.repeat(self.volumes / (d + 1), d + 1))
        self.hat_norms = hat

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_elements(self):
        return len(self.elements)

    def is_boundary(self, node):
        return node >= self.n_interior

    def local_index(self, element, node):
        """Position of `node` within `element`'s vertex tuple."""
        where = np.nonzero(self.elements[element] == node)[0]
        if len(where) == 0:
            raise ConfigurationError(f"node {node} not in element {element}")
        return int(where[0])

    def interpolate(self, f):
        """Nodal values of a scalar field f(x)."""
        return np.array([float(f(x)) for x in self.nodes])

    def locate(self, x):
        """Element index and barycentric weights of the point x.

        Raises QueryError if x lies outside the triangulated domain.
        """
        x = np.asarray(x, dtype=float).reshape(self.dimension)
        rel = x[None, :] - self._origins
        lam_rest = np.einsum("mij,mj->mi", self._inv_maps, rel)
        lam0 = 1.0 - lam_rest.sum(axis=1)
        lam = np.column_stack([lam0, lam_rest])
        inside = np.all(lam >= -_BARY_TOL, axis=1)
        if not inside.any():
            raise QueryError(f"point {x.tolist()} lies outside the mesh")
        elem = int(np.argmax(inside))
        weights = np.clip(lam[elem], 0.0, None)
        return elem, weights / weights.sum()

    def node_at(self, x, tol=1e-10):
        """Index of the mesh node coinciding with x, or None."""
        x = np.asarray(x, dtype=float).reshape(self.dimension)
        dist = np.linalg.norm(self.nodes - x[None, :], axis=1)
        k = int(np.argmin(dist))
        scale = max(1.0, float(np.abs(self.nodes).max()))
        return k if dist[k] <= tol * scale else None


@dataclass(frozen=True)
class AcutenessCertificate:
    """Worst-case angle condition between hat gradients on shared elements.

    sin_theta is the minimum over elements and distinct vertex pairs of
    -(g_a . g_b) / (|g_a| |g_b|); the mesh is strictly acute iff it is
    positive.  worst_pair = (element, node_a, node_b) attains the minimum.
    """

    sin_theta: float
    strictly_acute: bool
    worst_pair: tuple[int, int, int]


def acuteness_certificate(mesh: Mesh) -> AcutenessCertificate:
    d = mesh.dimension
    norms = np.linalg.norm(mesh.gradients, axis=2)  # (m, d+1)
    best = np.inf
    worst = (0, 0, 0)
    for a, b in itertools.combinations(range(d + 1), 2):
        dots = np.einsum("md,md->m", mesh.gradients[:, a], mesh.gradients[:, b])
        vals = -dots / (norms[:, a] * norms[:, b])
        k = int(np.argmin(vals))
        if vals[k] < best:
            best = float(vals[k])
            worst = (k, int(mesh.elements[k, a]), int(mesh.elements[k, b]))
    return AcutenessCertificate(sin_theta=best, strictly_acute=best > 0.0,
                                worst_pair=worst)


def hat_l1_norm(mesh: Mesh, node: int) -> float:
    """Exact L1 norm of the P1 hat at `node`: sum of vol(T)/(d+1) over its patch."""
    if not 0 <= node < mesh.n_nodes:
        raise ConfigurationError(f"node index {node} out of range")
    return float(mesh.hat_norms[node])


def mesh_size(mesh: Mesh) -> float:
    """Largest element diameter."""
    return float(mesh.diameters.max())


def build_interval_mesh(a: float, b: float, n_elements: int) -> Mesh:
    """Uniform 1D mesh of [a, b] with n_elements intervals."""
    if not b > a:
        raise ConfigurationError(f"invalid interval [{a}, {b}]")
    if n_elements < 2:
        raise ConfigurationError("interval mesh needs at least 2 elements")
    nodes = np.linspace(a, b, n_elements + 1)
    elements = np.column_stack([np.arange(n_elements), np.arange(1, n_elements + 1)])
    return Mesh(nodes, elements)


def build_patterned_rectangle_mesh(rect, nx: int, ny: int, pattern: str) -> Mesh:
    """Structured triangulations of an axis-aligned rectangle.

    rect is (x0, y0, x1, y1).  Patterns:

    * ``consistent``: every grid cell is cut along its lower-left to
      upper-right diagonal; interior nodes see the classical 5-point
      stencil through the assembled Laplacian.
    * ``inconsistent``: cells are cut along the diagonal joining their
      odd-parity corners, so nodes of even index parity are surrounded by
      exactly four diamond triangles (4-neighbour stencil).
    * ``equilateral``: offset rows of congruent equilateral triangles with
      side (x1-x0)/nx; rows that do not fit inside the rectangle height
      are discarded, so the covered region can be slightly shorter than
      the rectangle and has a ragged vertical edge.  Strictly acute.
    """
    try:
        x0, y0, x1, y1 = (float(v) for v in rect)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"rect must be (x0, y0, x1, y1): {exc}") from None
    if not (x1 > x0 and y1 > y0):
        raise ConfigurationError("rectangle has non-positive extent")
    if nx < 2 or ny < 2:
        raise ConfigurationError("rectangle mesh needs nx, ny >= 2")
    if pattern not in RECT_PATTERNS:
        raise ConfigurationError(
            f"unsupported pattern {pattern!r}; choose one of {RECT_PATTERNS}"
        )

    if pattern == "equilateral":
        return _equilateral_mesh(x0, y0, x1, y1, nx)

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    nodes = np.array([(x, y) for y in ys for x in xs])
    idx = lambda i, j: j * (nx + 1) + i
    elements = []
    for j in range(ny):
        for i in range(nx):
            ll, lr = idx(i, j), idx(i + 1, j)
            ul, ur = idx(i, j + 1), idx(i + 1, j + 1)
            if pattern == "consistent":
                elements.append((ll, lr, ur))
                elements.append((ll, ur, ul))
            else:  # inconsistent: cut along the odd-parity diagonal
                if (i + j) % 2 == 0:
                    elements.append((ll, lr, ul))
                    elements.append((lr, ur, ul))
                else:
                    elements.append((ll, lr, ur))
                    elements.append((ll, ur, ul))
    return Mesh(nodes, np.array(elements))


def _equilateral_mesh(x0, y0, x1, y1, nx):
    side = (x1 - x0) / nx
    row_height = side * math.sqrt(3.0) / 2.0
    n_rows = int(math.floor((y1 - y0) / row_height + 1e-12))
    if n_rows < 1:
        raise ConfigurationError(
            "rectangle too flat for an equilateral row; increase nx or the height"
        )
    nodes = []
    rows = []
    for j in range(n_rows + 1):
        y = y0 + j * row_height
        if j % 2 == 0:
            xs = [x0 + i * side for i in range(nx + 1)]
        else:
            xs = [x0 + side / 2.0 + i * side for i in range(nx)]
        rows.append(list(range(len(nodes), len(nodes) + len(xs))))
        nodes.extend((x, y) for x in xs)

    elements = []
    for j in range(n_rows):
        lo, hi = rows[j], rows[j + 1]
        if j % 2 == 0:
            # lo has nx+1 aligned nodes, hi has nx shifted nodes
            for i in range(nx):
                elements.append((lo[i], lo[i + 1], hi[i]))
            for i in range(nx - 1):
                elements.append((hi[i], lo[i + 1], hi[i + 1]))
        else:
            # lo has nx shifted nodes, hi has nx+1 aligned nodes
            for i in range(nx - 1):
                elements.append((lo[i], lo[i + 1], hi[i + 1]))
            for i in range(nx):
                elements.append((hi[i], hi[i + 1], lo[i]))
    return Mesh(np.array(nodes), np.array(elements))


def write_mesh(mesh: Mesh, path) -> None:
    """Plain-text mesh dump: header, nodes with boundary flag, 1-based elements."""
    lines = [f"{mesh.dimension} {mesh.n_nodes} {mesh.n_elements}"]
    for k, x in enumerate(mesh.nodes):
        coords = " ".join(format(v, ".17g") for v in x)
        lines.append(f"{coords} {1 if mesh.is_boundary(k) else 0}")
    for elem in mesh.elements:
        lines.append(" ".join(str(int(g) + 1) for g in elem))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    """Read the plain-text format written by write_mesh.

    Node ordering in the file is arbitrary; nodes are reclassified
    combinatorially and reordered interior-first.  The stored boundary
    flags are informational and not trusted.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            tokens = fh.read().split("\n")
    except OSError as exc:
        raise MeshFormatError(f"cannot read mesh file {path}: {exc}") from exc
    rows = [line.split() for line in tokens if line.strip()]
    if not rows or len(rows[0]) != 3:
        raise MeshFormatError("missing header line 'dim n_nodes n_elements'")
    try:
        dim, n_nodes, n_elements = (int(v) for v in rows[0])
        if dim not in (1, 2):
            raise ValueError(f"dimension {dim} not supported")
        if len(rows) != 1 + n_nodes + n_elements:
            raise ValueError(
                f"expected {1 + n_nodes + n_elements} lines, found {len(rows)}"
            )
        nodes = []
        for row in rows[1:1 + n_nodes]:
            if len(row) != dim + 1:
                raise ValueError(f"node line has {len(row)} fields, wanted {dim + 1}")
            nodes.append([float(v) for v in row[:dim]])
        elements = []
        for row in rows[1 + n_nodes:]:
            if len(row) != dim + 1:
                raise ValueError("element line has wrong number of vertices")
            elements.append([int(v) - 1 for v in row])
        return Mesh(np.array(nodes), np.array(elements))
    except (ValueError, ConfigurationError) as exc:
        raise MeshFormatError(f"invalid mesh file {path}: {exc}") from exc
