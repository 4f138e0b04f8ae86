import itertools
import math

import numpy as np
import pytest

from hjbfem import (ConfigurationError, MeshFormatError, acuteness_certificate,
                    build_interval_mesh, build_patterned_rectangle_mesh,
                    hat_l1_norm, mesh_size, read_mesh, write_mesh)
from hjbfem.mesh import Mesh


def test_interval_mesh_basic():
    mesh = build_interval_mesh(-1.0, 1.0, 4)
    assert mesh.n_nodes == 5
    assert mesh.n_interior == 3
    assert sorted(mesh.nodes.ravel()) == [-1.0, -0.5, 0.0, 0.5, 1.0]
    assert sorted(mesh.nodes[:3].ravel()) == [-0.5, 0.0, 0.5]
    assert mesh_size(mesh) == 0.5


def test_interval_mesh_single_interior_hat_gradient():
    mesh = build_interval_mesh(0.0, 1.0, 2)
    assert mesh.n_interior == 1
    assert mesh.nodes[0, 0] == 0.5
    # left element: hat of the interior node rises with slope 1/dx = 2
    left = [e for e in range(2) if mesh.centroids[e, 0] < 0.5][0]
    loc = mesh.local_index(left, 0)
    assert mesh.gradients[left, loc, 0] == pytest.approx(2.0)


def test_interval_mesh_size_and_acuteness():
    mesh = build_interval_mesh(-1.0, 1.0, 8)
    assert mesh_size(mesh) == 0.25
    cert = acuteness_certificate(mesh)
    assert cert.sin_theta == pytest.approx(1.0, abs=1e-14)
    assert cert.strictly_acute


def test_interval_mesh_rejects_bad_input():
    with pytest.raises(ConfigurationError):
        build_interval_mesh(1.0, -1.0, 4)
    with pytest.raises(ConfigurationError):
        build_interval_mesh(0.0, 1.0, 1)


def test_degenerate_element_rejected():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ConfigurationError):
        Mesh(nodes, np.array([[0, 1, 2], [0, 1, 3]]))


def test_unsupported_pattern_rejected():
    with pytest.raises(ConfigurationError):
        build_patterned_rectangle_mesh((0, 0, 1, 1), 4, 4, "spiral")


def _hat_gradient_identities(mesh):
    # g_j . (v_k - v_l) must equal the nodal differences of the j-th hat
    for e, elem in enumerate(mesh.elements):
        verts = mesh.nodes[elem]
        for j in range(mesh.dimension + 1):
            for k in range(mesh.dimension + 1):
                for l in range(mesh.dimension + 1):
                    got = mesh.gradients[e, j] @ (verts[k] - verts[l])
                    want = (1.0 if j == k else 0.0) - (1.0 if j == l else 0.0)
                    assert got == pytest.approx(want, abs=1e-10)


@pytest.mark.parametrize("maker", [
    lambda: build_interval_mesh(-1.0, 2.0, 7),
    lambda: build_patterned_rectangle_mesh((0, 0, 1, 1), 4, 4, "consistent"),
    lambda: build_patterned_rectangle_mesh((0, 0, 1, 1), 4, 4, "inconsistent"),
    lambda: build_patterned_rectangle_mesh((0, 0, 1, 1), 4, 4, "equilateral"),
])
def test_partition_of_unity_and_gradient_correctness(maker):
    mesh = maker()
    sums = mesh.gradients.sum(axis=1)
    assert np.abs(sums).max() < 1e-12
    _hat_gradient_identities(mesh)


@pytest.mark.parametrize("pattern", ["consistent", "inconsistent"])
def test_rectangle_node_classification_geometric(pattern):
    mesh = build_patterned_rectangle_mesh((0, 0, 1, 1), 5, 5, pattern)
    on_outline = (np.isclose(mesh.nodes[:, 0], 0) | np.isclose(mesh.nodes[:, 0], 1)
                  | np.isclose(mesh.nodes[:, 1], 0) | np.isclose(mesh.nodes[:, 1], 1))
    for k in range(mesh.n_nodes):
        assert mesh.is_boundary(k) == bool(on_outline[k])


def test_interval_node_classification_geometric():
    mesh = build_interval_mesh(2.0, 3.0, 6)
    for k in range(mesh.n_nodes):
        expected = np.isclose(mesh.nodes[k, 0], 2.0) or np.isclose(mesh.nodes[k, 0], 3.0)
        assert mesh.is_boundary(k) == expected


def test_hat_l1_norm_closed_form_and_positivity():
    mesh = build_interval_mesh(-1.0, 1.0, 4)
    for k in range(mesh.n_nodes):
        expected = sum(mesh.volumes[e] / 2.0 for e in mesh.patches[k])
        assert hat_l1_norm(mesh, k) == pytest.approx(expected, rel=1e-14)
        assert hat_l1_norm(mesh, k) > 0
    # interior has two elements, boundary one, dx = 0.5
    assert hat_l1_norm(mesh, 0) == pytest.approx(0.5)
    assert hat_l1_norm(mesh, mesh.n_nodes - 1) == pytest.approx(0.25)


def test_inconsistent_center_hat_norm_and_patch():
    dx = 1.0 / 8.0
    mesh = build_patterned_rectangle_mesh((0, 0, 1, 1), 8, 8, "inconsistent")
    node = mesh.node_at((0.5, 0.5))
    assert node is not None and not mesh.is_boundary(node)
    assert len(mesh.patches[node]) == 4
    assert hat_l1_norm(mesh, node) == pytest.approx((2.0 / 3.0) * dx**2, rel=1e-12)


def test_consistent_center_five_point_stencil():
    from hjbfem import stiffness_matrix
    dx = 1.0 / 8.0
    mesh = build_patterned_rectangle_mesh((0, 0, 1, 1), 8, 8, "consistent")
    node = mesh.node_at((0.5, 0.5))
    row = stiffness_matrix(mesh)[node].toarray().ravel()
    assert row[node] == pytest.approx(4.0, rel=1e-12)
    neighbours = {}
    for k in range(mesh.n_nodes):
        if k == node or row[k] == 0.0:
            continue
        offset = tuple(np.round((mesh.nodes[k] - mesh.nodes[node]) / dx).astype(int))
        neighbours[offset] = row[k]
    # five-point stencil: axis neighbours carry -1, diagonal ones drop out
    assert set(neighbours) == {(1, 0), (-1, 0), (0, 1), (0, -1)}
    for val in neighbours.values():
        assert val == pytest.approx(-1.0, rel=1e-12)
    # normalized by the hat norm dx^2 this is the 1/dx^2-scaled stencil
    assert hat_l1_norm(mesh, node) == pytest.approx(dx**2, rel=1e-12)


def test_consistent_pattern_not_strictly_acute():
    mesh = build_patterned_rectangle_mesh((0, 0, 1, 1), 4, 4, "consistent")
    cert = acuteness_certificate(mesh)
    assert cert.sin_theta == pytest.approx(0.0, abs=1e-12)
    assert not cert.strictly_acute
    elem, na, nb = cert.worst_pair
    ga = mesh.gradients[elem, mesh.local_index(elem, na)]
    gb = mesh.gradients[elem, mesh.local_index(elem, nb)]
    assert abs(ga @ gb) < 1e-10  # the reported pair is indeed orthogonal


def test_equilateral_pattern_geometry():
    side = 1.0 / 6.0
    mesh = build_patterned_rectangle_mesh((0, 0, 1, 1), 6, 6, "equilateral")
    assert np.allclose(mesh.diameters, side)
    assert np.allclose(mesh.volumes, math.sqrt(3.0) / 4.0 * side**2)
    assert mesh_size(mesh) == pytest.approx(side, rel=1e-12)
    cert = acuteness_certificate(mesh)
    assert cert.sin_theta == pytest.approx(0.5, abs=1e-12)
    assert cert.strictly_acute


def test_equilateral_interior_nodes_have_full_patch():
    mesh = build_patterned_rectangle_mesh((0, 0, 1, 1), 5, 5, "equilateral")
    assert mesh.n_interior > 0
    for node in range(mesh.n_interior):
        angle = 0.0
        for e in mesh.patches[node]:
            verts = [v for v in mesh.elements[e] if v != node]
            u = mesh.nodes[verts[0]] - mesh.nodes[node]
            v = mesh.nodes[verts[1]] - mesh.nodes[node]
            cosang = (u @ v) / (np.linalg.norm(u) * np.linalg.norm(v))
            angle += math.acos(np.clip(cosang, -1.0, 1.0))
        assert angle == pytest.approx(2.0 * math.pi, abs=1e-9)


def test_acuteness_permutation_invariant():
    rng = np.random.default_rng(11)
    base = build_patterned_rectangle_mesh((0, 0, 1, 1), 4, 3, "consistent")
    perm = rng.permutation(base.n_nodes)
    inverse = np.empty_like(perm)
    inverse[perm] = np.arange(base.n_nodes)
    shuffled = Mesh(base.nodes[perm], inverse[base.elements])
    a = acuteness_certificate(base)
    b = acuteness_certificate(shuffled)
    assert a.sin_theta == pytest.approx(b.sin_theta, abs=1e-14)


def test_mesh_file_roundtrip(tmp_path):
    mesh = build_patterned_rectangle_mesh((0, 0, 1, 1), 3, 3, "inconsistent")
    path = tmp_path / "mesh.txt"
    write_mesh(mesh, path)
    back = read_mesh(path)
    assert back.dimension == mesh.dimension
    assert back.n_nodes == mesh.n_nodes
    assert back.n_elements == mesh.n_elements
    assert back.n_interior == mesh.n_interior
    assert sorted(map(tuple, back.nodes)) == pytest.approx(
        sorted(map(tuple, mesh.nodes)))


def test_mesh_reader_reorders_boundary_first_file(tmp_path):
    # 1D mesh listed with a boundary node first; reader must reorder
    path = tmp_path / "m.txt"
    path.write_text("1 3 2\n0 1\n0.5 0\n1 1\n1 2\n2 3\n")
    mesh = read_mesh(path)
    assert mesh.n_interior == 1
    assert mesh.nodes[0, 0] == 0.5


def test_mesh_reader_rejects_malformed(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("1 3\n")
    with pytest.raises(MeshFormatError):
        read_mesh(path)
    with pytest.raises(MeshFormatError):
        read_mesh(tmp_path / "missing.txt")


def test_locate_and_node_at():
    mesh = build_interval_mesh(0.0, 1.0, 4)
    elem, weights = mesh.locate(0.125)
    assert weights == pytest.approx([0.5, 0.5], abs=1e-12) or \
        weights == pytest.approx([0.5, 0.5][::-1], abs=1e-12)
    assert mesh.node_at(0.25) is not None
    assert mesh.node_at(0.3) is None
    from hjbfem import QueryError
    with pytest.raises(QueryError):
        mesh.locate(1.5)
