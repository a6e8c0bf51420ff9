import warnings

import numpy as np
import pytest

import oracles
from clouds import make_random_cloud
from morphkit import BindingTable, bind, build_control_graph, build_graph, deform_cloud
from morphkit.arap_solver import DeformationState
from morphkit.errors import BindingWarning, DegenerateBlendWarning
from morphkit.rotations import quat_to_matrix
from morphkit.skinning import node_scale_ratios


def identity_state(graph):
    n = graph.node_count
    return DeformationState(
        positions=graph.rest_positions.copy(),
        rotations=np.broadcast_to(np.eye(3), (n, 3, 3)).copy(),
        energy=0.0,
    )


def rigid_state(graph, Q, t):
    n = graph.node_count
    return DeformationState(
        positions=graph.rest_positions @ Q.T + t,
        rotations=np.broadcast_to(Q, (n, 3, 3)).copy(),
        energy=0.0,
    )


def rotation_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@pytest.fixture(scope="module")
def cloud_and_graph():
    cloud = make_random_cloud(np.random.default_rng(30), n=120)
    graph = build_control_graph(cloud.center, node_count=24,
                                aux_radius_factor=5.0)
    return cloud, graph


# ---------------------------------------------------------------------------
# binding

def test_binding_matches_exhaustive_oracle():
    cloud = make_random_cloud(np.random.default_rng(31), n=20)
    graph = build_graph(np.random.default_rng(32).normal(size=(6, 3)),
                        connection_radius_factor=1.5, aux_radius_factor=5.0)
    table = bind(cloud, graph)
    for i in range(cloud.count):
        idx, w = oracles.two_stage_binding(
            cloud.center[i], graph.rest_positions, graph.geodesic,
            graph.scene_diameter)
        np.testing.assert_array_equal(table.node_indices[i], idx)
        np.testing.assert_allclose(table.weights[i], w, atol=1e-12)


def test_partition_of_unity(cloud_and_graph):
    cloud, graph = cloud_and_graph
    table = bind(cloud, graph)
    np.testing.assert_allclose(table.weights.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(table.weights >= 0.0)


def test_gaussian_at_node_dominates():
    nodes = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float)
    graph = build_graph(nodes, connection_radius_factor=2.0,
                        aux_radius_factor=5.0)
    cloud = make_random_cloud(np.random.default_rng(33), n=1)
    cloud = cloud.replaced(center=nodes[[2]])
    table = bind(cloud, graph)
    assert table.node_indices[0, 0] == 2
    w = table.weights[0]
    assert np.all(w[0] > w[1:])


def test_equidistant_blend_quarters():
    # the nearest node's blend distance always undercuts its companions by a
    # geodesic margin, so equal quarters only appear in the far-field limit:
    # seen from far away, a tiny node cluster has four distances that agree
    # to ~1e-10 relative and the weights all converge to 1/4
    side = 1e-3
    nodes = np.array([[side, 0, 0], [-side, 0, 0], [0, side, 0], [0, -side, 0]])
    graph = build_graph(nodes, connection_radius_factor=2.0,
                        aux_radius_factor=5.0)
    cloud = make_random_cloud(np.random.default_rng(34), n=1)
    cloud = cloud.replaced(center=np.array([[0.0, 0.0, 1e7]]))
    table = bind(cloud, graph)
    np.testing.assert_allclose(table.weights[0], 0.25, atol=1e-9)


def test_binding_small_graph_pads_and_warns():
    nodes = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], dtype=float)
    graph = build_graph(nodes, connection_radius_factor=1.5)
    cloud = make_random_cloud(np.random.default_rng(35), n=3)
    with pytest.warns(BindingWarning):
        table = bind(cloud, graph)
    assert table.neighbor_count == 3
    np.testing.assert_allclose(table.weights.sum(axis=1), 1.0, atol=1e-12)


def test_binding_unreachable_component_gets_zero_weight():
    a = np.zeros((5, 3))
    a[:, 0] = 0.1 * np.arange(5)
    b = a + [30.0, 0.2, 0.0]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        graph = build_graph(np.vstack([a, b]))
    cloud = make_random_cloud(np.random.default_rng(36), n=2)
    cloud = cloud.replaced(center=np.array([[0.05, 0, 0], [30.05, 0.2, 0]]))
    table = bind(cloud, graph)
    # every neighbor with positive weight lives in the query's own strand
    for i, split in ((0, 5), (1, 5)):
        w = table.weights[i]
        own = table.node_indices[i] < split if i == 0 else table.node_indices[i] >= split
        assert np.all(w[~own] == 0.0)
        assert w.sum() == pytest.approx(1.0, abs=1e-9)


def test_binding_table_validation():
    with pytest.raises(Exception):
        BindingTable(
            node_indices=np.zeros((2, 4), dtype=np.int64),
            weights=np.full((2, 4), 0.3),  # rows sum to 1.2
            node_count=5,
            edge_src=np.zeros(0, dtype=np.int64),
            edge_dst=np.zeros(0, dtype=np.int64),
            edge_rest_length=np.zeros(0),
            node_degree=np.zeros(5),
        )


# ---------------------------------------------------------------------------
# deformation

def test_identity_state_is_identity_map(cloud_and_graph):
    cloud, graph = cloud_and_graph
    table = bind(cloud, graph)
    out = deform_cloud(cloud, graph, identity_state(graph), table)
    np.testing.assert_array_equal(out.center, cloud.center)  # exact
    dots = np.abs(np.sum(out.rotation * cloud.rotation, axis=1))
    np.testing.assert_allclose(dots, 1.0, atol=1e-9)
    np.testing.assert_allclose(out.scale, cloud.scale, rtol=1e-9)
    np.testing.assert_array_equal(out.opacity, cloud.opacity)
    np.testing.assert_array_equal(out.color, cloud.color)


def test_rigid_state_moves_cloud_rigidly(cloud_and_graph):
    cloud, graph = cloud_and_graph
    table = bind(cloud, graph)
    rng = np.random.default_rng(37)
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    Q = quat_to_matrix(q)
    t = rng.normal(size=3)
    out = deform_cloud(cloud, graph, rigid_state(graph, Q, t), table)
    expect = cloud.center @ Q.T + t
    assert np.max(np.abs(out.center - expect)) < 1e-7
    # quaternions compose: Q times the rest rotation, up to sign
    for i in range(cloud.count):
        got = quat_to_matrix(out.rotation[i])
        want = Q @ quat_to_matrix(cloud.rotation[i])
        assert np.max(np.abs(got - want)) < 1e-6
    np.testing.assert_allclose(out.scale, cloud.scale, rtol=1e-7)


def test_single_neighbor_quarter_turn():
    # one gaussian fully bound to one node: mu' = R (mu - p) + p'
    nodes = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float)
    graph = build_graph(nodes, connection_radius_factor=2.0,
                        aux_radius_factor=5.0)
    cloud = make_random_cloud(np.random.default_rng(38), n=1)
    cloud = cloud.replaced(center=np.array([[1.0, 0.0, 0.0]]))
    table = BindingTable(
        node_indices=np.array([[0, 1, 2, 3]]),
        weights=np.array([[1.0, 0.0, 0.0, 0.0]]),
        node_count=4,
        edge_src=np.zeros(0, dtype=np.int64),
        edge_dst=np.zeros(0, dtype=np.int64),
        edge_rest_length=np.zeros(0),
        node_degree=np.zeros(4),
    )
    n = graph.node_count
    rotations = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    rotations[0] = rotation_z(np.pi / 2)
    positions = graph.rest_positions.copy()
    positions[0] = [1.0, 0.0, 0.0]
    state = DeformationState(positions=positions, rotations=rotations,
                             energy=0.0)
    out = deform_cloud(cloud, graph, state, table)
    np.testing.assert_allclose(out.center[0], [1.0, 1.0, 0.0], atol=1e-12)


def test_scale_follows_edge_stretch():
    # uniformly scaling a strand doubles every rest edge length; bound
    # gaussians must scale by the same factor
    pts = np.zeros((6, 3))
    pts[:, 0] = 0.2 * np.arange(6)
    graph = build_graph(pts, connection_radius_factor=1.5, aux_radius_factor=3.0)
    cloud = make_random_cloud(np.random.default_rng(39), n=8)
    cloud = cloud.replaced(center=np.column_stack([
        np.linspace(0.05, 0.95, 8), np.zeros(8), np.zeros(8)]))
    table = bind(cloud, graph)
    n = graph.node_count
    state = DeformationState(
        positions=graph.rest_positions * 2.0,
        rotations=np.broadcast_to(np.eye(3), (n, 3, 3)).copy(),
        energy=0.0,
    )
    ratios = node_scale_ratios(table, state.positions)
    np.testing.assert_allclose(ratios, 2.0, rtol=1e-12)
    out = deform_cloud(cloud, graph, state, table)
    np.testing.assert_allclose(out.scale, cloud.scale * 2.0, rtol=1e-9)
    assert np.all(out.scale > 0.0)


def test_locality_on_split_graph():
    # two strands, handles move only one; gaussians bound to the other are
    # untouched because none of their bound nodes moved or rotated
    a = np.zeros((6, 3))
    a[:, 0] = 0.1 * np.arange(6)
    b = a + [20.0, 0.4, 0.0]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        graph = build_graph(np.vstack([a, b]))
    cloud = make_random_cloud(np.random.default_rng(40), n=4)
    cloud = cloud.replaced(center=np.array([
        [0.15, 0.0, 0.0], [0.45, 0.0, 0.0],
        [20.15, 0.4, 0.0], [20.45, 0.4, 0.0]]))
    table = bind(cloud, graph)
    n = graph.node_count
    positions = graph.rest_positions.copy()
    positions[6:] += [0.0, 0.0, 0.5]  # move only strand b's nodes
    rotations = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    state = DeformationState(positions=positions, rotations=rotations,
                             energy=0.0)
    out = deform_cloud(cloud, graph, state, table)
    np.testing.assert_array_equal(out.center[:2], cloud.center[:2])
    assert np.max(np.abs(out.center[2:] - cloud.center[2:] - [0, 0, 0.5])) < 1e-12


def test_antipodal_blend_falls_back():
    # a binding produced by bind() always gives the nearest node the largest
    # weight, which keeps the hemisphere-aligned blend well away from zero,
    # so the degenerate path needs a hand-built table: two equal weights on
    # nodes turned almost half a turn opposite ways about z.  Both canonical
    # quaternions then carry the same tiny positive w and an exactly
    # cancelling z, neither needs a flip against the identity summand, and
    # the blend norm lands around 5e-14
    nodes = np.array([[0, 0, 0], [0.5, 0, 0], [1.0, 0, 0], [1.5, 0, 0]])
    graph = build_graph(nodes, connection_radius_factor=2.0,
                        aux_radius_factor=3.0)
    cloud = make_random_cloud(np.random.default_rng(41), n=1)
    cloud = cloud.replaced(center=np.array([[0.75, 0.0, 0.0]]))
    table = BindingTable(
        node_indices=np.array([[0, 1, 2, 3]]),
        weights=np.array([[0.0, 0.5, 0.5, 0.0]]),
        node_count=4,
        edge_src=np.zeros(0, dtype=np.int64),
        edge_dst=np.zeros(0, dtype=np.int64),
        edge_rest_length=np.zeros(0),
        node_degree=np.zeros(4),
    )
    n = graph.node_count
    theta = np.pi - 1e-13
    rotations = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    rotations[1] = rotation_z(theta)
    rotations[2] = rotation_z(-theta)
    state = DeformationState(positions=graph.rest_positions.copy(),
                             rotations=rotations, energy=0.0)
    with pytest.warns(DegenerateBlendWarning):
        out = deform_cloud(cloud, graph, state, table)
    np.testing.assert_allclose(np.linalg.norm(out.rotation, axis=1), 1.0,
                               atol=1e-12)
    # fallback is the heaviest neighbor (first of the tied pair), not the
    # nearest: the result composes node 1's rotation with the rest quat
    from morphkit.rotations import matrix_to_quat, quat_multiply
    want = quat_multiply(matrix_to_quat(rotations[1][None]), cloud.rotation)
    assert abs(float(want[0] @ out.rotation[0])) == pytest.approx(1.0, abs=1e-9)


def test_blend_equals_blend_of_products(cloud_and_graph):
    # blending node quaternions then composing with the rest quaternion must
    # equal blending the per-neighbor composed quaternions directly
    cloud, graph = cloud_and_graph
    table = bind(cloud, graph)
    rng = np.random.default_rng(42)
    axes = rng.normal(size=(graph.node_count, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    angles = rng.uniform(-0.4, 0.4, size=graph.node_count)
    rotations = np.empty((graph.node_count, 3, 3))
    for j in range(graph.node_count):
        K = np.array([[0, -axes[j, 2], axes[j, 1]],
                      [axes[j, 2], 0, -axes[j, 0]],
                      [-axes[j, 1], axes[j, 0], 0]])
        rotations[j] = (np.eye(3) + np.sin(angles[j]) * K
                        + (1 - np.cos(angles[j])) * (K @ K))
    state = DeformationState(positions=graph.rest_positions.copy(),
                             rotations=rotations, energy=0.0)
    out = deform_cloud(cloud, graph, state, table)

    from morphkit.rotations import matrix_to_quat, quat_multiply
    node_q = matrix_to_quat(rotations)
    for i in range(0, cloud.count, 17):
        idx = table.node_indices[i]
        w = table.weights[i]
        summands = quat_multiply(node_q[idx], np.tile(cloud.rotation[i], (len(idx), 1)))
        ref = summands[0].copy() * w[0]
        for k in range(1, len(idx)):
            s = summands[k] if summands[k] @ summands[0] >= 0 else -summands[k]
            ref += w[k] * s
        ref /= np.linalg.norm(ref)
        dot = abs(ref @ out.rotation[i])
        assert dot == pytest.approx(1.0, abs=1e-9)
