"""Dense Gaussian binding and linear blend skinning.

Each Gaussian binds to K = 4 control nodes through a two-stage lookup:
nearest node by Euclidean distance, then that node's nearest companions
along the graph geodesics.  Solved node transforms propagate to the full
cloud as a weighted blend of per-node rigid motions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .arap_solver import DeformationState
from .deform_graph import ControlGraph
from .errors import ArgumentError, BindingWarning, DegenerateBlendWarning
from .rotations import matrix_to_quat, quat_multiply
from .splat_core import GaussianCloud

NEIGHBOR_COUNT = 4
EPSILON_FACTOR = 1e-8

_CHUNK = 8192  # Gaussians per distance block, keeps the M x N buffer small


@dataclass
class BindingTable:
    """Per-Gaussian control-node assignments and normalized blend weights.

    node_indices is (M, K) with the Euclidean-nearest node first; weights is
    (M, K), each row summing to 1.  The remaining fields cache the rest-pose
    edge lengths used by the per-node scale ratio at deform time.
    """

    node_indices: np.ndarray
    weights: np.ndarray
    node_count: int
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_rest_length: np.ndarray
    node_degree: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.node_indices, dtype=np.int64)
        w = np.asarray(self.weights, dtype=np.float64)
        if idx.shape != w.shape or idx.ndim != 2:
            raise ArgumentError("node_indices and weights must share an (M, K) shape")
        if idx.size and (idx.min() < 0 or idx.max() >= self.node_count):
            raise ArgumentError("binding refers to a node outside the graph")
        if w.size and (np.any(w < 0) or np.any(np.abs(w.sum(axis=1) - 1.0) > 1e-9)):
            raise ArgumentError("weights must be >= 0 and sum to 1 per Gaussian")
        self.node_indices = idx
        self.weights = w

    @property
    def gaussian_count(self) -> int:
        return self.node_indices.shape[0]

    @property
    def neighbor_count(self) -> int:
        return self.node_indices.shape[1]


def _nearest_node(centers: np.ndarray, nodes: np.ndarray) -> tuple:
    """Euclidean-nearest node per center (first index wins ties)."""
    m = centers.shape[0]
    nearest = np.empty(m, dtype=np.int64)
    dist = np.empty(m, dtype=np.float64)
    for start in range(0, m, _CHUNK):
        block = centers[start:start + _CHUNK]
        d2 = np.sum((block[:, None, :] - nodes[None, :, :]) ** 2, axis=2)
        pick = np.argmin(d2, axis=1)
        nearest[start:start + _CHUNK] = pick
        dist[start:start + _CHUNK] = np.sqrt(d2[np.arange(block.shape[0]), pick])
    return nearest, dist


def bind(cloud: GaussianCloud, graph: ControlGraph) -> BindingTable:
    """Two-stage binding of every Gaussian to its K control nodes.

    Stage one picks the Euclidean-nearest control node n0; stage two adds
    the K-1 nodes geodesically closest to n0 (ties broken by lowest index).
    Blend weights are inverse distances in the hybrid metric: the Euclidean
    leg to n0 plus the geodesic leg onward.
    """
    centers = cloud.center
    n = graph.node_count
    k = min(NEIGHBOR_COUNT, n)
    if k < NEIGHBOR_COUNT:
        warnings.warn(
            f"graph has only {n} node(s); binding each Gaussian to {k}",
            BindingWarning,
        )

    # Companion sets depend only on n0, so build them once per node.
    # Stable sort on the geodesic row keeps ties in index order.
    companions = np.empty((n, k - 1), dtype=np.int64)
    unreachable = False
    for j in range(n):
        row = graph.geodesic[j].copy()
        row[j] = np.inf
        order = np.argsort(row, kind="stable")
        take = order[:k - 1]
        companions[j] = take
        if np.any(~np.isfinite(row[take])):
            unreachable = True
    if unreachable and k > 1:
        warnings.warn(
            "some control nodes have fewer reachable companions than requested; "
            "unreachable slots carry zero weight",
            BindingWarning,
        )

    n0, eucl = _nearest_node(centers, graph.rest_positions)

    nodes = np.empty((centers.shape[0], k), dtype=np.int64)
    nodes[:, 0] = n0
    d = np.empty((centers.shape[0], k), dtype=np.float64)
    d[:, 0] = eucl
    if k > 1:
        nodes[:, 1:] = companions[n0]
        d[:, 1:] = eucl[:, None] + graph.geodesic[n0[:, None], companions[n0]]

    eps = EPSILON_FACTOR * graph.scene_diameter
    with np.errstate(divide="ignore"):
        w = 1.0 / (d + eps)
    w[~np.isfinite(w)] = 0.0  # unreachable companion: d = inf, weight 0
    w /= w.sum(axis=1, keepdims=True)

    (both, _) = graph.directed_edges()
    if both.shape[0] > 0:
        src = both[:, 0].astype(np.int64)
        dst = both[:, 1].astype(np.int64)
        rest_len = np.linalg.norm(
            graph.rest_positions[src] - graph.rest_positions[dst], axis=1
        )
    else:
        src = np.zeros(0, dtype=np.int64)
        dst = np.zeros(0, dtype=np.int64)
        rest_len = np.zeros(0, dtype=np.float64)
    degree = np.bincount(src, minlength=n).astype(np.int64)

    return BindingTable(
        node_indices=nodes,
        weights=w,
        node_count=n,
        edge_src=src,
        edge_dst=dst,
        edge_rest_length=rest_len,
        node_degree=degree,
    )


def node_scale_ratios(binding: BindingTable, positions: np.ndarray) -> np.ndarray:
    """Per-node mean edge-length ratio deformed/rest; 1 for isolated nodes."""
    n = binding.node_count
    ratios = np.ones(n, dtype=np.float64)
    if binding.edge_src.shape[0] == 0:
        return ratios
    deformed_len = np.linalg.norm(
        positions[binding.edge_src] - positions[binding.edge_dst], axis=1
    )
    per_edge = deformed_len / binding.edge_rest_length
    acc = np.zeros(n, dtype=np.float64)
    np.add.at(acc, binding.edge_src, per_edge)
    has_edges = binding.node_degree > 0
    ratios[has_edges] = acc[has_edges] / binding.node_degree[has_edges]
    return ratios


def deform_cloud(
    cloud: GaussianCloud,
    graph: ControlGraph,
    state: DeformationState,
    binding: BindingTable,
) -> GaussianCloud:
    """Propagate a solved deformation to every Gaussian in the cloud.

    Centers follow the weighted rigid blend mu' = sum_j w_j (R_j (mu - p_j)
    + p'_j).  Orientations blend the per-node rotation quaternions with
    hemisphere alignment before the weighted sum, then compose with the
    Gaussian's own quaternion.  Scales pick up one isotropic factor: the
    blend of per-node mean edge-length ratios.  Opacity and color pass
    through untouched.
    """
    if binding.gaussian_count != cloud.count:
        raise ArgumentError(
            f"binding covers {binding.gaussian_count} Gaussians, cloud has {cloud.count}"
        )
    if binding.node_count != graph.node_count:
        raise ArgumentError("binding was built for a different graph")

    nodes = binding.node_indices
    w = binding.weights
    rest = graph.rest_positions
    p_new = state.positions
    R = state.rotations

    # blend displacements rather than absolute positions: an identity state
    # contributes exact zeros, so unmoved Gaussians keep their centers
    # bit-for-bit (and zero-weight neighbors can never perturb them)
    local = cloud.center[:, None, :] - rest[nodes]
    rotated = np.einsum("mkab,mkb->mka", R[nodes], local)
    displacement = (rotated - local) + (p_new[nodes] - rest[nodes])
    new_centers = cloud.center + np.sum(w[:, :, None] * displacement, axis=1)

    node_quat = matrix_to_quat(R)
    rq = node_quat[nodes]
    # flip summands into the hemisphere of the first (nearest) neighbor
    sign = np.where(np.sum(rq * rq[:, :1, :], axis=2) < 0.0, -1.0, 1.0)
    blended = np.sum((w * sign)[:, :, None] * rq, axis=1)
    norm = np.linalg.norm(blended, axis=1)
    dead = norm < 1e-12
    if np.any(dead):
        warnings.warn(
            f"{int(dead.sum())} Gaussian(s) hit antipodal quaternion cancellation; "
            "using the heaviest neighbor's rotation",
            DegenerateBlendWarning,
        )
        rows = np.flatnonzero(dead)
        blended[rows] = rq[rows, np.argmax(w[rows], axis=1)]
        norm[rows] = np.linalg.norm(blended[rows], axis=1)
    blended /= norm[:, None]
    new_rotation = quat_multiply(blended, cloud.rotation)
    new_rotation /= np.linalg.norm(new_rotation, axis=1, keepdims=True)

    ratios = node_scale_ratios(binding, p_new)
    factor = np.sum(w * ratios[nodes], axis=1)
    factor = np.maximum(factor, 1e-12)  # collapsed edges must not zero a scale
    new_scale = factor[:, None] * cloud.scale

    return cloud.replaced(
        center=new_centers, rotation=new_rotation, scale=new_scale
    )
