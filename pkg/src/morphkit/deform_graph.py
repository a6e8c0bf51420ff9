"""Sparse editing proxy: control-point sampling and graph construction.

The proxy is built in two stages.  A short-radius auxiliary graph (radius
twice the mean nearest-neighbor spacing) approximates the surface manifold;
all-pairs shortest paths over it give geodesic distances.  The deformable
graph then links node pairs whose geodesic distance is at most 0.3 times the
scene diameter, with a Gaussian distance-decay weight per edge.  Linking by
geodesic rather than straight-line distance keeps separate parts (two legs,
two wings) from being welded together.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ArgumentError, ConnectivityWarning

DEFAULT_NODE_COUNT = 512
AUX_RADIUS_FACTOR = 2.0        # auxiliary radius = factor * mean NN distance
CONNECTION_RADIUS_FACTOR = 0.3  # deformable radius = factor * scene diameter
SIGMA_FACTOR = 0.15             # weight kernel sigma = factor * scene diameter


def farthest_point_sample(points, count: int, seed_index: int = 0) -> np.ndarray:
    """Greedy farthest-point subset of `count` indices.

    Starts at `seed_index`; each next pick maximizes its minimum Euclidean
    distance to everything already selected, ties broken by lowest index.
    Deterministic for fixed inputs.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ArgumentError(f"points must be (N, 3), got {points.shape}")
    n = points.shape[0]
    if n == 0:
        raise ArgumentError("points must be nonempty")
    if not (1 <= count <= n):
        raise ArgumentError(f"count {count} outside [1, {n}]")
    if not (0 <= seed_index < n):
        raise ArgumentError(f"seed_index {seed_index} outside [0, {n})")

    selected = np.empty(count, dtype=np.int64)
    selected[0] = seed_index
    min_dist = np.linalg.norm(points - points[seed_index], axis=1)
    for k in range(1, count):
        # argmax returns the first (lowest-index) maximizer
        pick = int(np.argmax(min_dist))
        selected[k] = pick
        np.minimum(min_dist, np.linalg.norm(points - points[pick], axis=1), out=min_dist)
    return selected


def all_pairs_geodesic(edges, lengths, node_count: int) -> np.ndarray:
    """All-pairs shortest-path distances over an undirected weighted graph.

    Runs Floyd-Warshall with successor tracking, then re-accumulates each
    distance left-to-right along its reconstructed path.  The re-accumulation
    makes entry (s, t) the same float a textbook Dijkstra from s computes
    (both sum the path edges in walk order), so the two algorithms agree
    bit for bit instead of differing in last-ulp rounding.
    Disconnected pairs are +inf.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    lengths = np.asarray(lengths, dtype=np.float64).reshape(-1)
    if edges.shape[0] != lengths.shape[0]:
        raise ArgumentError("edges and lengths must have equal length")
    if np.any(lengths < 0):
        raise ArgumentError("edge lengths must be nonnegative")
    n = int(node_count)

    W = np.full((n, n), np.inf)
    np.fill_diagonal(W, 0.0)
    if edges.size:
        W[edges[:, 0], edges[:, 1]] = lengths
        W[edges[:, 1], edges[:, 0]] = lengths

    D = W.copy()
    succ = np.full((n, n), -1, dtype=np.int64)
    cols = np.broadcast_to(np.arange(n)[None, :], (n, n))
    direct = np.isfinite(W) & ~np.eye(n, dtype=bool)
    succ[direct] = cols[direct]
    np.fill_diagonal(succ, np.arange(n))

    for k in range(n):
        alt = D[:, k, None] + D[None, k, :]
        better = alt < D
        if better.any():
            D[better] = alt[better]
            succ[better] = np.broadcast_to(succ[:, k, None], (n, n))[better]

    # Walk every reachable pair simultaneously, summing edges in path order.
    result = np.full((n, n), np.inf)
    np.fill_diagonal(result, 0.0)
    reach = np.isfinite(D) & ~np.eye(n, dtype=bool)
    src, dst = np.nonzero(reach)
    if src.size:
        cur = src.copy()
        acc = np.zeros(src.size)
        active = np.ones(src.size, dtype=bool)
        for _ in range(n):
            if not active.any():
                break
            ai = np.nonzero(active)[0]
            nxt = succ[cur[ai], dst[ai]]
            acc[ai] += W[cur[ai], nxt]
            cur[ai] = nxt
            active[ai[nxt == dst[ai]]] = False
        if active.any():
            raise RuntimeError("shortest-path reconstruction did not terminate")
        result[src, dst] = acc
    return result


def gaussian_weight(distance: float, sigma: float) -> float:
    """Distance-decay kernel exp(-d^2 / (2 sigma^2)); 1.0 at zero distance."""
    if sigma <= 0.0:
        return 1.0 if distance == 0.0 else 0.0
    return float(np.exp(-(distance * distance) / (2.0 * sigma * sigma)))


@dataclass
class ControlGraph:
    """The deformable proxy graph over sampled control points.

    edges hold index pairs (i < j) with symmetric positive weights; geodesic
    is the symmetric N x N shortest-path matrix (+inf across disconnected
    components).  scene_diameter is the maximum pairwise control-point
    distance; mean_nn_distance the mean nearest-neighbor spacing.
    """

    rest_positions: np.ndarray
    node_source_indices: np.ndarray
    edges: np.ndarray
    edge_weights: np.ndarray
    geodesic: np.ndarray
    scene_diameter: float
    mean_nn_distance: float
    aux_edges: np.ndarray = field(default=None, repr=False)
    aux_lengths: np.ndarray = field(default=None, repr=False)
    sigma: float = 0.0

    def __post_init__(self):
        self.rest_positions = np.ascontiguousarray(self.rest_positions, dtype=np.float64)
        self._neighbors: Optional[list] = None
        self._edge_index: Optional[dict] = None
        self._adjacency = None
        self._laplacian = None

    @property
    def node_count(self) -> int:
        return self.rest_positions.shape[0]

    @property
    def neighbors(self) -> list:
        """Per-node arrays of adjacent node indices in the deformable graph."""
        if self._neighbors is None:
            adj = [[] for _ in range(self.node_count)]
            for i, j in self.edges:
                adj[int(i)].append(int(j))
                adj[int(j)].append(int(i))
            self._neighbors = [np.array(sorted(a), dtype=np.int64) for a in adj]
        return self._neighbors

    def edge_id(self, i: int, j: int) -> Optional[int]:
        if self._edge_index is None:
            self._edge_index = {
                (int(a), int(b)): e for e, (a, b) in enumerate(self.edges)
            }
        key = (min(int(i), int(j)), max(int(i), int(j)))
        return self._edge_index.get(key)

    def directed_edges(self):
        """(2E, 2) array listing each edge in both directions, with weights."""
        e = self.edges
        both = np.concatenate([e, e[:, ::-1]], axis=0)
        w = np.concatenate([self.edge_weights, self.edge_weights])
        return both, w

    @property
    def adjacency(self):
        """Symmetric sparse weight matrix W of the deformable edges (CSR)."""
        if self._adjacency is None:
            import scipy.sparse as sp

            n = self.node_count
            if self.edges.shape[0] == 0:
                self._adjacency = sp.csr_matrix((n, n))
            else:
                i = self.edges[:, 0]
                j = self.edges[:, 1]
                w = self.edge_weights
                self._adjacency = sp.csr_matrix(
                    (np.concatenate([w, w]), (np.concatenate([i, j]), np.concatenate([j, i]))),
                    shape=(n, n),
                )
        return self._adjacency

    @property
    def laplacian(self):
        """Weighted graph Laplacian L = D - W (CSR)."""
        if self._laplacian is None:
            import scipy.sparse as sp

            W = self.adjacency
            degree = np.asarray(W.sum(axis=1)).ravel()
            self._laplacian = (sp.diags(degree) - W).tocsr()
        return self._laplacian


def weight_kernel(graph: ControlGraph, i: int, j: int) -> float:
    """Edge weight of deformable edge (i, j); errors on a non-edge pair."""
    eid = graph.edge_id(i, j)
    if eid is None:
        raise ArgumentError(f"({i}, {j}) is not a deformable edge")
    return float(graph.edge_weights[eid])


def build_graph(
    points,
    source_indices=None,
    aux_radius_factor: float = AUX_RADIUS_FACTOR,
    connection_radius_factor: float = CONNECTION_RADIUS_FACTOR,
    sigma_factor: float = SIGMA_FACTOR,
) -> ControlGraph:
    """Build the deformable graph over control points.

    Steps: mean nearest-neighbor distance; auxiliary edges within twice that
    (inclusive); geodesics by all-pairs shortest path over the auxiliary
    graph; deformable edges where geodesic distance is within 0.3 of the
    scene diameter (inclusive); Gaussian weights with sigma = 0.15 diameter.
    A disconnected auxiliary graph is kept (cross-component geodesics stay
    +inf) and reported through a ConnectivityWarning.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ArgumentError(f"points must be (N, 3), got {points.shape}")
    n = points.shape[0]
    if n < 2:
        raise ArgumentError("build_graph needs at least 2 points")
    if source_indices is None:
        source_indices = np.arange(n, dtype=np.int64)
    else:
        source_indices = np.asarray(source_indices, dtype=np.int64)
        if source_indices.shape != (n,):
            raise ArgumentError("source_indices must match the point count")

    diff = points[:, None, :] - points[None, :, :]
    euclid = np.linalg.norm(diff, axis=2)
    off_diag = euclid + np.where(np.eye(n, dtype=bool), np.inf, 0.0)
    mean_nn = float(off_diag.min(axis=1).mean())
    scene_diameter = float(euclid.max())

    iu, ju = np.triu_indices(n, k=1)
    aux_mask = euclid[iu, ju] <= aux_radius_factor * mean_nn
    aux_edges = np.stack([iu[aux_mask], ju[aux_mask]], axis=1)
    aux_lengths = euclid[iu, ju][aux_mask]

    geodesic = all_pairs_geodesic(aux_edges, aux_lengths, n)
    # exact symmetry: keep the smaller of the two walk directions
    geodesic = np.minimum(geodesic, geodesic.T)

    radius = connection_radius_factor * scene_diameter
    g_upper = geodesic[iu, ju]
    edge_mask = np.isfinite(g_upper) & (g_upper <= radius)
    edges = np.stack([iu[edge_mask], ju[edge_mask]], axis=1)
    edge_geodesics = g_upper[edge_mask]

    sigma = sigma_factor * scene_diameter
    if sigma > 0.0:
        weights = np.exp(-(edge_geodesics ** 2) / (2.0 * sigma * sigma))
    else:
        weights = np.ones_like(edge_geodesics)

    if np.any(np.isinf(geodesic)):
        sizes = _component_sizes(n, aux_edges)
        warnings.warn(
            f"auxiliary graph has {len(sizes)} components (sizes {sizes}); "
            "they will deform independently",
            ConnectivityWarning,
            stacklevel=2,
        )

    return ControlGraph(
        rest_positions=points,
        node_source_indices=source_indices,
        edges=edges,
        edge_weights=weights,
        geodesic=geodesic,
        scene_diameter=scene_diameter,
        mean_nn_distance=mean_nn,
        aux_edges=aux_edges,
        aux_lengths=aux_lengths,
        sigma=sigma,
    )


def build_control_graph(
    cloud_centers,
    node_count: int = DEFAULT_NODE_COUNT,
    seed_index: int = 0,
    **graph_kwargs,
) -> ControlGraph:
    """Sample control points from a cloud and build their deformable graph."""
    pts = np.asarray(cloud_centers, dtype=np.float64)
    count = min(node_count, pts.shape[0])
    picked = farthest_point_sample(pts, count, seed_index=seed_index)
    return build_graph(pts[picked], source_indices=picked, **graph_kwargs)


def _component_sizes(n: int, edges: np.ndarray) -> list:
    """Connected component sizes, largest first (union-find)."""
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in edges:
        ri, rj = find(int(i)), find(int(j))
        if ri != rj:
            parent[ri] = rj
    counts: dict[int, int] = {}
    for v in range(n):
        r = find(v)
        counts[r] = counts.get(r, 0) + 1
    return sorted(counts.values(), reverse=True)


def graph_components(graph: ControlGraph) -> list:
    """Connected components of the deformable graph as index arrays."""
    n = graph.node_count
    seen = np.zeros(n, dtype=bool)
    comps = []
    for start in range(n):
        if seen[start]:
            continue
        stack = [start]
        seen[start] = True
        comp = []
        while stack:
            v = stack.pop()
            comp.append(v)
            for w in graph.neighbors[v]:
                if not seen[w]:
                    seen[w] = True
                    stack.append(int(w))
        comps.append(np.array(sorted(comp), dtype=np.int64))
    return comps


def graph_to_dict(graph: ControlGraph) -> dict:
    """JSON-ready graph summary for the UI and fixtures (no geodesic matrix)."""
    return {
        "nodes": graph.rest_positions.tolist(),
        "node_source_indices": graph.node_source_indices.tolist(),
        "edges": graph.edges.tolist(),
        "weights": graph.edge_weights.tolist(),
        "scene_diameter": graph.scene_diameter,
        "mean_nn_distance": graph.mean_nn_distance,
    }
