"""Handle-constrained as-rigid-as-possible solver on the control graph.

Alternates two closed-form steps: a sparse linear solve for free node
positions with handle positions substituted as hard constraints, and a
per-node SVD fit of the best rotation given the current positions.  Both
steps monotonically decrease the deformation energy.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .deform_graph import ControlGraph, graph_components
from .errors import ArgumentError, ConstraintError, SingularSystemWarning
from .rotations import matrix_to_quat

DEFAULT_ITERATIONS = 3


@dataclass(frozen=True)
class HandleSet:
    """User constraints: selected control nodes pinned to target positions."""

    node_indices: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.node_indices, dtype=np.int64).reshape(-1)
        tgt = np.asarray(self.targets, dtype=np.float64).reshape(-1, 3)
        if idx.shape[0] != tgt.shape[0]:
            raise ArgumentError(
                f"{idx.shape[0]} handle indices but {tgt.shape[0]} targets"
            )
        if idx.shape[0] != np.unique(idx).shape[0]:
            raise ArgumentError("handle node indices must be distinct")
        if not np.all(np.isfinite(tgt)):
            raise ArgumentError("handle targets must be finite")
        object.__setattr__(self, "node_indices", idx)
        object.__setattr__(self, "targets", tgt)

    @property
    def count(self) -> int:
        return self.node_indices.shape[0]

    def validate_for(self, graph: ControlGraph) -> None:
        if self.count == 0:
            raise ConstraintError("at least one handle is required to pin the solve")
        if self.node_indices.min(initial=0) < 0 or self.node_indices.max(initial=0) >= graph.node_count:
            raise ConstraintError(
                f"handle index out of range for graph with {graph.node_count} nodes"
            )

    def moved(self, targets) -> "HandleSet":
        """Same handle nodes with new target positions."""
        return HandleSet(self.node_indices, targets)


@dataclass
class SolverConfig:
    iterations: int = DEFAULT_ITERATIONS
    rotation_mode: str = "full_arap"  # or "laplacian_only" (rotations held at identity)
    tolerance: float = 1e-10

    def __post_init__(self):
        if self.iterations < 1:
            raise ArgumentError("iterations must be >= 1")
        if self.rotation_mode not in ("full_arap", "laplacian_only"):
            raise ArgumentError(f"unknown rotation_mode {self.rotation_mode!r}")
        if not (self.tolerance > 0.0):
            raise ArgumentError("tolerance must be positive")


@dataclass
class DeformationState:
    """Solver output: deformed node positions plus fitted per-node rotations.

    energy_trace records the energy after every half-step of the alternation
    (position solve, then rotation fit), so descent is checkable from the
    outside.  The rest configuration itself is not in the trace: it violates
    the handle constraints, so the first position solve may sit above it.
    """

    positions: np.ndarray
    rotations: np.ndarray
    energy: float
    iterations_run: int = 0
    energy_trace: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "positions": self.positions.tolist(),
            "rotations": matrix_to_quat(self.rotations).tolist(),
            "energy": self.energy,
        }


def graph_laplacian(graph: ControlGraph) -> sp.csr_matrix:
    """Weighted graph Laplacian L = D - W of the deformable edges (CSR)."""
    return graph.laplacian


def arap_energy(graph: ControlGraph, state: DeformationState) -> float:
    """Deformation energy of a solver state (see energy_of for raw arrays)."""
    return energy_of(graph, state.positions, state.rotations)


def energy_of(graph: ControlGraph, positions: np.ndarray, rotations: np.ndarray) -> float:
    """Sum over directed edges of w_ij ||(p'_i - p'_j) - R_i (p_i - p_j)||^2."""
    (both, w) = graph.directed_edges()
    if both.shape[0] == 0:
        return 0.0
    di = both[:, 0]
    dj = both[:, 1]
    rest = graph.rest_positions
    rest_diff = rest[di] - rest[dj]
    def_diff = positions[di] - positions[dj]
    rotated = np.einsum("eab,eb->ea", rotations[di], rest_diff)
    residual = def_diff - rotated
    return float(np.sum(w * np.sum(residual * residual, axis=1)))


def covariance_matrices(graph: ControlGraph, positions: np.ndarray) -> np.ndarray:
    """Per-node covariances S_i = sum_j w_ij (p_j - p_i)(p'_j - p'_i)^T.

    Assembled from neighbor sums (sparse matrix products) instead of an
    explicit edge loop; the expansion of the outer product makes S a
    combination of W p, W p', W (p outer p'), and the weighted degree.
    """
    n = graph.node_count
    p = graph.rest_positions
    q = np.asarray(positions, dtype=np.float64)
    W = graph.adjacency
    degree = np.asarray(W.sum(axis=1)).ravel()
    a = W @ p
    b = W @ q
    cross = (W @ np.einsum("na,nb->nab", p, q).reshape(n, 9)).reshape(n, 3, 3)
    return (
        cross
        - np.einsum("na,nb->nab", p, b)
        - np.einsum("na,nb->nab", a, q)
        + degree[:, None, None] * np.einsum("na,nb->nab", p, q)
    )


def _rigidity_quadratic(graph: ControlGraph, positions: np.ndarray) -> float:
    """Rotation-independent part of the energy: 2 tr(p'^T L p' + p^T L p)."""
    L = graph.laplacian
    p = graph.rest_positions
    q = np.asarray(positions, dtype=np.float64)
    return 2.0 * float(np.sum(q * (L @ q)) + np.sum(p * (L @ p)))


def _energy_from_parts(quad: float, S: np.ndarray, rotations: np.ndarray) -> float:
    """E = quad - 2 sum_i tr(S_i R_i); rotations only enter the cross term."""
    return quad - 2.0 * float(np.einsum("nab,nba->", S, rotations))


class ReducedSystem:
    """Constraint-eliminated Laplacian system, factorized once per handle set.

    Handle rows and columns are removed; their known positions migrate to the
    right-hand side.  The free-free block is factorized with a sparse LU and
    reused across drag updates, which is what makes per-frame solves cheap.
    Components containing no handle have a singular block (constant
    nullspace); those fall back to a dense minimum-norm pseudo-solution.
    """

    def __init__(self, graph: ControlGraph, handles: HandleSet, tolerance: float = 1e-10):
        handles.validate_for(graph)
        self.graph = graph
        self.handles = handles
        self.tolerance = float(tolerance)

        n = graph.node_count
        handle_idx = handles.node_indices
        is_handle = np.zeros(n, dtype=bool)
        is_handle[handle_idx] = True
        self.free = np.nonzero(~is_handle)[0]
        self.handle_order = handle_idx

        L = graph_laplacian(graph).tocsc()
        self._L_ff = L[self.free][:, self.free].tocsc()
        self._L_fh = L[self.free][:, handle_idx].tocsc()
        self._Lp_rest = L @ graph.rest_positions

        # Free nodes in components without any handle form singular blocks.
        pos_in_free = -np.ones(n, dtype=np.int64)
        pos_in_free[self.free] = np.arange(self.free.shape[0])
        grounded = np.ones(self.free.shape[0], dtype=bool)
        self._singular_blocks = []
        for comp in graph_components(graph):
            if np.any(is_handle[comp]):
                continue
            local = pos_in_free[comp]
            grounded[local] = False
            block = self._L_ff[local][:, local].toarray()
            self._singular_blocks.append((local, np.linalg.pinv(block)))
        if self._singular_blocks:
            warnings.warn(
                f"{len(self._singular_blocks)} graph component(s) have no handle; "
                "their positions are only determined up to translation "
                "(minimum-norm solution used)",
                SingularSystemWarning,
            )

        self._grounded = np.nonzero(grounded)[0]
        if self._grounded.shape[0] > 0:
            A = self._L_ff[self._grounded][:, self._grounded].tocsc()
            self._lu = spla.splu(A)
        else:
            self._lu = None

    def right_hand_side(self, rotations: np.ndarray) -> np.ndarray:
        """b_i = sum_j (w_ij / 2) (R_i + R_j) (p_i - p_j) over graph neighbors.

        Split into an R_i part, which factors through L p, and an R_j part,
        which is a neighbor sum of per-node quantities (sparse products).
        """
        graph = self.graph
        n = graph.node_count
        rest = graph.rest_positions
        W = graph.adjacency
        own = np.einsum("nab,nb->na", rotations, self._Lp_rest)
        M = (W @ rotations.reshape(n, 9)).reshape(n, 3, 3)
        rotated_rest = np.einsum("nab,nb->na", rotations, rest)
        other = np.einsum("nab,nb->na", M, rest) - W @ rotated_rest
        return 0.5 * (own + other)

    def solve(self, rotations: np.ndarray) -> np.ndarray:
        """Positions of all nodes; handles pinned to their targets exactly."""
        graph = self.graph
        b = self.right_hand_side(rotations)
        rhs = b[self.free] - self._L_fh @ self.handles.targets

        x = np.zeros((self.free.shape[0], 3), dtype=np.float64)
        if self._lu is not None:
            g = self._grounded
            xg = self._lu.solve(rhs[g])
            # one refinement pass if the direct solve left visible residual
            A = self._L_ff[g][:, g]
            res = rhs[g] - A @ xg
            scale = max(float(np.linalg.norm(rhs[g])), 1e-300)
            if float(np.linalg.norm(res)) > self.tolerance * scale:
                xg = xg + self._lu.solve(res)
            x[g] = xg
        for local, pinv in self._singular_blocks:
            x[local] = pinv @ rhs[local]

        out = np.empty((graph.node_count, 3), dtype=np.float64)
        out[self.free] = x
        out[self.handle_order] = self.handles.targets
        return out


def solve_positions(
    graph: ControlGraph,
    rotations: np.ndarray,
    handles: HandleSet,
    tolerance: float = 1e-10,
    system: Optional[ReducedSystem] = None,
) -> np.ndarray:
    """One global position step given fixed per-node rotations."""
    if system is None:
        system = ReducedSystem(graph, handles, tolerance)
    return system.solve(np.asarray(rotations, dtype=np.float64))


def rotations_from_covariance(
    S: np.ndarray, fallback: Optional[np.ndarray] = None, min_rank: int = 2
) -> np.ndarray:
    """Procrustes rotations from per-node covariances via batched SVD.

    R_i = V diag(1, 1, det(V U^T)) U^T, which corrects the reflection case
    so det R_i = +1.  Covariances with rank below `min_rank` leave the
    rotation underdetermined; those nodes take `fallback` (the identity when
    none is given).

    The alternation runs with min_rank=1 and fallback=previous rotations:
    a rank-1 covariance (every neighbor collinear in the rest pose, e.g. a
    straight strand) still pins where the strand axis must map, and the SVD
    product realizes exactly that while leaving the twist where the basis
    completion puts it — still the global maximizer of tr(S R), so descent
    holds.  Only a vanishing covariance says nothing, and there keeping the
    previous rotation cannot raise the energy, whereas snapping back to the
    identity mid-solve can.
    """
    n = S.shape[0]
    U, sv, Vt = np.linalg.svd(S)
    V = np.swapaxes(Vt, -1, -2)
    Ut = np.swapaxes(U, -1, -2)
    det = np.linalg.det(V @ Ut)
    D = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    D[:, 2, 2] = np.sign(det)
    R = V @ D @ Ut

    degenerate = sv[:, min_rank - 1] <= sv[:, 0] * 1e-12 + 1e-300
    if np.any(degenerate):
        R[degenerate] = np.eye(3) if fallback is None else fallback[degenerate]
    return R


def fit_rotations(graph: ControlGraph, positions: np.ndarray) -> np.ndarray:
    """Best per-node rotations for the current positions (Procrustes fit).

    Rank-deficient neighborhoods (rank < 2) report the identity; the solver
    loop uses the laxer rank-1 policy internally, see
    rotations_from_covariance.
    """
    return rotations_from_covariance(covariance_matrices(graph, positions))


def _rigid_seed(graph: ControlGraph, handles: HandleSet) -> np.ndarray:
    """Cold-start rotations: the best-fit rigid rotation of the handle motion.

    Seeding every node with the global Procrustes rotation of rest handles
    onto their targets lets a rigid (or mostly rigid) edit converge in one
    sweep instead of fighting the flattening bias of an identity start.
    Collinear handles still seed the axis alignment (rank-1 fit); a single
    handle degrades to identity.
    """
    rest = graph.rest_positions[handles.node_indices]
    rest_c = rest - rest.mean(axis=0)
    tgt_c = handles.targets - handles.targets.mean(axis=0)
    cov = rest_c.T @ tgt_c
    R = rotations_from_covariance(cov[None, :, :], min_rank=1)[0]
    return np.broadcast_to(R, (graph.node_count, 3, 3)).copy()


def solve(
    graph: ControlGraph,
    handles: HandleSet,
    config: Optional[SolverConfig] = None,
    initial: Optional[DeformationState] = None,
    system: Optional[ReducedSystem] = None,
) -> DeformationState:
    """Run the alternating solve and return the final deformation state.

    initial warm-starts the rotations from a previous state (positions are
    recomputed in the first half-step regardless).  system reuses a cached
    factorization when the handle index set has not changed.
    """
    if config is None:
        config = SolverConfig()
    handles.validate_for(graph)
    if system is None:
        system = ReducedSystem(graph, handles, config.tolerance)
    elif system.graph is not graph or not np.array_equal(
        system.handles.node_indices, handles.node_indices
    ):
        raise ArgumentError("cached system does not match this graph and handle set")
    else:
        # same factorization, possibly new targets
        system.handles = handles

    n = graph.node_count
    if config.rotation_mode == "laplacian_only":
        R = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    elif initial is not None and initial.rotations.shape == (n, 3, 3):
        R = np.array(initial.rotations, dtype=np.float64)
    else:
        R = _rigid_seed(graph, handles)

    trace: list = []
    positions = graph.rest_positions
    for _ in range(config.iterations):
        positions = system.solve(R)
        # one covariance pass serves the energy bookkeeping and the fit
        S = covariance_matrices(graph, positions)
        quad = _rigidity_quadratic(graph, positions)
        trace.append(_energy_from_parts(quad, S, R))
        if config.rotation_mode == "full_arap":
            R = rotations_from_covariance(S, fallback=R, min_rank=1)
            trace.append(_energy_from_parts(quad, S, R))

    return DeformationState(
        positions=positions,
        rotations=R,
        energy=trace[-1],
        iterations_run=config.iterations,
        energy_trace=trace,
    )
