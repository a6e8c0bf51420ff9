"""Editing session: the stateful pipeline behind the CLI and the wire protocol.

A session owns one cloud, its control graph and binding (immutable once
built), the current handle set, and the latest solver state.  Every applied
mutation advances the revision counter by exactly one, which is what lets
protocol replies be paired with requests.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import arap_solver, deform_graph, skinning, splat_core, splat_render
from .arap_solver import DeformationState, HandleSet, ReducedSystem, SolverConfig
from .errors import ConstraintError, ProtocolError

PREVIEW_POINT_LIMIT = 50000


@dataclass
class SessionConfig:
    node_count: int = deform_graph.DEFAULT_NODE_COUNT
    solver: SolverConfig = field(default_factory=SolverConfig)
    sigma_factor: float = deform_graph.SIGMA_FACTOR
    seed_index: int = 0


def identity_state(graph: deform_graph.ControlGraph) -> DeformationState:
    n = graph.node_count
    return DeformationState(
        positions=graph.rest_positions.copy(),
        rotations=np.broadcast_to(np.eye(3), (n, 3, 3)).copy(),
        energy=0.0,
    )


class Session:
    """One editing session over a loaded Gaussian cloud."""

    def __init__(self, config: Optional[SessionConfig] = None):
        self.config = config or SessionConfig()
        self.cloud: Optional[splat_core.GaussianCloud] = None
        self.graph: Optional[deform_graph.ControlGraph] = None
        self.binding: Optional[skinning.BindingTable] = None
        self.handles: dict = {}  # node index -> target (3,), insertion ordered
        self.state: Optional[DeformationState] = None
        self.revision = 0
        self.last_solve_ms = 0.0
        self._system: Optional[ReducedSystem] = None
        self._system_key: Optional[tuple] = None

    # -- loading and graph construction -------------------------------------

    def load(self, path) -> dict:
        """Load a cloud from disk (.ply or .json); resets derived state."""
        cloud = splat_core.load_cloud(path)
        self.cloud = cloud
        self.graph = None
        self.binding = None
        self.handles = {}
        self.state = None
        self._system = None
        self._system_key = None
        self.revision += 1
        return {"count": cloud.count}

    def adopt(self, cloud: splat_core.GaussianCloud) -> dict:
        """Use an in-memory cloud (same semantics as load)."""
        self.cloud = cloud
        self.graph = None
        self.binding = None
        self.handles = {}
        self.state = None
        self._system = None
        self._system_key = None
        self.revision += 1
        return {"count": cloud.count}

    def build(self, node_count: Optional[int] = None) -> dict:
        """Sample control points, build the graph, and bind the cloud."""
        if self.cloud is None:
            raise ProtocolError("no cloud loaded; send load first")
        count = node_count or self.config.node_count
        self.graph = deform_graph.build_control_graph(
            self.cloud.center,
            node_count=count,
            seed_index=self.config.seed_index,
            sigma_factor=self.config.sigma_factor,
        )
        self.binding = skinning.bind(self.cloud, self.graph)
        self.handles = {}
        self.state = None
        self._system = None
        self._system_key = None
        self.revision += 1
        return deform_graph.graph_to_dict(self.graph)

    def _require_graph(self) -> deform_graph.ControlGraph:
        if self.graph is None:
            raise ProtocolError("no graph built; send build first")
        return self.graph

    # -- handles and solving -------------------------------------------------

    def set_handles(self, entries) -> dict:
        """Replace the handle set; entries are (node, target) pairs."""
        graph = self._require_graph()
        new = {}
        for node, target in entries:
            node = int(node)
            if node < 0 or node >= graph.node_count:
                raise ProtocolError(f"handle node {node} outside graph of {graph.node_count}")
            if node in new:
                raise ProtocolError(f"handle node {node} listed twice")
            new[node] = np.asarray(target, dtype=np.float64).reshape(3)
        self.handles = new
        self.revision += 1
        return {"handles": len(self.handles)}

    def _handle_set(self) -> HandleSet:
        if not self.handles:
            raise ConstraintError("no handles registered; send set_handles or drag")
        idx = np.fromiter(self.handles.keys(), dtype=np.int64)
        tgt = np.stack([self.handles[int(i)] for i in idx])
        return HandleSet(idx, tgt)

    def _solve_proxy(self) -> DeformationState:
        graph = self._require_graph()
        handles = self._handle_set()
        key = tuple(sorted(int(i) for i in self.handles))
        if self._system is None or self._system_key != key:
            self._system = ReducedSystem(graph, handles, self.config.solver.tolerance)
            self._system_key = key
        begin = time.perf_counter()
        # solve from scratch each time: the result is then a pure function of
        # the current targets, so identical drags give identical previews and
        # a replayed trace exports identical bytes no matter how the message
        # stream was coalesced.  The cached factorization is what makes the
        # repeat solves cheap; carrying solver state across drags would not be.
        self.state = arap_solver.solve(
            graph,
            handles,
            config=self.config.solver,
            system=self._system,
        )
        self.last_solve_ms = (time.perf_counter() - begin) * 1000.0
        return self.state

    def apply_drag(self, node: int, target) -> None:
        """Update one handle target without solving (coalesced drag path)."""
        graph = self._require_graph()
        node = int(node)
        if node < 0 or node >= graph.node_count:
            raise ProtocolError(f"unknown handle {node}: not a graph node")
        if node not in self.handles:
            # first touch registers the node as a handle at its rest position
            self.handles[node] = graph.rest_positions[node].copy()
            self._system = None
            self._system_key = None
        self.handles[node] = np.asarray(target, dtype=np.float64).reshape(3)
        self.revision += 1

    def drag(self, node: int, target) -> dict:
        """Apply one drag and re-solve the proxy; returns the preview payload."""
        self.apply_drag(node, target)
        state = self._solve_proxy()
        return self.preview_payload(state)

    def preview_payload(self, state: Optional[DeformationState] = None) -> dict:
        graph = self._require_graph()
        if state is None:
            state = self.state or identity_state(graph)
        return {
            "positions": np.round(state.positions, 9).tolist(),
            "energy": state.energy,
            "solve_ms": self.last_solve_ms,
        }

    def solve_dense(self) -> dict:
        """Re-solve at current targets and propagate to the dense cloud."""
        state = self._solve_proxy()
        self.revision += 1
        return {"energy": state.energy, "solve_ms": self.last_solve_ms}

    # -- output --------------------------------------------------------------

    def deformed_cloud(self) -> splat_core.GaussianCloud:
        if self.cloud is None:
            raise ProtocolError("no cloud loaded")
        if self.graph is None or self.state is None:
            return self.cloud
        return skinning.deform_cloud(self.cloud, self.graph, self.state, self.binding)

    def commit_and_render(
        self, camera: splat_render.Camera, path, background=(0.0, 0.0, 0.0)
    ):
        """Dense deformation, render, PNG write; returns the path."""
        image = splat_render.render(self.deformed_cloud(), camera, background)
        splat_render.write_png(image, path)
        return path

    def export(self, path):
        """Write the (deformed, if solved) cloud back to disk."""
        cloud = self.deformed_cloud()
        if str(path).endswith(".json"):
            splat_core.save_json(cloud, path)
        else:
            splat_core.save_ply(cloud, path)
        return path

    def reset(self) -> dict:
        """Drop handles and solver state; graph and binding stay."""
        self.handles = {}
        self.state = None
        self._system = None
        self._system_key = None
        self.revision += 1
        return {}

    def decimated_points(self, limit: int = PREVIEW_POINT_LIMIT) -> dict:
        """Strided subset of centers (and colors) for the UI point sprite."""
        if self.cloud is None:
            raise ProtocolError("no cloud loaded")
        count = self.cloud.count
        step = max(1, int(np.ceil(count / max(1, limit))))
        pick = np.arange(0, count, step)
        return {
            "points": np.round(self.cloud.center[pick], 6).tolist(),
            "colors": np.round(np.clip(self.cloud.color[pick], 0.0, 1.0), 4).tolist(),
        }
