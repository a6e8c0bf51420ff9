"""morphkit: interactive deformation for 3D Gaussian Splatting objects.

Pipeline: load a Gaussian cloud, sample a sparse control graph, solve
handle-constrained as-rigid-as-possible deformation on it, propagate to
the dense cloud by linear blend skinning, and render depth-sorted splats.
"""

from .arap_solver import (
    DeformationState,
    HandleSet,
    ReducedSystem,
    SolverConfig,
    arap_energy,
    fit_rotations,
    solve,
    solve_positions,
)
from .deform_graph import (
    ControlGraph,
    all_pairs_geodesic,
    build_control_graph,
    build_graph,
    farthest_point_sample,
    gaussian_weight,
)
from .errors import (
    ArgumentError,
    BindingWarning,
    ConnectivityWarning,
    ConstraintError,
    DataError,
    DegenerateBlendWarning,
    IoError,
    MorphkitError,
    ParseError,
    ProtocolError,
    SchemaError,
    SingularSystemWarning,
)
from .session import Session, SessionConfig
from .skinning import BindingTable, bind, deform_cloud
from .splat_core import (
    GaussianCloud,
    GaussianPrimitive,
    load_cloud,
    load_json,
    load_ply,
    save_json,
    save_ply,
)
from .splat_render import (
    Camera,
    SplatImage,
    default_camera,
    look_at,
    project_gaussian,
    render,
    write_png,
)

__version__ = "0.1.0"

__all__ = [
    "ArgumentError",
    "BindingTable",
    "BindingWarning",
    "Camera",
    "ConnectivityWarning",
    "ConstraintError",
    "ControlGraph",
    "DataError",
    "DeformationState",
    "DegenerateBlendWarning",
    "GaussianCloud",
    "GaussianPrimitive",
    "HandleSet",
    "IoError",
    "MorphkitError",
    "ParseError",
    "ProtocolError",
    "ReducedSystem",
    "SchemaError",
    "Session",
    "SessionConfig",
    "SingularSystemWarning",
    "SolverConfig",
    "SplatImage",
    "all_pairs_geodesic",
    "arap_energy",
    "bind",
    "build_control_graph",
    "build_graph",
    "default_camera",
    "deform_cloud",
    "farthest_point_sample",
    "fit_rotations",
    "gaussian_weight",
    "load_cloud",
    "load_json",
    "load_ply",
    "look_at",
    "project_gaussian",
    "render",
    "save_json",
    "save_ply",
    "solve",
    "solve_positions",
    "write_png",
]
