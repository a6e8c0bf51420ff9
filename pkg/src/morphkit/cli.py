"""Command-line entry points: info, graph, deform, render, serve.

Heavy imports happen inside the subcommands so MORPHKIT_THREADS can cap
the BLAS thread pools before numpy is first loaded.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)


def _cap_threads() -> None:
    cap = os.environ.get("MORPHKIT_THREADS")
    if not cap:
        return
    for var in _THREAD_VARS:
        os.environ.setdefault(var, cap)


def _parse_background(text: str):
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("background must be r,g,b in [0,1]")
    return tuple(parts)


def _cmd_info(args) -> int:
    from . import splat_core

    cloud = splat_core.load_cloud(args.input)
    lo = cloud.center.min(axis=0)
    hi = cloud.center.max(axis=0)
    print(f"gaussians: {cloud.count}")
    print(f"bounds min: {lo[0]:.6g} {lo[1]:.6g} {lo[2]:.6g}")
    print(f"bounds max: {hi[0]:.6g} {hi[1]:.6g} {hi[2]:.6g}")
    print(f"opacity mean: {cloud.opacity.mean():.4f}")
    print(f"scale mean: {cloud.scale.mean():.6g}")
    if cloud.extras:
        print(f"extra properties: {', '.join(sorted(cloud.extras))}")
    return 0


def _cmd_graph(args) -> int:
    from . import deform_graph, splat_core

    cloud = splat_core.load_cloud(args.input)
    graph = deform_graph.build_control_graph(
        cloud.center, node_count=args.nodes, seed_index=args.seed
    )
    payload = deform_graph.graph_to_dict(graph)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)
        print(f"graph: {graph.node_count} nodes, {graph.edges.shape[0]} edges -> {args.out}")
    else:
        json.dump(payload, sys.stdout)
        print()
    return 0


def _load_handles(path):
    from .errors import ConstraintError, SchemaError

    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"handle file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise SchemaError("handle file must be a JSON list of {node, target}")
    if not raw:
        raise ConstraintError(
            "handle file is empty; at least one handle is required to pin the solve"
        )
    entries = []
    for item in raw:
        if not isinstance(item, dict) or "node" not in item or "target" not in item:
            raise SchemaError("each handle entry needs node and target fields")
        entries.append((int(item["node"]), item["target"]))
    return entries


def _cmd_deform(args) -> int:
    import numpy as np

    from . import deform_graph, skinning, splat_core
    from .arap_solver import HandleSet, SolverConfig, solve

    cloud = splat_core.load_cloud(args.input)
    graph = deform_graph.build_control_graph(
        cloud.center, node_count=args.nodes, seed_index=args.seed
    )
    binding = skinning.bind(cloud, graph)
    entries = _load_handles(args.handles)
    handles = HandleSet(
        np.array([n for n, _ in entries]), np.array([t for _, t in entries])
    )
    mode = "full_arap" if args.mode == "arap" else "laplacian_only"
    config = SolverConfig(iterations=args.iters, rotation_mode=mode)
    state = solve(graph, handles, config)
    deformed = skinning.deform_cloud(cloud, graph, state, binding)
    if args.out.endswith(".json"):
        splat_core.save_json(deformed, args.out)
    else:
        splat_core.save_ply(deformed, args.out)
    print(f"final energy: {state.energy:.6e} ({args.mode}, {args.iters} iterations)")
    print(f"deformed cloud -> {args.out}")
    return 0


def _cmd_render(args) -> int:
    from . import splat_core, splat_render

    cloud = splat_core.load_cloud(args.input)
    if args.camera:
        with open(args.camera, "r", encoding="utf-8") as fh:
            camera = splat_render.Camera.from_dict(json.load(fh))
    else:
        camera = splat_render.default_camera(cloud, args.width, args.height)
    image = splat_render.render(cloud, camera, args.background)
    splat_render.write_png(image, args.out)
    print(f"rendered {cloud.count} gaussians -> {args.out}")
    return 0


def _cmd_serve(args) -> int:
    from .arap_solver import SolverConfig
    from .server import run_server
    from .session import SessionConfig

    config = SessionConfig(
        node_count=args.nodes, solver=SolverConfig(iterations=args.iters)
    )
    return run_server(
        host=args.host,
        port=args.port,
        config=config,
        web_port=args.web_port,
        web_root=args.web_root,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="morphkit",
        description="Interactive deformation for 3D Gaussian Splatting objects",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("info", help="summarize a Gaussian cloud file")
    p.add_argument("input")
    p.set_defaults(func=_cmd_info)

    p = sub.add_parser("graph", help="build the control graph and export JSON")
    p.add_argument("input")
    p.add_argument("--nodes", type=int, default=512)
    p.add_argument("--seed", type=int, default=0, help="index of the first sample")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_graph)

    p = sub.add_parser("deform", help="solve a handle deformation and export")
    p.add_argument("input")
    p.add_argument("--handles", required=True, help='JSON: [{"node": i, "target": [x,y,z]}]')
    p.add_argument("--iters", type=int, default=3)
    p.add_argument("--mode", choices=("arap", "laplacian"), default="arap")
    p.add_argument("--nodes", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_deform)

    p = sub.add_parser("render", help="render a cloud to PNG")
    p.add_argument("input")
    p.add_argument("--camera", help="camera JSON file")
    p.add_argument("--width", type=int, default=512)
    p.add_argument("--height", type=int, default=512)
    p.add_argument("--background", type=_parse_background, default=(0.0, 0.0, 0.0))
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("serve", help="run the editing protocol server")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7777)
    p.add_argument("--web-port", type=int, default=None, help="also serve the browser UI")
    p.add_argument("--web-root", default=None, help="static directory for the UI bundle")
    p.add_argument("--nodes", type=int, default=512)
    p.add_argument("--iters", type=int, default=3)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    _cap_threads()
    parser = build_parser()
    args = parser.parse_args(argv)
    from .errors import MorphkitError

    try:
        return args.func(args)
    except MorphkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
