"""Regenerate the committed bend-a-bar golden renders.

Run from the repository root:

    python3 tests/make_goldens.py

The ablation acceptance test renders the same scene through
bend_bar_ablation() and compares against the committed bytes, so
regenerate only when the solver or renderer intentionally changes, and
eyeball the image diff before committing.
"""

from pathlib import Path

from clouds import bend_bar_handles, make_bar_cloud
from morphkit import SolverConfig, bind, build_control_graph, deform_cloud, solve
from morphkit.splat_render import look_at, quantize, render

GOLDEN_DIR = Path(__file__).parent / "golden"


def bend_bar_ablation():
    """Solve the bent bar with and without rotation fitting, render both.

    Returns (graph, full_state, lap_state, full_image, lap_image) with the
    images already quantized to 8-bit RGBA.  Everything downstream of the
    fixed seed is deterministic, which is what makes golden files viable.
    """
    cloud = make_bar_cloud()
    graph = build_control_graph(cloud.center, node_count=48)
    handles = bend_bar_handles(graph)
    full = solve(graph, handles, SolverConfig(iterations=3))
    lap = solve(graph, handles,
                SolverConfig(iterations=3, rotation_mode="laplacian_only"))

    table = bind(cloud, graph)
    cam = look_at([0.0, 1.5, -9.0], [0.0, 1.5, 0.0], width=128, height=128)
    img_full = render(deform_cloud(cloud, graph, full, table), cam)
    img_lap = render(deform_cloud(cloud, graph, lap, table), cam)
    return graph, full, lap, quantize(img_full), quantize(img_lap)


def main():
    from PIL import Image

    GOLDEN_DIR.mkdir(exist_ok=True)
    _, _, _, img_full, img_lap = bend_bar_ablation()
    for name, img in [("bend_full_arap.png", img_full),
                      ("bend_laplacian_only.png", img_lap)]:
        Image.fromarray(img, mode="RGBA").save(GOLDEN_DIR / name, format="PNG")
        print(f"wrote {GOLDEN_DIR / name}")


if __name__ == "__main__":
    main()
