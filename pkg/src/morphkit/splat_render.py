"""CPU splat renderer: EWA projection plus depth-sorted alpha compositing.

Camera space is right-handed with x toward image right, y toward image
down, z forward.  Pixels are sampled at integer coordinates with the
principal point at ((width-1)/2, (height-1)/2); focal length derives from
the vertical field of view as (height/2) / tan(fov/2), square pixels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ArgumentError, IoError
from .rotations import quat_to_matrix
from .splat_core import GaussianCloud, GaussianPrimitive

COVARIANCE_FLOOR = 0.3  # px^2 added to the 2D diagonal, anti-aliasing floor
ALPHA_CLAMP = 0.99
ALPHA_SKIP = 1.0 / 255.0


@dataclass(frozen=True)
class Camera:
    """Pinhole camera; orientation is the camera-to-world unit quaternion."""

    position: np.ndarray
    orientation: np.ndarray
    fov_y: float = np.deg2rad(50.0)
    width: int = 512
    height: int = 512
    near: float = 0.01
    far: float = 1000.0

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=np.float64).reshape(3)
        q = np.asarray(self.orientation, dtype=np.float64).reshape(4)
        if abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise ArgumentError("camera orientation quaternion must be unit length")
        if not (0.0 < self.fov_y < np.pi):
            raise ArgumentError("fov_y must lie in (0, pi)")
        if self.width < 1 or self.height < 1:
            raise ArgumentError("image size must be at least 1 x 1")
        if not (0.0 < self.near < self.far):
            raise ArgumentError("need 0 < near < far")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "orientation", q)

    @property
    def focal(self) -> float:
        return (self.height / 2.0) / np.tan(self.fov_y / 2.0)

    @property
    def principal_point(self) -> tuple:
        return ((self.width - 1) / 2.0, (self.height - 1) / 2.0)

    def world_to_camera(self) -> np.ndarray:
        return quat_to_matrix(self.orientation).T

    def to_dict(self) -> dict:
        return {
            "position": self.position.tolist(),
            "orientation": self.orientation.tolist(),
            "fov_y": float(self.fov_y),
            "width": self.width,
            "height": self.height,
            "near": float(self.near),
            "far": float(self.far),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Camera":
        return cls(
            position=data["position"],
            orientation=data["orientation"],
            fov_y=float(data.get("fov_y", np.deg2rad(50.0))),
            width=int(data.get("width", 512)),
            height=int(data.get("height", 512)),
            near=float(data.get("near", 0.01)),
            far=float(data.get("far", 1000.0)),
        )


def look_at(
    position,
    target,
    up=(0.0, 1.0, 0.0),
    fov_y: float = np.deg2rad(50.0),
    width: int = 512,
    height: int = 512,
    near: float = 0.01,
    far: float = 1000.0,
) -> Camera:
    """Camera at position looking toward target with the given world up."""
    from .rotations import matrix_to_quat

    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    fn = np.linalg.norm(forward)
    if fn < 1e-12:
        raise ArgumentError("camera position and target coincide")
    forward = forward / fn
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up)
    rn = np.linalg.norm(right)
    if rn < 1e-12:
        raise ArgumentError("up direction is parallel to the view direction")
    right = right / rn
    down = np.cross(forward, right)
    R = np.stack([right, down, forward], axis=1)  # camera-to-world columns
    return Camera(position, matrix_to_quat(R), fov_y, width, height, near, far)


def default_camera(cloud: "GaussianCloud", width: int = 512, height: int = 512) -> Camera:
    """Framing camera: looks at the cloud centroid from along -z."""
    center = cloud.center.mean(axis=0)
    span = float(np.ptp(cloud.center, axis=0).max()) or 1.0
    return look_at(
        center + np.array([0.0, 0.0, -2.5 * span]), center, width=width, height=height
    )


@dataclass(frozen=True)
class Splat2D:
    """A projected Gaussian: pixel-space footprint plus compositing inputs."""

    mean: np.ndarray        # (2,) pixel coordinates (u, v)
    covariance: np.ndarray  # (2, 2) SPD
    depth: float            # camera-space z
    alpha_peak: float


@dataclass
class SplatImage:
    pixels: np.ndarray             # (H, W, 4) RGBA in [0, 1]
    accumulated_alpha: np.ndarray  # (H, W) in [0, 1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def _project_arrays(
    centers: np.ndarray,
    rotations: np.ndarray,
    scales: np.ndarray,
    opacities: np.ndarray,
    cam: Camera,
):
    """Project a batch of Gaussians; returns fields plus a keep mask."""
    W = cam.world_to_camera()
    t = (centers - cam.position) @ W.T
    z = t[:, 2]
    keep = (z >= cam.near) & (z <= cam.far)

    f = cam.focal
    cx, cy = cam.principal_point
    with np.errstate(divide="ignore", invalid="ignore"):
        u = f * t[:, 0] / z + cx
        v = f * t[:, 1] / z + cy

    Rq = quat_to_matrix(rotations)
    M = Rq * scales[:, None, :]
    sigma_world = M @ np.swapaxes(M, -1, -2)
    sigma_cam = np.einsum("ab,nbc,dc->nad", W, sigma_world, W)

    n = centers.shape[0]
    J = np.zeros((n, 2, 3), dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        J[:, 0, 0] = f / z
        J[:, 1, 1] = f / z
        J[:, 0, 2] = -f * t[:, 0] / (z * z)
        J[:, 1, 2] = -f * t[:, 1] / (z * z)
    cov2d = np.einsum("nab,nbc,ndc->nad", J, sigma_cam, J)
    cov2d[:, 0, 0] += COVARIANCE_FLOOR
    cov2d[:, 1, 1] += COVARIANCE_FLOOR

    # 3-sigma footprint from the larger eigenvalue of the 2x2 covariance
    half_trace = 0.5 * (cov2d[:, 0, 0] + cov2d[:, 1, 1])
    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] * cov2d[:, 1, 0]
    gap = np.sqrt(np.maximum(half_trace * half_trace - det, 0.0))
    radius = 3.0 * np.sqrt(np.maximum(half_trace + gap, 0.0))

    on_screen = (
        (u + radius >= 0.0)
        & (u - radius <= cam.width - 1.0)
        & (v + radius >= 0.0)
        & (v - radius <= cam.height - 1.0)
    )
    keep &= on_screen
    return u, v, cov2d, z, opacities, radius, keep


def project_gaussian(prim: GaussianPrimitive, cam: Camera) -> Optional[Splat2D]:
    """Project one primitive; None means culled (behind near or off screen)."""
    u, v, cov2d, z, op, _, keep = _project_arrays(
        prim.center[None, :],
        prim.rotation[None, :],
        prim.scale[None, :],
        np.array([prim.opacity]),
        cam,
    )
    if not keep[0]:
        return None
    return Splat2D(
        mean=np.array([u[0], v[0]]),
        covariance=cov2d[0],
        depth=float(z[0]),
        alpha_peak=float(op[0]),
    )


def render(cloud: GaussianCloud, cam: Camera, background=(0.0, 0.0, 0.0)) -> SplatImage:
    """Alpha-composite the cloud front to back over a background.

    background is an RGB triple or an (H, W, 3) image plate in [0, 1].
    The splat order is a global depth sort (ties broken by primitive
    index), so the output is invariant to input permutation.
    """
    h, w = cam.height, cam.width
    bg = np.asarray(background, dtype=np.float64)
    if bg.shape == (3,):
        bg = np.broadcast_to(bg, (h, w, 3))
    elif bg.shape != (h, w, 3):
        raise ArgumentError(f"background must be RGB or (H, W, 3); got {bg.shape}")

    u, v, cov2d, z, op, radius, keep = _project_arrays(
        cloud.center, cloud.rotation, cloud.scale, cloud.opacity, cam
    )

    color = np.clip(cloud.color, 0.0, 1.0)
    C = np.zeros((h, w, 3), dtype=np.float64)
    T = np.ones((h, w), dtype=np.float64)

    idx = np.nonzero(keep)[0]
    # front-to-back, ties by primitive index for a canonical order
    order = idx[np.lexsort((idx, z[idx]))]

    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] * cov2d[:, 1, 0]
    for i in order:
        x0 = max(0, int(np.ceil(u[i] - radius[i])))
        x1 = min(w - 1, int(np.floor(u[i] + radius[i])))
        y0 = max(0, int(np.ceil(v[i] - radius[i])))
        y1 = min(h - 1, int(np.floor(v[i] + radius[i])))
        if x0 > x1 or y0 > y1:
            continue
        xs = np.arange(x0, x1 + 1, dtype=np.float64) - u[i]
        ys = np.arange(y0, y1 + 1, dtype=np.float64) - v[i]
        dx = xs[None, :]
        dy = ys[:, None]
        a, b, c = cov2d[i, 0, 0], cov2d[i, 0, 1], cov2d[i, 1, 1]
        # quadratic form through the explicit 2x2 inverse
        q = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det[i]
        alpha = np.minimum(op[i] * np.exp(-0.5 * q), ALPHA_CLAMP)
        alpha[alpha < ALPHA_SKIP] = 0.0
        Twin = T[y0:y1 + 1, x0:x1 + 1]
        C[y0:y1 + 1, x0:x1 + 1] += (Twin * alpha)[:, :, None] * color[i]
        T[y0:y1 + 1, x0:x1 + 1] = Twin * (1.0 - alpha)

    pixels = np.empty((h, w, 4), dtype=np.float64)
    pixels[:, :, :3] = np.clip(C + T[:, :, None] * bg, 0.0, 1.0)
    pixels[:, :, 3] = 1.0
    return SplatImage(pixels=pixels, accumulated_alpha=1.0 - T)


def quantize(image: SplatImage) -> np.ndarray:
    """8-bit RGBA array; channels quantized round-half-up."""
    return np.floor(image.pixels * 255.0 + 0.5).clip(0, 255).astype(np.uint8)


def write_png(image: SplatImage, path) -> None:
    """Write the image as an 8-bit RGBA PNG (deterministic bytes)."""
    from PIL import Image

    data = quantize(image)
    try:
        Image.fromarray(data, mode="RGBA").save(path, format="PNG")
    except OSError as exc:
        raise IoError(f"cannot write PNG to {path}: {exc}") from exc
