"""Quaternion and rotation-matrix conversions (w-x-y-z convention, batched)."""

from __future__ import annotations

import numpy as np


def normalize_quat(q: np.ndarray) -> np.ndarray:
    """Unit-normalize quaternions along the last axis."""
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for unit quaternions; shape (..., 4) -> (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Unit quaternions (w >= 0) for rotation matrices; (..., 3, 3) -> (..., 4).

    Shepperd's method: pick the numerically largest of the four candidate
    pivots per matrix, so the conversion is stable for all rotation angles.
    """
    R = np.asarray(R, dtype=np.float64)
    batch = R.shape[:-2]
    Rf = R.reshape((-1, 3, 3))
    n = Rf.shape[0]
    q = np.empty((n, 4), dtype=np.float64)

    t = np.einsum("nii->n", Rf)
    # candidate squared pivots: 4w^2-1, 4x^2-1, 4y^2-1, 4z^2-1 (up to trace shift)
    cand = np.stack([
        1.0 + t,
        1.0 + Rf[:, 0, 0] - Rf[:, 1, 1] - Rf[:, 2, 2],
        1.0 - Rf[:, 0, 0] + Rf[:, 1, 1] - Rf[:, 2, 2],
        1.0 - Rf[:, 0, 0] - Rf[:, 1, 1] + Rf[:, 2, 2],
    ], axis=1)
    choice = np.argmax(cand, axis=1)

    for c in range(4):
        idx = np.nonzero(choice == c)[0]
        if idx.size == 0:
            continue
        M = Rf[idx]
        s = np.sqrt(np.maximum(cand[idx, c], 0.0)) * 2.0  # 4 * |component|
        if c == 0:
            q[idx, 0] = 0.25 * s
            q[idx, 1] = (M[:, 2, 1] - M[:, 1, 2]) / s
            q[idx, 2] = (M[:, 0, 2] - M[:, 2, 0]) / s
            q[idx, 3] = (M[:, 1, 0] - M[:, 0, 1]) / s
        elif c == 1:
            q[idx, 0] = (M[:, 2, 1] - M[:, 1, 2]) / s
            q[idx, 1] = 0.25 * s
            q[idx, 2] = (M[:, 0, 1] + M[:, 1, 0]) / s
            q[idx, 3] = (M[:, 0, 2] + M[:, 2, 0]) / s
        elif c == 2:
            q[idx, 0] = (M[:, 0, 2] - M[:, 2, 0]) / s
            q[idx, 1] = (M[:, 0, 1] + M[:, 1, 0]) / s
            q[idx, 2] = 0.25 * s
            q[idx, 3] = (M[:, 1, 2] + M[:, 2, 1]) / s
        else:
            q[idx, 0] = (M[:, 1, 0] - M[:, 0, 1]) / s
            q[idx, 1] = (M[:, 0, 2] + M[:, 2, 0]) / s
            q[idx, 2] = (M[:, 1, 2] + M[:, 2, 1]) / s
            q[idx, 3] = 0.25 * s

    flip = q[:, 0] < 0
    q[flip] = -q[flip]
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return q.reshape(batch + (4,))


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b; composes rotations (a applied after b)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def rotate_vectors(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors v by unit quaternions q (broadcasting on batch dims)."""
    return np.einsum("...ij,...j->...i", quat_to_matrix(q), np.asarray(v, dtype=np.float64))
