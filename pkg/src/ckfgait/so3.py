"""Unit-quaternion and rotation-matrix primitives.

Quaternions are stored scalar-first ``[w, x, y, z]`` using the Hamilton
convention, so ``quat_to_rotation(q) @ v`` rotates ``v`` from the body frame
into the world frame. Every function accepts either a single quaternion of
shape ``(4,)`` or a stack of shape ``(..., 4)``.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import ArrayLike, NDArray

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: ArrayLike) -> NDArray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_multiply(a: ArrayLike, b: ArrayLike) -> NDArray:
    """Hamilton product ``a ⊗ b``, renormalized."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    out = np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )
    return quat_normalize(out)


def quat_inverse(q: ArrayLike) -> NDArray:
    """Conjugate of a unit quaternion."""
    q = np.array(q, dtype=float)
    q[..., 1:] *= -1.0
    return q


def quat_from_axis_angle(axis: ArrayLike, angle: ArrayLike) -> NDArray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    half = 0.5 * np.asarray(angle, dtype=float)[..., None]
    return np.concatenate([np.cos(half), np.sin(half) * axis], axis=-1)


def quat_from_rotvec(rotvec: ArrayLike) -> NDArray:
    """Exponential map from an axis-angle vector to a unit quaternion."""
    rotvec = np.asarray(rotvec, dtype=float)
    angle = np.linalg.norm(rotvec, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(a/2)/a -> 1/2 as a -> 0
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(angle > 1e-8, np.sin(half) / np.where(angle > 0, angle, 1.0),
                         0.5 - angle**2 / 48.0)
    return quat_normalize(np.concatenate([np.cos(half), scale * rotvec], axis=-1))


def quat_to_rotation(q: ArrayLike) -> NDArray:
    """Rotation matrix whose columns are the body axes expressed in the world frame."""
    q = quat_normalize(q)
    w, x, y, z = np.moveaxis(q, -1, 0)
    R = np.empty(q.shape[:-1] + (3, 3))
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


def rotation_to_quat(R: ArrayLike) -> NDArray:
    """Convert rotation matrices to unit quaternions with non-negative scalar part.

    Uses the largest-of-four branch selection so that every branch divides by
    a quantity of at least 1/2.
    """
    R = np.asarray(R, dtype=float)
    m = R.reshape(-1, 3, 3)
    m00, m11, m22 = m[:, 0, 0], m[:, 1, 1], m[:, 2, 2]
    tr = m00 + m11 + m22
    k = np.argmax(np.stack([tr, m00, m11, m22], axis=1), axis=1)
    # 4|q_k|^2 for the selected component, always >= 1
    big = 1.0 + np.choose(k, [tr, m00 - m11 - m22, m11 - m00 - m22, m22 - m00 - m11])
    s = 2.0 * np.sqrt(big)
    a21, a12 = m[:, 2, 1], m[:, 1, 2]
    a02, a20 = m[:, 0, 2], m[:, 2, 0]
    a10, a01 = m[:, 1, 0], m[:, 0, 1]
    rows = np.stack(
        [
            np.stack([0.25 * s, (a21 - a12) / s, (a02 - a20) / s, (a10 - a01) / s], axis=1),
            np.stack([(a21 - a12) / s, 0.25 * s, (a01 + a10) / s, (a02 + a20) / s], axis=1),
            np.stack([(a02 - a20) / s, (a01 + a10) / s, 0.25 * s, (a12 + a21) / s], axis=1),
            np.stack([(a10 - a01) / s, (a02 + a20) / s, (a12 + a21) / s, 0.25 * s], axis=1),
        ]
    )
    q = rows[k, np.arange(len(k))]
    q = np.where(q[:, :1] < 0, -q, q)
    return quat_normalize(q.reshape(R.shape[:-2] + (4,)))


def rotate_vector(q: ArrayLike, v: ArrayLike) -> NDArray:
    """Rotate ``v`` by ``q`` (the sandwich ``q ⊗ [0, v] ⊗ q⁻¹``)."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    w = q[..., :1]
    u = q[..., 1:]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def skew(v: ArrayLike) -> NDArray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(rotvec: ArrayLike) -> NDArray:
    """Rodrigues' formula for a single axis-angle vector."""
    rotvec = np.asarray(rotvec, dtype=float)
    theta = np.linalg.norm(rotvec)
    K = skew(rotvec)
    if theta < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    return np.eye(3) + np.sin(theta) / theta * K + (1 - np.cos(theta)) / theta**2 * K @ K


def so3_log(R: ArrayLike) -> NDArray:
    """Axis-angle vector of a rotation matrix, with norm in ``[0, pi]``.

    Near ``pi`` the axis is read from the column of ``R + I`` with the
    largest diagonal entry, where the sine-based formula loses precision.
    """
    R = np.asarray(R, dtype=float)
    cos_theta = np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0)
    theta = np.arccos(cos_theta)
    vee = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-6:
        # first-order series: log(R) ~ (R - R^T) / 2
        return 0.5 * vee * (1.0 + theta**2 / 6.0)
    if theta < np.pi - 1e-4:
        return theta / (2.0 * np.sin(theta)) * vee
    # symmetric part minus c*I is exactly (1 - c) n n^T
    B = 0.5 * (R + R.T) - cos_theta * np.eye(3)
    i = int(np.argmax(np.diag(B)))
    n = B[:, i] / np.linalg.norm(B[:, i])
    # the antisymmetric part is 2 sin(theta) n; use it for the sign while it is resolvable
    if np.dot(n, vee) < 0:
        n = -n
    return theta * n


def quat_angle(q: ArrayLike) -> NDArray:
    """Rotation angle in ``[0, pi]`` of unit quaternion(s)."""
    q = np.asarray(q, dtype=float)
    vec = np.linalg.norm(q[..., 1:], axis=-1)
    return 2.0 * np.arctan2(vec, np.abs(q[..., 0]))


def yaw_quat(angle: ArrayLike) -> NDArray:
    return quat_from_axis_angle([0.0, 0.0, 1.0], angle)
