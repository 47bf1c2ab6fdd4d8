"""Camera model, rigid-transform arithmetic and measurement Jacobians.

The pose perturbation convention used throughout the library is a 6-vector
[translation; rotation] applied as a left-multiplied increment on the
world-to-camera transform:

    T(delta) = (exp(skew(delta[3:])), delta[:3]) o T

All Jacobians and the bundle-adjustment retraction share this convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

# Camera-frame depth below which projections and Jacobians are rejected.
DEPTH_FLOOR = 1e-6


class BehindCameraError(DataError):
    """Point at or behind the camera plane (depth <= DEPTH_FLOOR)."""


@dataclass(frozen=True)
class CameraIntrinsics:
    """Rectified pinhole stereo camera (zero distortion)."""

    fx: float
    fy: float
    cx: float
    cy: float
    baseline: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0 and self.baseline > 0):
            raise DataError("fx, fy and baseline must be positive")


def skew(v):
    """Cross-product matrix of a 3-vector."""
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def rotvec_to_matrix(theta):
    """Rodrigues formula: rotation vector to rotation matrix."""
    theta = np.asarray(theta, dtype=float)
    angle = np.linalg.norm(theta)
    if angle < 1e-12:
        K = skew(theta)
        return np.eye(3) + K + 0.5 * (K @ K)
    axis = theta / angle
    K = skew(axis)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def matrix_to_quat(R):
    """Rotation matrix to unit quaternion (w, x, y, z), w >= 0."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(1.0 + R[i, i] - R[j, j] - R[k, k]) * 2.0
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def quat_to_matrix(q):
    """Unit quaternion (w, x, y, z) to rotation matrix."""
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


@dataclass(frozen=True)
class SE3:
    """Rigid transform: p_out = rotation @ p_in + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    @staticmethod
    def identity() -> "SE3":
        return SE3(np.eye(3), np.zeros(3))

    def compose(self, other: "SE3") -> "SE3":
        """self o other (apply `other` first)."""
        return SE3(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> "SE3":
        return SE3(self.rotation.T, -self.rotation.T @ self.translation)

    def apply(self, p):
        return self.rotation @ np.asarray(p, dtype=float) + self.translation

    def matrix(self):
        """4x4 homogeneous matrix."""
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def is_valid(self, tol=1e-9) -> bool:
        R = self.rotation
        return (
            np.all(np.isfinite(R))
            and np.all(np.isfinite(self.translation))
            and np.linalg.norm(R.T @ R - np.eye(3)) <= max(tol, 1e-9) * 10
            and abs(np.linalg.det(R) - 1.0) <= max(tol, 1e-9) * 10
        )


def se3_perturb(delta, pose: SE3) -> SE3:
    """Apply a [translation; rotation] increment on the left of `pose`."""
    delta = np.asarray(delta, dtype=float)
    dR = rotvec_to_matrix(delta[3:6])
    return SE3(dR @ pose.rotation, dR @ pose.translation + delta[:3])


def transform_point(pose: SE3, world_point):
    """World point to camera frame: R p + t."""
    return pose.apply(world_point)


def _camera_point(cam: CameraIntrinsics, pose: SE3, point):
    p = transform_point(pose, point)
    if p[2] <= DEPTH_FLOOR:
        raise BehindCameraError("camera-frame depth %.3g <= %.3g" % (p[2], DEPTH_FLOOR))
    return p


def project_stereo(cam: CameraIntrinsics, pose: SE3, point):
    """Project a world point to (u_left, v, u_right) pixels."""
    X, Y, Z = _camera_point(cam, pose, point)
    return np.array(
        [
            cam.fx * X / Z + cam.cx,
            cam.fy * Y / Z + cam.cy,
            cam.fx * (X - cam.baseline) / Z + cam.cx,
        ]
    )


def project_mono(cam: CameraIntrinsics, pose: SE3, point):
    """Project a world point to (u, v) pixels."""
    return project_stereo(cam, pose, point)[:2]


@dataclass(frozen=True)
class ObservationJacobian:
    """Measurement Jacobian split into pose (6-dof) and point (3-dof) blocks."""

    pose_block: np.ndarray   # (meas_dim, 6)
    point_block: np.ndarray  # (meas_dim, 3)
    meas_dim: int


def _projection_jacobian(cam: CameraIntrinsics, p_cam):
    """Derivative of the stereo projection w.r.t. the camera-frame point."""
    X, Y, Z = p_cam
    iz = 1.0 / Z
    iz2 = iz * iz
    return np.array(
        [
            [cam.fx * iz, 0.0, -cam.fx * X * iz2],
            [0.0, cam.fy * iz, -cam.fy * Y * iz2],
            [cam.fx * iz, 0.0, -cam.fx * (X - cam.baseline) * iz2],
        ]
    )


def observation_jacobian(cam: CameraIntrinsics, pose: SE3, point, kind="stereo") -> ObservationJacobian:
    """Analytic Jacobian of the projection at the stored map values.

    The pose block differentiates w.r.t. the left-multiplied
    [translation; rotation] perturbation of the world-to-camera transform;
    the point block w.r.t. the world point position.
    """
    p_cam = _camera_point(cam, pose, point)
    Jp = _projection_jacobian(cam, p_cam)
    # d p_cam / d delta = [I | -skew(p_cam)],  d p_cam / d p_world = R
    A = np.hstack([Jp, Jp @ (-skew(p_cam))])
    M = Jp @ pose.rotation
    if kind == "mono":
        return ObservationJacobian(A[:2], M[:2], 2)
    if kind == "stereo":
        return ObservationJacobian(A, M, 3)
    raise DataError("unknown observation kind %r" % (kind,))


# ---------------------------------------------------------------------------
# Batched variants (arrays of observations), used by the utility and
# evaluation machinery.  Row i of every output corresponds to input row i.

def batch_camera_points(R, tvec, points):
    """Camera-frame coordinates for stacked poses (N,3,3)/(N,3) and points (N,3)."""
    return np.einsum("nij,nj->ni", R, points) + tvec


def batch_project_stereo(cam: CameraIntrinsics, p_cam):
    """Stereo projections (N,3) of camera-frame points (N,3); no depth check."""
    X, Y, Z = p_cam[:, 0], p_cam[:, 1], p_cam[:, 2]
    return np.stack(
        [
            cam.fx * X / Z + cam.cx,
            cam.fy * Y / Z + cam.cy,
            cam.fx * (X - cam.baseline) / Z + cam.cx,
        ],
        axis=1,
    )


def batch_jacobians(cam: CameraIntrinsics, R, p_cam):
    """Stereo-row Jacobians for stacked observations.

    Returns (A, M) with A of shape (N, 3, 6) and M of shape (N, 3, 3).
    Mono observations use the first two rows of each block.
    """
    n = p_cam.shape[0]
    X, Y, Z = p_cam[:, 0], p_cam[:, 1], p_cam[:, 2]
    iz = 1.0 / Z
    iz2 = iz * iz
    Jp = np.zeros((n, 3, 3))
    Jp[:, 0, 0] = cam.fx * iz
    Jp[:, 0, 2] = -cam.fx * X * iz2
    Jp[:, 1, 1] = cam.fy * iz
    Jp[:, 1, 2] = -cam.fy * Y * iz2
    Jp[:, 2, 0] = cam.fx * iz
    Jp[:, 2, 2] = -cam.fx * (X - cam.baseline) * iz2
    minus_skew = np.zeros((n, 3, 3))
    minus_skew[:, 0, 1] = p_cam[:, 2]
    minus_skew[:, 0, 2] = -p_cam[:, 1]
    minus_skew[:, 1, 0] = -p_cam[:, 2]
    minus_skew[:, 1, 2] = p_cam[:, 0]
    minus_skew[:, 2, 0] = p_cam[:, 1]
    minus_skew[:, 2, 1] = -p_cam[:, 0]
    A = np.concatenate([Jp, np.einsum("nij,njk->nik", Jp, minus_skew)], axis=2)
    M = np.einsum("nij,njk->nik", Jp, R)
    return A, M
