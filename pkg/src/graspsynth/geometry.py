"""Small rigid-transform helpers shared by the other modules."""
import numpy as np
from scipy.spatial.transform import Rotation


def axis_angle_matrix(rotvec):
    """3x3 rotation from an axis-angle vector (radians)."""
    rotvec = np.array(rotvec, dtype=np.float64)  # scipy rejects read-only buffers
    if not np.any(rotvec):
        return np.eye(3)
    return Rotation.from_rotvec(rotvec).as_matrix()


def euler_matrix_deg(euler_deg):
    """Rotation for extrinsic x-y-z Euler angles in degrees (R = Rz @ Ry @ Rx)."""
    return Rotation.from_euler("xyz", np.array(euler_deg, dtype=np.float64), degrees=True).as_matrix()


def homogeneous(rotation, translation):
    m = np.eye(4)
    m[:3, :3] = rotation
    m[:3, 3] = translation
    return m


def transform_points(rotation, translation, points):
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return points @ np.asarray(rotation).T + np.asarray(translation)


def is_rotation(r, tol=1e-6):
    r = np.asarray(r, dtype=np.float64)
    return r.shape == (3, 3) and np.allclose(r @ r.T, np.eye(3), atol=tol) and abs(np.linalg.det(r) - 1.0) < tol
