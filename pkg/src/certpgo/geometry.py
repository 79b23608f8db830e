"""Small rotation helpers shared across modules (SO(2) and SO(3))."""

import numpy as np
from scipy.spatial.transform import Rotation


def rot2(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def yaw(rotation: np.ndarray) -> float:
    return float(np.arctan2(rotation[1, 0], rotation[0, 0]))


def exp_so(d: int, vec) -> np.ndarray:
    """Exponential map from the tangent vector (1 entry for d=2, 3 for d=3)."""
    vec = np.atleast_1d(np.asarray(vec, dtype=float))
    if d == 2:
        return rot2(vec[0])
    return Rotation.from_rotvec(vec).as_matrix()


def project_to_rotation(m: np.ndarray) -> np.ndarray:
    """Nearest special orthogonal matrix in Frobenius norm."""
    u, _, vt = np.linalg.svd(m)
    if np.linalg.det(u @ vt) < 0:
        u = u.copy()
        u[:, -1] *= -1
    return u @ vt


def rotation_error(rotation: np.ndarray) -> float:
    """Max deviation from the SO(d) constraints (orthogonality and det = 1)."""
    d = rotation.shape[0]
    orth = np.max(np.abs(rotation.T @ rotation - np.eye(d)))
    return float(max(orth, abs(np.linalg.det(rotation) - 1.0)))


def random_rotation(rng: np.random.Generator, d: int) -> np.ndarray:
    if d == 2:
        return rot2(rng.uniform(-np.pi, np.pi))
    return Rotation.random(random_state=rng).as_matrix()


def noise_rotation(rng: np.random.Generator, d: int, stddev: float) -> np.ndarray:
    """Isotropic axis-angle noise: Gaussian angle, uniform axis (random sign for d=2)."""
    angle = rng.normal(0.0, stddev) if stddev > 0 else 0.0
    angle = (angle + np.pi) % (2 * np.pi) - np.pi
    if d == 2:
        sign = 1.0 if rng.random() < 0.5 else -1.0
        return rot2(sign * angle)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return Rotation.from_rotvec(angle * axis).as_matrix()


def quat_from_rotation(rotation: np.ndarray) -> np.ndarray:
    """Unit quaternion ``(qx, qy, qz, qw)`` with ``qw >= 0``; d=2 is embedded as yaw."""
    if rotation.shape[0] == 2:
        half = 0.5 * yaw(rotation)
        q = np.array([0.0, 0.0, np.sin(half), np.cos(half)])
    else:
        q = Rotation.from_matrix(rotation).as_quat()
    if q[3] < 0:
        q = -q
    return q


def rotation_from_quat(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return Rotation.from_quat(q / np.linalg.norm(q)).as_matrix()
