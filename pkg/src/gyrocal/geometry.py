"""3-D rotation utilities and calibration error metrics.

Rotation matrices are plain (3, 3) float arrays mapping vectors from the
second gyro's frame to the first. Rotation vectors are (3,) arrays in
radians. Matrices produced here always satisfy the orthonormality check in
:func:`ensure_rotation`; matrices from noisy algebra must be projected with
:func:`nearest_orthonormal` first.
"""

from __future__ import annotations

import numpy as np

from .errors import SingularInputError

ROTATION_TOL = 1e-9


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix: skew(v) @ u == cross(v, u)."""
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def is_rotation(C: np.ndarray, tol: float = ROTATION_TOL) -> bool:
    C = np.asarray(C, dtype=float)
    if C.shape != (3, 3) or not np.all(np.isfinite(C)):
        return False
    if np.max(np.abs(C.T @ C - np.eye(3))) > tol:
        return False
    return abs(np.linalg.det(C) - 1.0) <= tol


def ensure_rotation(C: np.ndarray, tol: float = ROTATION_TOL) -> np.ndarray:
    """Validate a rotation matrix, returning it as a float array.

    Raises ValueError if C^T C deviates from identity by more than `tol`
    per entry or det(C) is not +1 within `tol`.
    """
    C = np.asarray(C, dtype=float)
    if not is_rotation(C, tol):
        raise ValueError("matrix is not a rotation within tolerance "
                         f"{tol:g}; project with nearest_orthonormal first")
    return C


def so3_exp(theta: np.ndarray) -> np.ndarray:
    """Rodrigues formula: rotation matrix for rotation vector `theta`."""
    theta = np.asarray(theta, dtype=float)
    angle = np.linalg.norm(theta)
    K = skew(theta)
    if angle < 1e-8:
        # second-order series keeps the result orthonormal to machine eps
        return np.eye(3) + K + 0.5 * (K @ K)
    a = np.sin(angle) / angle
    b = (1.0 - np.cos(angle)) / angle**2
    return np.eye(3) + a * K + b * (K @ K)


def so3_log(C: np.ndarray) -> np.ndarray:
    """Rotation vector of C with norm in [0, pi].

    The angle comes from atan2 of the antisymmetric-part norm against the
    trace, which stays well conditioned at both ends. The axis switches
    from the antisymmetric part to the largest diagonal of the symmetric
    part once the sine-based extraction starts losing precision near pi.
    """
    C = ensure_rotation(C)
    v = np.array([C[2, 1] - C[1, 2], C[0, 2] - C[2, 0], C[1, 0] - C[0, 1]])
    cos_t = np.clip((np.trace(C) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arctan2(0.5 * np.linalg.norm(v), cos_t)
    if angle < 1e-8:
        return 0.5 * v
    if cos_t > -0.9:
        return angle * v / np.linalg.norm(v)
    # near pi: uu^T = (sym(C) - cos*I) / (1 - cos) is well conditioned
    outer = ((C + C.T) / 2.0 - cos_t * np.eye(3)) / (1.0 - cos_t)
    k = int(np.argmax(np.diag(outer)))
    axis = outer[:, k] / np.sqrt(outer[k, k])
    # sign from the (possibly vanishing) antisymmetric part
    if np.dot(axis, v) < 0.0:
        axis = -axis
    elif np.dot(axis, v) == 0.0 and axis[np.nonzero(axis)[0][0]] < 0.0:
        axis = -axis
    return angle * axis


def nearest_orthonormal(M: np.ndarray) -> np.ndarray:
    """Closest rotation matrix to M in the Frobenius norm (SVD projection)."""
    M = np.asarray(M, dtype=float)
    U, s, Vt = np.linalg.svd(M)
    if s[2] < 1e-12 * s[0]:
        raise SingularInputError(
            f"singular value ratio {s[2] / s[0]:.3e} below 1e-12")
    D = np.diag([1.0, 1.0, np.linalg.det(U @ Vt)])
    return U @ D @ Vt


def rotation_error(C_hat: np.ndarray, C_true: np.ndarray) -> float:
    """Angle in radians between estimated and true rotations."""
    return float(np.linalg.norm(so3_log(ensure_rotation(C_hat) @ ensure_rotation(C_true).T)))


def scale_error(s1_hat, s2_hat, s1_true, s2_true) -> float:
    """Global-scale-invariant distance between scale-factor estimates.

    Both six-vectors are normalized by their own first component before
    differencing, so multiplying every estimate by a common positive
    constant leaves the metric unchanged; the 1/sqrt(5) factor reflects
    the five remaining degrees of freedom.
    """
    est = np.concatenate([np.asarray(s1_hat, float), np.asarray(s2_hat, float)])
    tru = np.concatenate([np.asarray(s1_true, float), np.asarray(s2_true, float)])
    if np.any(est <= 0.0) or np.any(tru <= 0.0):
        raise ValueError("scale factors must be strictly positive")
    return float(np.linalg.norm(est / est[0] - tru / tru[0]) / np.sqrt(5.0))
