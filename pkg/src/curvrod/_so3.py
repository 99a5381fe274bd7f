"""Small SO(3) helpers shared across modules."""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation


def hat(w: np.ndarray) -> np.ndarray:
    """Skew matrix of a 3-vector; broadcasts over leading axes."""
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def vee(W: np.ndarray) -> np.ndarray:
    """Axial vector of the skew part of W."""
    W = np.asarray(W, dtype=float)
    return 0.5 * np.stack(
        [W[..., 2, 1] - W[..., 1, 2], W[..., 0, 2] - W[..., 2, 0], W[..., 1, 0] - W[..., 0, 1]],
        axis=-1,
    )


def expm(w: np.ndarray) -> np.ndarray:
    return Rotation.from_rotvec(np.asarray(w, dtype=float).reshape(-1, 3)).as_matrix().reshape(
        np.shape(w)[:-1] + (3, 3)
    )


def polar_rotation(M: np.ndarray) -> np.ndarray:
    """Closest rotation to M in the Frobenius norm (batched)."""
    U, _, Vt = np.linalg.svd(M)
    d = np.sign(np.linalg.det(U @ Vt))
    U = U.copy()
    U[..., :, -1] *= d[..., None]
    return U @ Vt


def rot_x(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return expm(np.stack([theta, 0 * theta, 0 * theta], axis=-1))


def rot_z(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return expm(np.stack([0 * theta, 0 * theta, theta], axis=-1))


def random_rotations(n: int, rng: np.random.Generator) -> np.ndarray:
    return Rotation.random(n, random_state=rng).as_matrix()
