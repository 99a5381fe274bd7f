"""Stored energy densities and their linearization at the identity.

Energies are vectorized: ``W(F, s, xi, zeta)`` accepts deformation gradients
of shape ``(..., 3, 3)`` and position arrays broadcastable to ``(...)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._so3 import random_rotations

EnergyFn = Callable[..., np.ndarray]

_EYE = np.eye(3)


class MaterialError(ValueError):
    pass


@dataclass(frozen=True)
class MaterialModel:
    """Stored energy density W(z, F) with structural flags.

    ``homogeneous`` means W does not depend on z; ``s_only`` means it depends
    on z only through the arc length s. ``delta`` is the radius of the
    neighbourhood of SO(3) where W is C^2.
    """

    energy: EnergyFn = field(repr=False)
    name: str = "custom"
    delta: float = 0.5
    homogeneous: bool = True
    isotropic: bool = False
    s_only: bool = True
    params: dict = field(default_factory=dict)

    def __call__(self, F, s=0.0, xi=0.0, zeta=0.0) -> np.ndarray:
        return self.energy(np.asarray(F, dtype=float), s, xi, zeta)


def green_strain(F: np.ndarray) -> np.ndarray:
    return 0.5 * (np.swapaxes(F, -1, -2) @ F - _EYE)


def _svk(F, mu, lam):
    E = green_strain(F)
    tr = np.trace(E, axis1=-2, axis2=-1)
    return mu * np.sum(E * E, axis=(-2, -1)) + 0.5 * lam * tr**2


def svk(mu: float = 1.0, lam: float = 1.0) -> MaterialModel:
    """St. Venant-Kirchhoff: mu |E|^2 + lam/2 (tr E)^2 with E = (F^T F - I)/2."""
    _check_lame(mu, lam)

    def energy(F, s=0.0, xi=0.0, zeta=0.0):
        return _svk(F, mu, lam)

    return MaterialModel(energy, "svk", isotropic=True, params={"mu": mu, "lam": lam})


def svk_barrier(mu: float = 1.0, lam: float = 1.0, barrier: float = 1.0) -> MaterialModel:
    """SVK plus c (J - 1 - log J), J = det F; +inf when J <= 0."""
    _check_lame(mu, lam)
    if barrier < 0:
        raise MaterialError("barrier coefficient must be nonnegative")

    def energy(F, s=0.0, xi=0.0, zeta=0.0):
        J = np.linalg.det(F)
        with np.errstate(divide="ignore", invalid="ignore"):
            pen = np.where(J > 0, J - 1.0 - np.log(np.where(J > 0, J, 1.0)), np.inf)
        return _svk(F, mu, lam) + barrier * pen

    return MaterialModel(
        energy, "svk_barrier", isotropic=True, params={"mu": mu, "lam": lam, "barrier": barrier}
    )


GRADINGS = {
    "linear": lambda s: 1.0 + s,
    "quadratic": lambda s: 1.0 + s**2,
    "sine": lambda s: 1.0 + 0.5 * np.sin(2 * np.pi * s),
}


def graded_svk(mu: float = 1.0, lam: float = 1.0, grading="linear") -> MaterialModel:
    """Arc-length graded SVK, W(s, F) = g(s) W_svk(F)."""
    _check_lame(mu, lam)
    g = GRADINGS[grading] if isinstance(grading, str) else grading

    def energy(F, s=0.0, xi=0.0, zeta=0.0):
        return np.asarray(g(np.asarray(s, dtype=float))) * _svk(F, mu, lam)

    return MaterialModel(
        energy,
        "graded_svk",
        homogeneous=False,
        isotropic=True,
        params={"mu": mu, "lam": lam, "grading": grading if isinstance(grading, str) else "custom"},
    )


def _check_lame(mu, lam):
    if not mu > 0:
        raise MaterialError(f"mu must be positive, got {mu}")
    if not lam >= 0:
        raise MaterialError(f"lam must be nonnegative, got {lam}")


# ---------------------------------------------------------------------------
# quadratic forms


@dataclass(frozen=True)
class QuadraticFormQ3:
    """Quadratic form G -> vec(G)^T C(z) vec(G) on 3x3 matrices.

    ``matrix_fn(s, xi, zeta)`` returns C with shape ``broadcast(s,xi,zeta) + (9, 9)``
    in row-major vec ordering. ``homogeneous`` forms are evaluated once.
    """

    matrix_fn: Callable[..., np.ndarray] = field(repr=False)
    homogeneous: bool = True
    name: str = "q3"
    params: dict = field(default_factory=dict)

    def matrix(self, s=0.0, xi=0.0, zeta=0.0) -> np.ndarray:
        return np.asarray(self.matrix_fn(s, xi, zeta), dtype=float)

    def __call__(self, G, s=0.0, xi=0.0, zeta=0.0) -> np.ndarray:
        G = np.asarray(G, dtype=float)
        g = G.reshape(G.shape[:-2] + (9,))
        C = self.matrix(s, xi, zeta)
        return np.einsum("...i,...ij,...j->...", g, C, g)

    def annihilates_skew(self, s=0.0, xi=0.0, zeta=0.0, rtol: float = 1e-6) -> bool:
        """True when Q3 vanishes on skew matrices (linearized frame indifference)."""
        C = self.matrix(s, xi, zeta)
        S = _skew_basis().reshape(3, 9)
        block = np.einsum("ai,...ij,bj->...ab", S, C, S)
        return bool(np.all(np.abs(block) <= rtol * max(1.0, np.abs(C).max())))


def _skew_basis() -> np.ndarray:
    B = np.zeros((3, 3, 3))
    for k, (i, j) in enumerate([(0, 1), (0, 2), (1, 2)]):
        B[k, i, j], B[k, j, i] = 1.0, -1.0
    return B


def isotropic_matrix(mu: float, lam: float) -> np.ndarray:
    """9x9 matrix of 2 mu |sym G|^2 + lam (tr G)^2."""
    C = np.zeros((3, 3, 3, 3))
    for i in range(3):
        for j in range(3):
            C[i, j, i, j] += mu
            C[i, j, j, i] += mu
    tr = np.eye(3).reshape(9)
    return C.reshape(9, 9) + lam * np.outer(tr, tr)


def isotropic_q3(mu: float, lam: float) -> QuadraticFormQ3:
    """Q3(G) = 2 mu |(G + G^T)/2|^2 + lam (tr G)^2."""
    C = isotropic_matrix(mu, lam)
    return QuadraticFormQ3(
        lambda s=0.0, xi=0.0, zeta=0.0: _broadcast_matrix(C, s, xi, zeta),
        homogeneous=True,
        name="isotropic",
        params={"mu": mu, "lam": lam},
    )


def fiber_q3(mu: float, lam: float, k: float, direction=(1.0, 1.0, 0.0)) -> QuadraticFormQ3:
    """Isotropic form plus a fiber term k (a . sym(G) a)^2 along the unit vector a."""
    _check_lame(mu, lam)
    if k < 0:
        raise MaterialError("fiber stiffness must be nonnegative")
    a = np.asarray(direction, dtype=float)
    a = a / np.linalg.norm(a)
    m = np.outer(a, a).reshape(9)
    C = isotropic_matrix(mu, lam) + k * np.outer(m, m)
    return QuadraticFormQ3(
        lambda s=0.0, xi=0.0, zeta=0.0: _broadcast_matrix(C, s, xi, zeta),
        homogeneous=True,
        name="fiber",
        params={"mu": mu, "lam": lam, "k": k, "direction": a.tolist()},
    )


def q3_from_evaluator(fn: Callable[[np.ndarray], float], name: str = "user") -> QuadraticFormQ3:
    """Homogeneous Q3 from a user evaluator G -> Q3(G), recovered by polarization."""
    E = np.eye(9).reshape(9, 3, 3)
    diag = np.array([fn(E[i]) for i in range(9)])
    C = np.diag(diag)
    for i in range(9):
        for j in range(i + 1, 9):
            C[i, j] = C[j, i] = 0.5 * (fn(E[i] + E[j]) - diag[i] - diag[j])
    return QuadraticFormQ3(
        lambda s=0.0, xi=0.0, zeta=0.0: _broadcast_matrix(C, s, xi, zeta),
        homogeneous=True,
        name=name,
    )


def _broadcast_matrix(C, s, xi, zeta):
    shape = np.broadcast(np.asarray(s), np.asarray(xi), np.asarray(zeta)).shape
    return np.broadcast_to(C, shape + (9, 9))


def _fd_q(mat: MaterialModel, G, s, xi, zeta, t) -> np.ndarray:
    w0 = mat(_EYE, s, xi, zeta)
    wp = mat(_EYE + t * G, s, xi, zeta)
    wm = mat(_EYE - t * G, s, xi, zeta)
    return (wp - 2 * w0 + wm) / t**2


def q3_fd(mat: MaterialModel, G, s=0.0, xi=0.0, zeta=0.0, t: Optional[float] = None) -> np.ndarray:
    """Second difference of t -> W(Id + tG) at t = 0 with one Richardson step.

    Step t = 1e-4 / max(1, |G|). A stencil hitting W = +inf is retried with
    smaller steps before giving up.
    """
    G = np.asarray(G, dtype=float)
    if t is None:
        t = 1e-4 / max(1.0, float(np.linalg.norm(G)))
    for _ in range(6):
        q1 = _fd_q(mat, G, s, xi, zeta, t)
        q2 = _fd_q(mat, G, s, xi, zeta, t / 2)
        if np.all(np.isfinite(q1)) and np.all(np.isfinite(q2)):
            return (4 * q2 - q1) / 3
        t /= 10
    raise MaterialError("W is infinite inside the finite-difference stencil at Id")


def q3_from_material(mat: MaterialModel) -> QuadraticFormQ3:
    """Q3(z, G) = d^2 W/dF^2 (z, Id)[G, G] by finite differences and polarization."""
    E = np.eye(9).reshape(9, 3, 3)

    def matrix_fn(s=0.0, xi=0.0, zeta=0.0):
        shape = np.broadcast(np.asarray(s), np.asarray(xi), np.asarray(zeta)).shape
        s_, x_, z_ = (np.broadcast_to(np.asarray(a, dtype=float), shape) for a in (s, xi, zeta))
        s_, x_, z_ = (a[..., None, None] for a in (s_, x_, z_))
        diag = [q3_fd(mat, E[i], s_[..., 0, 0], x_[..., 0, 0], z_[..., 0, 0]) for i in range(9)]
        C = np.zeros(shape + (9, 9))
        for i in range(9):
            C[..., i, i] = diag[i]
        for i in range(9):
            for j in range(i + 1, 9):
                qij = q3_fd(mat, E[i] + E[j], s_[..., 0, 0], x_[..., 0, 0], z_[..., 0, 0])
                C[..., i, j] = C[..., j, i] = 0.5 * (qij - diag[i] - diag[j])
        return C

    if mat.homogeneous:
        C0 = matrix_fn()
        return QuadraticFormQ3(
            lambda s=0.0, xi=0.0, zeta=0.0: _broadcast_matrix(C0, s, xi, zeta),
            homogeneous=True,
            name=f"fd[{mat.name}]",
        )
    return QuadraticFormQ3(matrix_fn, homogeneous=False, name=f"fd[{mat.name}]")


# ---------------------------------------------------------------------------
# hypotheses


def dist_so3(F: np.ndarray) -> np.ndarray:
    """Distance to SO(3) from singular values, smallest one negated when det F < 0."""
    F = np.asarray(F, dtype=float)
    sig = np.linalg.svd(F, compute_uv=False)
    neg = np.linalg.det(F) < 0
    sig = sig.copy()
    sig[..., -1] = np.where(neg, -sig[..., -1], sig[..., -1])
    return np.sqrt(np.sum((sig - 1.0) ** 2, axis=-1))


@dataclass
class HypothesisReport:
    frame_indifference: float
    rotation_value: float
    coercivity_near: float
    coercivity_far: float
    n_samples: int

    @property
    def passed(self) -> bool:
        return (
            self.frame_indifference <= 1e-10
            and self.rotation_value <= 1e-12
            and self.coercivity_near > 0
            and self.coercivity_far > 0
        )

    def as_dict(self) -> dict:
        return {
            "frame_indifference": self.frame_indifference,
            "rotation_value": self.rotation_value,
            "coercivity_near": self.coercivity_near,
            "coercivity_far": self.coercivity_far,
            "n_samples": self.n_samples,
            "passed": self.passed,
        }


def check_hypotheses(
    mat: MaterialModel, n_samples: int = 200, seed: int = 0, length: float = 1.0
) -> HypothesisReport:
    """Sample frame indifference, W(R) = 0 and coercivity W >= C dist^2.

    Far-field samples are drawn with det F > 0; near-field samples are
    perturbations R(I + eps X) of random rotations.
    """
    rng = np.random.default_rng(seed)
    n = n_samples
    s = rng.uniform(0, length, n)
    xi, zeta = rng.uniform(-1, 1, (2, n))

    F = rng.normal(size=(n, 3, 3))
    flip = np.linalg.det(F) < 0
    F[flip, :, 0] *= -1
    Q = random_rotations(n, rng)
    w = mat(F, s, xi, zeta)
    wq = mat(Q @ F, s, xi, zeta)
    fi = np.max(np.abs(wq - w) / (1.0 + np.abs(w)))

    R = random_rotations(n, rng)
    rot_val = float(np.max(np.abs(mat(R, s, xi, zeta))))

    far = w / dist_so3(F) ** 2

    eps = rng.uniform(1e-3, 0.3, n)
    X = rng.normal(size=(n, 3, 3))
    X /= np.linalg.norm(X, axis=(1, 2), keepdims=True)
    Fn = R @ (np.eye(3) + eps[:, None, None] * X)
    d = dist_so3(Fn)
    near = mat(Fn, s, xi, zeta)[d > 1e-8] / d[d > 1e-8] ** 2

    return HypothesisReport(
        frame_indifference=float(fi),
        rotation_value=rot_val,
        coercivity_near=float(np.min(near)),
        coercivity_far=float(np.min(far)),
        n_samples=n,
    )
