"""Cross-section cell problem and the effective bending-torsion form Q2.

For a skew strain P the cell problem minimizes

    int_D Q3(s, xi, zeta, R0 (P (0, xi, zeta)^T + g | d_xi a | d_zeta a) R0^T)

over warping fields a: D -> R^3 and vectors g in R^3. The minimum is a
quadratic form in P, stored as a symmetric 3x3 matrix in the coordinates
(p12, p13, p23).

Discretization: P1 triangles, 3-point quadrature, gauge fixed by Lagrange
multipliers (zero mean of each warping component and, when Q3 vanishes on
skew matrices, zero skew part of the mean of the bracketed matrix).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import CrossSectionMesh, disc_mesh
from .material import QuadraticFormQ3

_PAIRS = ((0, 1), (0, 2), (1, 2))
DIRECT_SOLVER_LIMIT = 30_000


class CellProblemError(RuntimeError):
    pass


@dataclass(frozen=True)
class SkewCoord:
    """Coordinates of P = p12 (e1^e2) + p13 (e1^e3) + p23 (e2^e3)."""

    p12: float
    p13: float
    p23: float

    def as_array(self) -> np.ndarray:
        return np.array([self.p12, self.p13, self.p23])

    def to_matrix(self) -> np.ndarray:
        return skew_from_coords(self.as_array())

    @classmethod
    def from_matrix(cls, P) -> "SkewCoord":
        return cls(*coords_from_skew(P))


def skew_from_coords(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    P = np.zeros(p.shape[:-1] + (3, 3))
    for k, (i, j) in enumerate(_PAIRS):
        P[..., i, j] = p[..., k]
        P[..., j, i] = -p[..., k]
    return P


def coords_from_skew(P) -> np.ndarray:
    """(p12, p13, p23) of the skew part of P."""
    P = np.asarray(P, dtype=float)
    A = 0.5 * (P - np.swapaxes(P, -1, -2))
    return np.stack([A[..., 0, 1], A[..., 0, 2], A[..., 1, 2]], axis=-1)


def _as_coords(P) -> np.ndarray:
    if isinstance(P, SkewCoord):
        return P.as_array()
    P = np.asarray(P, dtype=float)
    return coords_from_skew(P) if P.shape[-2:] == (3, 3) else P


@dataclass
class Q2Form:
    """Per-station symmetric matrices with Q2(s, P) = p^T Q(s) p."""

    s: np.ndarray
    Q: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.s = np.atleast_1d(np.asarray(self.s, dtype=float))
        self.Q = np.asarray(self.Q, dtype=float).reshape(-1, 3, 3)

    @classmethod
    def constant(cls, Q, **meta) -> "Q2Form":
        return cls(np.array([0.0]), np.asarray(Q)[None], dict(meta))

    def at(self, s) -> np.ndarray:
        """Q at arbitrary s, linearly interpolated between stations."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if len(self.s) == 1:
            return np.broadcast_to(self.Q[0], s.shape + (3, 3)).copy()
        out = np.empty(s.shape + (3, 3))
        for i in range(3):
            for j in range(3):
                out[..., i, j] = np.interp(s, self.s, self.Q[:, i, j])
        return out

    def value(self, P, s=0.0) -> float:
        p = _as_coords(P)
        return float(p @ self.at(s)[0] @ p)


@dataclass
class WarpSolution:
    alpha: np.ndarray  # (n_vertices, 3), zero mean
    g: np.ndarray  # (3,)
    value: float
    p: np.ndarray


def _transport(R0: Optional[np.ndarray]) -> np.ndarray:
    """Matrix T with vec(R0 M R0^T) = T vec(M) (row-major vec)."""
    R0 = np.eye(3) if R0 is None else np.asarray(R0, dtype=float)
    return np.kron(R0, R0)


class CellProblem:
    """Assembled cell problem at one arc-length station.

    The KKT matrix is factorized once; :meth:`solve` handles any number of
    strain vectors.
    """

    def __init__(
        self,
        q3: QuadraticFormQ3,
        mesh: CrossSectionMesh,
        R0: Optional[np.ndarray] = None,
        s: float = 0.0,
        points_per_triangle: int = 3,
    ):
        self.q3, self.mesh, self.s = q3, mesh, float(s)
        if not mesh.is_connected():
            # each extra component adds rigid modes that the mean constraints do not fix
            raise CellProblemError(
                f"singular cell system: section mesh is not connected (vertices={mesh.n_vertices}, "
                f"triangles={mesh.n_triangles}, connected=False)"
            )
        self.R0 = np.eye(3) if R0 is None else np.asarray(R0, dtype=float)
        nv, nt = mesh.n_vertices, mesh.n_triangles
        self.n_alpha = 3 * nv
        self.n_u = self.n_alpha + 3

        quad = mesh.quadrature(points_per_triangle)
        nq = quad.per_triangle
        pts = quad.points.reshape(nt, nq, 2)
        w = quad.weights.reshape(nt, nq)
        T = _transport(self.R0)
        if q3.homogeneous:
            C = q3.matrix(self.s)
            Chat = np.broadcast_to(T.T @ C @ T, (nt, nq, 9, 9))
            self._check_convex(Chat[0, 0][None])
        else:
            C = q3.matrix(self.s, pts[..., 0], pts[..., 1])
            Chat = np.einsum("ai,tqab,bj->tqij", T, C, T)
            self._check_convex(Chat.reshape(-1, 9, 9))
        self.skew_gauge = q3.annihilates_skew(self.s, pts[..., 0], pts[..., 1])

        grads = mesh.gradients()  # (nt, 3, 2)
        B = np.zeros((nt, 9, 12))
        for c in range(3):
            for a in range(3):
                B[:, 3 * c + 1, 3 * a + c] = grads[:, a, 0]
                B[:, 3 * c + 2, 3 * a + c] = grads[:, a, 1]
            B[:, 3 * c, 9 + c] = 1.0
        # b-vectors for the three basis strains: column 1 = P_k (0, xi, zeta)
        Pk = skew_from_coords(np.eye(3))  # (3, 3, 3)
        yz = np.concatenate([np.zeros(pts.shape[:-1] + (1,)), pts], axis=-1)  # (nt, nq, 3)
        col = np.einsum("kij,tqj->tqki", Pk, yz)  # (nt, nq, k, c)
        bq = np.zeros((nt, nq, 3, 9))
        bq[..., 0] = col[..., 0]
        bq[..., 3] = col[..., 1]
        bq[..., 6] = col[..., 2]

        Cw = np.einsum("tq,tqij->tij", w, Chat)
        Ke = np.einsum("tai,tab,tbj->tij", B, Cw, B)
        Cb = np.einsum("tq,tqab,tqkb->tqka", w, Chat, bq)  # (nt, nq, k, 9)
        Fe = np.einsum("tai,tka->tik", B, Cb.sum(1))  # (nt, 12, 3)
        self.C0 = np.einsum("tqka,tqla->kl", bq, Cb)

        tri = mesh.triangles
        dofs = np.concatenate(
            [(3 * tri[:, :, None] + np.arange(3)).reshape(nt, 9), np.broadcast_to(self.n_alpha + np.arange(3), (nt, 3))],
            axis=1,
        )
        rows = np.repeat(dofs, 12, axis=1).ravel()
        cols = np.tile(dofs, (1, 12)).ravel()
        self.K = sp.csr_matrix((Ke.ravel(), (rows, cols)), shape=(self.n_u, self.n_u))
        self.K = 0.5 * (self.K + self.K.T)
        F = np.zeros((self.n_u, 3))
        np.add.at(F, dofs.ravel(), Fe.reshape(-1, 3))
        self.F = F

        # constraints
        area = mesh.triangle_areas
        lumped = np.zeros(nv)
        np.add.at(lumped, tri.ravel(), np.repeat(area / 3.0, 3))
        rows_c = []
        for c in range(3):
            r = np.zeros(self.n_u)
            r[3 * np.arange(nv) + c] = lumped
            rows_c.append(r)
        if self.skew_gauge:
            Mbar = np.zeros((9, self.n_u))
            np.add.at(
                Mbar.T,
                dofs.ravel(),
                np.einsum("t,tai->tia", area, B).reshape(-1, 9),
            )
            for i, j in ((1, 0), (2, 0), (2, 1)):
                rows_c.append(Mbar[3 * i + j] - Mbar[3 * j + i])
        self.A = sp.csr_matrix(np.array(rows_c))
        self.n_constraints = self.A.shape[0]
        self._factorize()

    @staticmethod
    def _check_convex(Chat):
        ev = np.linalg.eigvalsh(0.5 * (Chat + np.swapaxes(Chat, -1, -2)))
        if ev.min() < -1e-10 * max(1.0, np.abs(ev).max()):
            raise CellProblemError(f"Q3 is not positive semidefinite (eigenvalue {ev.min():.3e})")

    def _factorize(self):
        m = self.n_constraints
        self.kkt = sp.bmat([[self.K, self.A.T], [self.A, None]], format="csc")
        self._lu = None
        if self.kkt.shape[0] <= DIRECT_SOLVER_LIMIT:
            try:
                self._lu = spla.splu(self.kkt)
            except RuntimeError as exc:
                raise CellProblemError(self._diagnostics(f"singular cell system: {exc}")) from exc
        self._m = m

    def _diagnostics(self, msg):
        return (
            f"{msg} (vertices={self.mesh.n_vertices}, triangles={self.mesh.n_triangles}, "
            f"connected={self.mesh.is_connected()}, constraints={self.n_constraints})"
        )

    def _solve_rhs(self, rhs: np.ndarray) -> np.ndarray:
        if self._lu is not None:
            x = self._lu.solve(rhs)
        else:
            x = np.column_stack(
                [spla.minres(self.kkt, rhs[:, k], rtol=1e-13, maxiter=20_000)[0] for k in range(rhs.shape[1])]
            )
        res = np.linalg.norm(self.kkt @ x - rhs) / max(np.linalg.norm(rhs), 1e-300)
        if not np.all(np.isfinite(x)) or res > 1e-8:
            raise CellProblemError(self._diagnostics(f"cell solve failed, relative residual {res:.2e}"))
        return x

    def objective(self, u: np.ndarray, p) -> float:
        """Discrete cell energy for unknowns u = (warping nodal values, g)."""
        p = _as_coords(p)
        return float(u @ (self.K @ u) + 2 * u @ (self.F @ p) + p @ self.C0 @ p)

    def solve_many(self, ps: np.ndarray):
        ps = np.atleast_2d(ps)
        rhs = np.zeros((self.kkt.shape[0], len(ps)))
        rhs[: self.n_u] = -self.F @ ps.T
        U = self._solve_rhs(rhs)[: self.n_u]
        vals = np.einsum("ik,ik->k", U, self.K @ U) + 2 * np.einsum("ik,ik->k", U, self.F @ ps.T)
        vals += np.einsum("ki,ij,kj->k", ps, self.C0, ps)
        return U.T, vals

    def solve(self, P) -> WarpSolution:
        p = _as_coords(P)
        U, vals = self.solve_many(p[None])
        u = U[0]
        return WarpSolution(
            alpha=u[: self.n_alpha].reshape(-1, 3), g=u[self.n_alpha :].copy(), value=float(vals[0]), p=p
        )

    def q2_matrix(self) -> np.ndarray:
        """Q by polarization from the three basis strains and their pairwise sums."""
        E = np.eye(3)
        ps = np.vstack([E, E[0] + E[1], E[0] + E[2], E[1] + E[2]])
        _, v = self.solve_many(ps)
        Q = np.diag(v[:3])
        for k, (i, j) in enumerate(((0, 1), (0, 2), (1, 2))):
            Q[i, j] = Q[j, i] = 0.5 * (v[3 + k] - v[i] - v[j])
        return Q


def solve_cell(s, P, q3: QuadraticFormQ3, mesh: CrossSectionMesh, R0=None) -> WarpSolution:
    return CellProblem(q3, mesh, R0, s).solve(P)


def q2_matrix(s, q3: QuadraticFormQ3, mesh: CrossSectionMesh, R0=None) -> Q2Form:
    cp = CellProblem(q3, mesh, R0, s)
    return Q2Form(
        np.array([float(s)]),
        cp.q2_matrix()[None],
        {"triangles": mesh.n_triangles, "vertices": mesh.n_vertices},
    )


def q2_form(
    stations: Sequence[float],
    q3: QuadraticFormQ3,
    mesh: CrossSectionMesh,
    frame_at: Optional[Callable] = None,
    threads: int = 1,
) -> Q2Form:
    """Q2 at several stations; ``frame_at(s)`` returns R0(s) (identity if omitted)."""
    stations = [float(s) for s in stations]

    def one(s):
        R0 = None if frame_at is None else np.asarray(frame_at(s)).reshape(3, 3)
        return CellProblem(q3, mesh, R0, s).q2_matrix()

    with ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
        Qs = list(ex.map(one, stations))
    return Q2Form(np.array(stations), np.array(Qs), {"triangles": mesh.n_triangles})


def refinement_ladder(
    q3: QuadraticFormQ3,
    ladder: Sequence[int] = (500, 2000, 8000),
    mesh_fn: Callable[[int], CrossSectionMesh] = disc_mesh,
    R0=None,
    s: float = 0.0,
    threads: int = 1,
) -> dict:
    """Q on a sequence of meshes plus a Richardson estimate from the two finest.

    Error is assumed O(mesh size^2), i.e. proportional to 1 / n_triangles.
    """
    meshes = [mesh_fn(n) for n in ladder]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
        Qs = list(ex.map(lambda m: CellProblem(q3, m, R0, s).q2_matrix(), meshes))
    nts = [m.n_triangles for m in meshes]
    r = nts[-1] / nts[-2]
    Qx = Qs[-1] + (Qs[-1] - Qs[-2]) / (r - 1.0)
    return {"triangles": nts, "Q": np.array(Qs), "extrapolated": Qx}


def q2_closed_form_isotropic(mu: float, lam: float) -> Q2Form:
    """diag(E/(2 pi), E/(2 pi), mu/(2 pi)), E = mu (3 lam + 2 mu)/(lam + mu).

    Beware: the bending entries are twice E * int_D xi^2 = E/(4 pi) for the
    unit-area disc. The warping FEM and :func:`q2_circular_pointwise` both
    return E/(4 pi); the torsion entry agrees with both.
    """
    E = mu * (3 * lam + 2 * mu) / (lam + mu)
    return Q2Form.constant(np.diag([E / (2 * np.pi), E / (2 * np.pi), mu / (2 * np.pi)]), kind="closed-form")


def q2_circular_pointwise(s, q3: QuadraticFormQ3, R0=None) -> Q2Form:
    """Q2 for homogeneous rods with the unit-area disc section.

    Minimizes (1/4pi) [Q3(R0 (a|u|v) R0^T) + Q3(R0 (b|v|w) R0^T)] over
    u, v, w in R^3, with a = (p12, 0, -p23) and b = (p13, p23, 0), which is the
    cell problem restricted to quadratic warpings. The minimum is a Schur
    complement, computed with a pseudo-inverse.
    """
    T = _transport(R0)
    C = T.T @ q3.matrix(s) @ T
    # vec(A) = LA x + MA p,  vec(B) = LB x + MB p, x = (u, v, w)
    LA, LB = np.zeros((9, 9)), np.zeros((9, 9))
    MA, MB = np.zeros((9, 3)), np.zeros((9, 3))
    for c in range(3):
        LA[3 * c + 1, c] = 1.0  # u in column 2 of A
        LA[3 * c + 2, 3 + c] = 1.0  # v in column 3 of A
        LB[3 * c + 1, 3 + c] = 1.0  # v in column 2 of B
        LB[3 * c + 2, 6 + c] = 1.0  # w in column 3 of B
    MA[0, 0], MA[6, 2] = 1.0, -1.0  # a = (p12, 0, -p23)
    MB[0, 1], MB[3, 2] = 1.0, 1.0  # b = (p13, p23, 0)
    H = LA.T @ C @ LA + LB.T @ C @ LB
    Fx = LA.T @ C @ MA + LB.T @ C @ MB
    S = MA.T @ C @ MA + MB.T @ C @ MB
    Q = (S - Fx.T @ np.linalg.pinv(H, rcond=1e-12, hermitian=True) @ Fx) / (4 * np.pi)
    Q = 0.5 * (Q + Q.T)
    return Q2Form(np.array([float(s)]), Q[None], {"kind": "pointwise-disc"})
