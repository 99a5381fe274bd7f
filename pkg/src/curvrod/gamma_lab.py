"""Numerical experiments on the thin-tube energies.

Scaled energies

    E(h) = h^-alpha int_Omega W(s, xi, zeta, grad_h v (grad_h Psi)^-1) det(grad_h Psi)

are evaluated by tensor quadrature (Gauss panels in s, the section's triangle
rule in (xi, zeta)) along explicit recovery sequences whose scaled gradients
are known in closed form.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from ._so3 import expm, hat
from .cell_problem import CellProblem, coords_from_skew, skew_from_coords
from .geometry import CrossSectionMesh, ReferenceGeometry, SectionQuadrature
from .material import MaterialModel, QuadraticFormQ3, q3_from_material

DEFAULT_H = tuple(2.0**-k for k in range(3, 8))

FrameFn = Callable[[np.ndarray], tuple]


class ScaledEnergyError(RuntimeError):
    pass


# ------------------------------------------------------------------ quadrature


def s_quadrature(length: float, n_panels: int = 32, points: int = 2, breakpoints: Sequence[float] = ()):
    """Composite Gauss-Legendre nodes and weights on [0, length].

    Breakpoints inside (0, length) become panel edges so that piecewise
    smooth integrands are integrated panel by panel.
    """
    edges = np.linspace(0.0, length, n_panels + 1)
    bp = [b for b in breakpoints if 0.0 < b < length]
    edges = np.unique(np.concatenate([edges, bp]))
    x, w = np.polynomial.legendre.leggauss(points)
    a, b = edges[:-1, None], edges[1:, None]
    nodes = 0.5 * (a + b) + 0.5 * (b - a) * x
    weights = 0.5 * (b - a) * w
    return nodes.ravel(), np.broadcast_to(weights, nodes.shape).ravel().copy()


# ------------------------------------------------------------- deformations


class RecoveryDeformation:
    """Deformation with a closed-form scaled gradient on quadrature points."""

    breakpoints: tuple = ()

    def scaled_gradient(self, s: np.ndarray, quad: SectionQuadrature, h: float) -> np.ndarray:
        """Array (len(s), n_quad, 3, 3)."""
        raise NotImplementedError

    def limit_target(self, geom, mat, q3, s, ws, quad) -> float:
        raise NotImplementedError


@dataclass
class CellCorrector:
    """Cell solutions at stations, interpolated linearly in s."""

    stations: np.ndarray
    alpha: np.ndarray  # (K, nv, 3)
    g: np.ndarray  # (K, 3)
    mesh: CrossSectionMesh

    def _weights(self, s):
        st = self.stations
        if len(st) == 1:
            z = np.zeros(len(s), dtype=int)
            return z, z, np.zeros(len(s)), 0.0 * s
        k = np.clip(np.searchsorted(st, s, side="right") - 1, 0, len(st) - 2)
        span = st[k + 1] - st[k]
        t = (s - st[k]) / span
        return k, k + 1, t, 1.0 / span

    def g_at(self, s) -> np.ndarray:
        k0, k1, t, _ = self._weights(s)
        return (1 - t)[:, None] * self.g[k0] + t[:, None] * self.g[k1]

    def fields(self, s, quad: SectionQuadrature):
        """(alpha at points, d_s alpha at points, grad alpha per point (ns, nq, 3, 2))."""
        k0, k1, t, inv_span = self._weights(s)
        tri = self.mesh.triangles[quad.tri]  # (nq, 3)
        node_vals = self.alpha[:, tri]  # (K, nq, 3 vertices, 3)
        at_pts = np.einsum("kqac,qa->kqc", node_vals, quad.bary)
        grads = self.mesh.gradients()[quad.tri]  # (nq, 3, 2)
        grad_pts = np.einsum("kqac,qad->kqcd", node_vals, grads)
        tt = t[:, None, None]
        a = (1 - tt) * at_pts[k0] + tt * at_pts[k1]
        da = (at_pts[k1] - at_pts[k0]) * np.asarray(inv_span)[..., None, None]
        tt = t[:, None, None, None]
        ga = (1 - tt) * grad_pts[k0] + tt * grad_pts[k1]
        return a, da, ga


@dataclass
class RodRecovery(RecoveryDeformation):
    """v + h xi d2 + h zeta d3 + h q + h^2 beta for a smooth frame path.

    ``frames(s)`` returns (R, R') with R = (v' | d2 | d3). With a corrector,
    q' = R g_hat and beta = R alpha_hat, so that the limit integrand equals the
    cell-problem integrand.
    """

    frames: FrameFn
    corrector: Optional[CellCorrector] = None
    label: str = "rod"

    def scaled_gradient(self, s, quad, h):
        s = np.asarray(s, dtype=float)
        R, dR = self.frames(s)
        xi, zeta = quad.points[:, 0], quad.points[:, 1]
        out = np.broadcast_to(R[:, None], (len(s), len(xi), 3, 3)).copy()
        out[..., :, 0] += h * (
            xi[None, :, None] * dR[:, None, :, 1] + zeta[None, :, None] * dR[:, None, :, 2]
        )
        if self.corrector is not None:
            c = self.corrector
            qprime = np.einsum("nij,nj->ni", R, c.g_at(s))
            a, da, ga = c.fields(s, quad)
            out[..., :, 0] += h * qprime[:, None, :]
            out[..., :, 1:] += h * np.einsum("nij,nqjd->nqid", R, ga)
            dbeta = np.einsum("nij,nqj->nqi", dR, a) + np.einsum("nij,nqj->nqi", R, da)
            out[..., :, 0] += h * h * dbeta
        return out

    def limit_matrix(self, geom: ReferenceGeometry, s, quad) -> np.ndarray:
        """G = R0 [P (0, xi, zeta)^T + R^T q' | R^T d_xi beta | R^T d_zeta beta] R0^T."""
        R, dR = self.frames(s)
        R0, dR0 = geom.frames(s)
        P = np.swapaxes(R, -1, -2) @ dR - np.swapaxes(R0, -1, -2) @ dR0
        P = 0.5 * (P - np.swapaxes(P, -1, -2))
        yz = np.zeros((len(quad.points), 3))
        yz[:, 1:] = quad.points
        M = np.zeros((len(s), len(yz), 3, 3))
        M[..., :, 0] = np.einsum("nij,qj->nqi", P, yz)
        if self.corrector is not None:
            c = self.corrector
            qprime = np.einsum("nij,nj->ni", R, c.g_at(s))
            _, _, ga = c.fields(s, quad)
            Rt = np.swapaxes(R, -1, -2)
            M[..., :, 0] += np.einsum("nij,nj->ni", Rt, qprime)[:, None]
            M[..., :, 1:] += np.einsum("nij,njk,nqkd->nqid", Rt, R, ga)
        return np.einsum("nij,nqjk,nlk->nqil", R0, M, R0)

    def limit_target(self, geom, mat, q3, s, ws, quad) -> float:
        G = self.limit_matrix(geom, s, quad)
        S = np.broadcast_to(s[:, None], G.shape[:2])
        xi = np.broadcast_to(quad.points[None, :, 0], S.shape)
        zeta = np.broadcast_to(quad.points[None, :, 1], S.shape)
        vals = q3(G, S, xi, zeta)
        return float(0.5 * np.sum(ws[:, None] * quad.weights[None, :] * vals))


@dataclass
class StringRecovery(RecoveryDeformation):
    """v + h xi w2 + h zeta w3; ``fields(s)`` returns (M, M') with M = (v' | w2 | w3)."""

    fields: FrameFn
    label: str = "string"

    def scaled_gradient(self, s, quad, h):
        M, dM = self.fields(np.asarray(s, dtype=float))
        xi, zeta = quad.points[:, 0], quad.points[:, 1]
        out = np.broadcast_to(M[:, None], (len(s), len(xi), 3, 3)).copy()
        out[..., :, 0] += h * (xi[None, :, None] * dM[:, None, :, 1] + zeta[None, :, None] * dM[:, None, :, 2])
        return out

    def limit_target(self, geom, mat, q3, s, ws, quad) -> float:
        """int_0^L W(s, (v' | w2 | w3) R0^T) ds (unit-area section)."""
        M, _ = self.fields(s)
        R0, _ = geom.frames(s)
        return float(np.sum(ws * mat(M @ np.swapaxes(R0, -1, -2), s)))


@dataclass
class PiecewiseRotationRecovery(RecoveryDeformation):
    """R1 before s0, R2 after s0 + omega, geodesic transition P((s - s0)/omega) between."""

    R1: np.ndarray
    R2: np.ndarray
    s0: float
    omega: float
    label: str = "piecewise-rotation"

    def __post_init__(self):
        self.R1 = np.asarray(self.R1, dtype=float)
        self.R2 = np.asarray(self.R2, dtype=float)
        self.w = Rotation.from_matrix(self.R1.T @ self.R2).as_rotvec()
        self.breakpoints = (self.s0, self.s0 + self.omega)

    def path(self, t) -> np.ndarray:
        t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
        return self.R1 @ expm(t[..., None] * self.w)

    def scaled_gradient(self, s, quad, h):
        s = np.asarray(s, dtype=float)
        t = (s - self.s0) / self.omega
        P = self.path(t)
        inside = (t >= 0.0) & (t <= 1.0)
        dP = np.where(inside[:, None, None], P @ hat(self.w) / self.omega, 0.0)
        yz = np.zeros((len(quad.points), 3))
        yz[:, 1:] = h * quad.points
        out = np.broadcast_to(P[:, None], (len(s), len(yz), 3, 3)).copy()
        out[..., :, 0] += np.einsum("nij,qj->nqi", dP, yz)
        return out

    def limit_target(self, geom, mat, q3, s, ws, quad) -> float:
        return 0.0


# ---------------------------------------------------------------- builders


def reference_frames(geom: ReferenceGeometry) -> FrameFn:
    return lambda s: geom.frames(np.asarray(s, dtype=float))


def uniform_rotation_frames(rate, R_start=None) -> FrameFn:
    """R(s) = R_start exp(s hat(rate)), a constant body-frame strain."""
    rate = np.asarray(rate, dtype=float)
    R_start = np.eye(3) if R_start is None else np.asarray(R_start, dtype=float)

    def frames(s):
        R = R_start @ expm(np.asarray(s, dtype=float)[:, None] * rate)
        return R, R @ hat(rate)

    return frames


def optimal_corrector(
    frames: FrameFn,
    geom: ReferenceGeometry,
    q3: QuadraticFormQ3,
    stations: Sequence[float],
) -> CellCorrector:
    """Cell solutions for the strain R^T R' - R0^T R0' at each station."""
    if geom.section is None:
        raise ValueError("geometry has no cross-section mesh")
    st = np.asarray(stations, dtype=float)
    R, dR = frames(st)
    R0, dR0 = geom.frames(st)
    P = coords_from_skew(np.swapaxes(R, -1, -2) @ dR - np.swapaxes(R0, -1, -2) @ dR0)
    alphas, gs = [], []
    cache: dict = {}
    for k, s in enumerate(st):
        key = R0[k].tobytes() if q3.homogeneous else None
        cp = cache.get(key) if key is not None else None
        if cp is None:
            cp = CellProblem(q3, geom.section, R0[k], s)
            if key is not None:
                cache[key] = cp
        sol = cp.solve(P[k])
        alphas.append(sol.alpha)
        gs.append(sol.g)
    return CellCorrector(st, np.array(alphas), np.array(gs), geom.section)


def stretched_string(geom: ReferenceGeometry, stretch: float = 1.0) -> StringRecovery:
    """v = stretch * gamma with directors (w2, w3) = (nu2, nu3)."""

    def fields(s):
        R0, dR0 = geom.frames(np.asarray(s, dtype=float))
        D = np.diag([stretch, 1.0, 1.0])
        return R0 @ D, dR0 @ D

    return StringRecovery(fields, label=f"string-stretch-{stretch}")


# --------------------------------------------------------------- energies


def scaled_energy(
    deformation: RecoveryDeformation,
    geom: ReferenceGeometry,
    mat: MaterialModel,
    h: float,
    alpha: float = 2.0,
    n_panels: int = 32,
    s_points: int = 2,
    section_points: int = 3,
    chunk: int = 16,
) -> float:
    """h^-alpha int_Omega W(grad_h v (grad_h Psi)^-1) det(grad_h Psi)."""
    if geom.section is None:
        raise ValueError("geometry has no cross-section mesh")
    quad = geom.section.quadrature(section_points)
    s, ws = s_quadrature(geom.length, n_panels, s_points, deformation.breakpoints)
    xi, zeta = quad.points[:, 0], quad.points[:, 1]
    total = 0.0
    for i in range(0, len(s), chunk):
        sc = s[i : i + chunk]
        Gv = deformation.scaled_gradient(sc, quad, h)
        S = np.broadcast_to(sc[:, None], Gv.shape[:2])
        XI = np.broadcast_to(xi[None], S.shape)
        ZE = np.broadcast_to(zeta[None], S.shape)
        _, inv, det = geom.grad_h_psi(S, XI, ZE, h)
        W = mat(Gv @ inv, S, XI, ZE)
        bad = ~np.isfinite(W)
        if np.any(bad):
            j = np.argwhere(bad)[0]
            raise ScaledEnergyError(
                f"W is not finite at s={S[tuple(j)]:.6g}, xi={XI[tuple(j)]:.6g}, zeta={ZE[tuple(j)]:.6g} (h={h})"
            )
        total += float(np.sum(ws[i : i + chunk, None] * quad.weights[None, :] * W * det))
    return total / h**alpha


@dataclass
class ScaledEnergyResult:
    h: np.ndarray
    E: np.ndarray
    rate: float
    extrapolated: float
    target: float
    alpha: float
    expected_rate: Optional[float] = None
    monotone: Optional[bool] = None
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = {
            "h": [float(x) for x in self.h],
            "E": [float(x) for x in self.E],
            "rate": float(self.rate),
            "extrapolated": float(self.extrapolated),
            "target": float(self.target),
            "alpha": float(self.alpha),
            "expected_rate": None if self.expected_rate is None else float(self.expected_rate),
            "monotone": self.monotone,
        }
        d.update(self.extra)
        return d


def fit_rate(h, err) -> float:
    """Least-squares slope of log|err| against log h."""
    err = np.abs(np.asarray(err, dtype=float))
    ok = err > 0
    if ok.sum() < 2:
        return np.inf
    return float(np.polyfit(np.log(np.asarray(h)[ok]), np.log(err[ok]), 1)[0])


def richardson(h, E) -> float:
    """Extrapolate to h = 0 from the three smallest h, order estimated from the data."""
    order = np.argsort(h)
    h, E = np.asarray(h)[order], np.asarray(E)[order]
    if len(E) < 3:
        return float(E[0])
    e1, e2, e3 = E[0], E[1], E[2]
    r = h[1] / h[0]
    num, den = e2 - e1, e3 - e2
    if num == 0 or den == 0 or num / den <= 0:
        return float(e1)
    p = np.log(den / num) / np.log(r)
    if not np.isfinite(p) or p <= 0:
        return float(e1)
    return float(e1 - (e2 - e1) / (r**p - 1.0))


def _ladder(deformation_at, geom, mat, hs, alpha, threads, **kw):
    def one(h):
        return scaled_energy(deformation_at(h), geom, mat, h, alpha, **kw)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
        return np.array(list(ex.map(one, hs)))


def gamma_limsup_check(
    deformation: RecoveryDeformation,
    geom: ReferenceGeometry,
    mat: MaterialModel,
    hs: Sequence[float] = DEFAULT_H,
    alpha: float = 2.0,
    q3: Optional[QuadraticFormQ3] = None,
    threads: int = 1,
    n_panels: int = 32,
    s_points: int = 2,
) -> ScaledEnergyResult:
    """Energies along the h ladder, their limit target and the fitted rate of |E - target|."""
    hs = np.asarray(hs, dtype=float)
    q3 = q3_from_material(mat) if q3 is None else q3
    quad = geom.section.quadrature(3)
    s, ws = s_quadrature(geom.length, n_panels, s_points, deformation.breakpoints)
    target = deformation.limit_target(geom, mat, q3, s, ws, quad)
    E = _ladder(lambda h: deformation, geom, mat, hs, alpha, threads, n_panels=n_panels, s_points=s_points)
    return ScaledEnergyResult(
        h=hs,
        E=E,
        rate=fit_rate(hs, E - target),
        extrapolated=richardson(hs, E),
        target=target,
        alpha=alpha,
    )


def intermediate_scaling_demo(
    alpha: float,
    beta_exp: float,
    R1,
    R2,
    s0: float,
    geom: ReferenceGeometry,
    mat: MaterialModel,
    hs: Sequence[float] = DEFAULT_H,
    threads: int = 1,
    n_panels: int = 32,
    s_points: int = 3,
) -> ScaledEnergyResult:
    """J(h)/h^alpha along the piecewise-rotation sequence with omega(h) = h^beta_exp."""
    if not 0.0 <= alpha < 2.0:
        raise ValueError("alpha must lie in [0, 2)")
    if not 0.0 < beta_exp < 2.0 - alpha:
        raise ValueError("beta_exp must lie in (0, 2 - alpha)")
    hs = np.asarray(hs, dtype=float)
    if s0 + hs.max() ** beta_exp > geom.length:
        raise ValueError("transition layer leaves [0, L] for the largest h")
    E = _ladder(
        lambda h: PiecewiseRotationRecovery(R1, R2, s0, h**beta_exp),
        geom,
        mat,
        hs,
        alpha,
        threads,
        n_panels=n_panels,
        s_points=s_points,
    )
    order = np.argsort(hs)[::-1]
    return ScaledEnergyResult(
        h=hs,
        E=E,
        rate=fit_rate(hs, E),
        extrapolated=richardson(hs, E),
        target=0.0,
        alpha=alpha,
        expected_rate=min(2.0 - alpha, 2.0 - alpha - beta_exp),
        monotone=bool(np.all(np.diff(E[order]) < 0)),
    )


__all__ = [
    "DEFAULT_H",
    "ScaledEnergyError",
    "s_quadrature",
    "RecoveryDeformation",
    "CellCorrector",
    "RodRecovery",
    "StringRecovery",
    "PiecewiseRotationRecovery",
    "reference_frames",
    "uniform_rotation_frames",
    "optimal_corrector",
    "stretched_string",
    "scaled_energy",
    "ScaledEnergyResult",
    "fit_rate",
    "richardson",
    "gamma_limsup_check",
    "intermediate_scaling_demo",
    "skew_from_coords",
]
