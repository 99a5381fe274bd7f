"""Acceptance checks shared by the test suite and ``curvrod verify``.

Each check returns a :class:`CriterionResult`; tolerances are fixed here and
are not affected by the CLI tolerance profile.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from ._so3 import expm, random_rotations, rot_z
from .cell_problem import (
    CellProblem,
    q2_circular_pointwise,
    refinement_ladder,
)
from .geometry import (
    CrossSectionMesh,
    ReferenceGeometry,
    build_frame,
    circle_arc,
    disc_mesh,
    helix,
    helix_curvature_torsion,
    line,
)
from .material import check_hypotheses, fiber_q3, graded_svk, isotropic_q3, q3_from_material, svk, svk_barrier
from .gamma_lab import (
    DEFAULT_H,
    RodRecovery,
    gamma_limsup_check,
    intermediate_scaling_demo,
    optimal_corrector,
    reference_frames,
    scaled_energy,
    stretched_string,
    uniform_rotation_frames,
)
from .rod_model import ReferenceRod, RodState, energy, fd_gradient, minimize, twist_state
from .string_model import convexified_density

FOUR_PI = 4.0 * np.pi


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] criterion {self.number:2d}: {self.title} ({self.seconds:.1f}s)"

    def as_dict(self) -> dict:
        return {
            "number": self.number,
            "title": self.title,
            "passed": bool(self.passed),
            "seconds": round(self.seconds, 3),
            "details": _jsonable(self.details),
        }


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return float(x)
    return x


def _timed(number: int, title: str, fn: Callable[[], tuple]) -> CriterionResult:
    t0 = time.perf_counter()
    passed, details = fn()
    return CriterionResult(number, title, bool(passed), details, time.perf_counter() - t0)


def straight_geometry(section: CrossSectionMesh, length: float = 1.0) -> ReferenceGeometry:
    c = line(length, 101)
    return ReferenceGeometry(c, build_frame(c), section)


# ------------------------------------------------------------- dense oracle


_EDGE_MID_BARY = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])


def dense_cell_oracle(q3, mesh: CrossSectionMesh, R0=None, s: float = 0.0) -> np.ndarray:
    """Q by brute force: dense Hessian of the discrete cell energy, least-squares solve.

    Written independently of :class:`CellProblem`: triangle-by-triangle loops,
    edge-midpoint quadrature, no gauge constraints (the minimum value does not
    depend on the gauge), pivoted QR least squares for the singular system.
    """
    R0 = np.eye(3) if R0 is None else np.asarray(R0)
    nv = len(mesh.vertices)
    n = 3 * nv + 3
    rows_L, rows_b, wts, Cs = [], [], [], []
    for tri in mesh.triangles:
        X = mesh.vertices[tri]
        # basis gradients from [1 x y] interpolation matrix
        A = np.column_stack([np.ones(3), X])
        coef = np.linalg.inv(A)  # column a gives phi_a = c0 + c1 x + c2 y
        grads = coef[1:, :].T  # (3 vertices, 2)
        area = 0.5 * abs(np.linalg.det(np.column_stack([X[1] - X[0], X[2] - X[0]])))
        for bary in _EDGE_MID_BARY:
            xi, zeta = bary @ X
            L = np.zeros((3, 3, n))
            for c in range(3):
                L[c, 0, 3 * nv + c] = 1.0
                for a in range(3):
                    L[c, 1, 3 * tri[a] + c] += grads[a, 0]
                    L[c, 2, 3 * tri[a] + c] += grads[a, 1]
            b = np.zeros((3, 3, 3))  # (strain k, row c, col)
            # P (0, xi, zeta): basis p12 -> (xi, 0, 0), p13 -> (zeta, 0, 0), p23 -> (0, zeta, -xi)
            b[0, 0, 0] = xi
            b[1, 0, 0] = zeta
            b[2, 1, 0], b[2, 2, 0] = zeta, -xi
            # transport by R0 . R0^T
            Lt = np.einsum("ij,jkn,lk->iln", R0, L, R0)
            bt = np.einsum("ij,mjk,lk->mil", R0, b, R0)
            rows_L.append(Lt.reshape(9, n))
            rows_b.append(bt.reshape(3, 9))
            wts.append(area / 3.0)
            Cs.append(q3.matrix(s, xi, zeta))
    H = np.zeros((n, n))
    F = np.zeros((n, 3))
    C0 = np.zeros((3, 3))
    for L, b, w, C in zip(rows_L, rows_b, wts, Cs):
        H += w * L.T @ C @ L
        F += w * L.T @ C @ b.T
        C0 += w * b @ C @ b.T
    x, *_ = sla.lstsq(H, -F, lapack_driver="gelsy")
    Q = C0 + F.T @ x
    return 0.5 * (Q + Q.T)


# ---------------------------------------------------------------- criteria


def criterion_1(threads: int = 1) -> CriterionResult:
    def run():
        mu = lam = 1.0
        q3 = isotropic_q3(mu, lam)
        target = np.diag([5 / FOUR_PI, 5 / FOUR_PI, 1 / (2 * np.pi)])
        t0 = time.perf_counter()
        lad = refinement_ladder(q3, (500, 2000, 8000), disc_mesh, threads=threads)
        elapsed = time.perf_counter() - t0
        Qs, Qx = lad["Q"], lad["extrapolated"]
        rel = lambda Q: np.abs(np.diag(Q) - np.diag(target)) / np.diag(target)
        off = max(float(np.abs(Q - np.diag(np.diag(Q))).max()) for Q in list(Qs) + [Qx])
        coarse_ok = rel(Qs[0]).max() <= 0.02
        extrap_ok = rel(Qx).max() <= 0.01
        E = mu * (3 * lam + 2 * mu) / (lam + mu)
        details = {
            "triangles": lad["triangles"],
            "diag_levels": [np.diag(Q) for Q in Qs],
            "diag_extrapolated": np.diag(Qx),
            "diag_target": np.diag(target),
            "rel_error_coarse": rel(Qs[0]),
            "rel_error_extrapolated": rel(Qx),
            "max_offdiag": off,
            "runtime_s": elapsed,
            "bending_over_E_times_second_moment": float(Qx[0, 0] / (E / FOUR_PI)),
        }
        return coarse_ok and extrap_ok and off <= 1e-6 and elapsed <= 30.0, details

    return _timed(1, "isotropic disc Q2 against the closed form", run)


def criterion_2(seed: int = 0) -> CriterionResult:
    def run():
        rng = np.random.default_rng(seed)
        mesh = disc_mesh(500)
        worst = 0.0
        n_solves = 0
        for _ in range(5):
            mu, lam = rng.uniform(0.5, 2.0, size=2)
            cp = CellProblem(q3_from_material(svk(mu, lam)), mesh)
            for _ in range(20):
                p = rng.normal(size=3)
                sol = cp.solve(p)
                worst = max(worst, np.linalg.norm(sol.g) / np.linalg.norm(p))
                n_solves += 1
        return worst <= 1e-8, {"max_g_over_P": worst, "solves": n_solves}

    return _timed(2, "optimal g vanishes for homogeneous SVK", run)


def criterion_3() -> CriterionResult:
    def run():
        mesh = disc_mesh(5000)
        out = {}
        ok = True
        for name, q3 in (("isotropic", isotropic_q3(1.0, 1.0)), ("fiber", fiber_q3(1.0, 1.0, 3.0))):
            Qf = CellProblem(q3, mesh).q2_matrix()
            Qp = q2_circular_pointwise(0.0, q3).Q[0]
            rel = float(np.abs(Qf - Qp).max() / np.abs(Qp).max())
            out[name] = {"fem": Qf, "pointwise": Qp, "rel_error": rel}
            ok &= rel <= 0.01
        return ok, out

    return _timed(3, "pointwise disc formula against the FEM cell solve", run)


def criterion_4(seed: int = 0) -> CriterionResult:
    def run():
        rad, pitch = 1.0, 0.5
        _, tau = helix_curvature_torsion(rad, pitch)
        c = helix(rad, pitch, 2.0, 401)
        frame = build_frame(c, (0.0, 0.0, 1.0), twist=tau)
        q2 = q2_circular_pointwise(0.0, isotropic_q3(1.0, 1.0))
        ref = ReferenceRod.from_frame(frame, q2, 200)
        st = ref.state()
        vals = [energy(st, ref)]
        for Q in random_rotations(10, np.random.default_rng(seed)):
            vals.append(energy(st.rotated(Q), ref))
        worst = float(max(vals))
        return worst <= 1e-12, {"energies": vals, "max": worst}

    return _timed(4, "reference and rigid motions have zero rod energy", run)


def criterion_5() -> CriterionResult:
    def run():
        mu, L, N = 1.0, 1.0, 200
        q2 = q2_circular_pointwise(0.0, isotropic_q3(mu, 1.0))
        ref = ReferenceRod.straight(q2, L, N)
        t0 = time.perf_counter()
        res = minimize(twist_state(L, N, 1.0, wobble=1.0), ref, "clamped-both")
        elapsed = time.perf_counter() - t0
        expected = 0.5 * (mu / (2 * np.pi)) * (2 * np.pi / L) ** 2 * L
        rel = abs(res.energy - expected) / expected
        # uniform twist: relative rotations all equal
        R = res.state.R
        rel_rot = np.einsum("nji,njk->nik", R[:-1], R[1:])
        spread = float(np.abs(rel_rot - rel_rot.mean(0)).max())
        details = {
            "energy": res.energy,
            "expected": expected,
            "rel_error": rel,
            "iterations": res.iterations,
            "grad_norm": res.grad_norm,
            "converged": res.converged,
            "uniformity": spread,
            "runtime_s": elapsed,
        }
        return rel <= 0.01 and elapsed <= 60.0 and res.converged, details

    return _timed(5, "twist equilibrium of a clamped straight rod", run)


def _bend_setup(mesh_triangles: int = 500):
    mesh = disc_mesh(mesh_triangles)
    geom = straight_geometry(mesh)
    mat = svk(1.0, 1.0)
    q3 = isotropic_q3(1.0, 1.0)
    frames = uniform_rotation_frames([0.0, 0.0, 1.0])
    return mesh, geom, mat, q3, frames


def _rod_energy_bend(mesh, q3, kappa=1.0, L=1.0):
    Q = CellProblem(q3, mesh).q2_matrix()
    from .cell_problem import Q2Form
    from .rod_model import bend_state

    ref = ReferenceRod.straight(Q2Form.constant(Q), L, 64)
    return energy(bend_state(L, 64, kappa), ref)


def criterion_6(threads: int = 1) -> CriterionResult:
    def run():
        mesh, geom, mat, q3, frames = _bend_setup()
        cor = optimal_corrector(frames, geom, q3, np.linspace(0.0, 1.0, 5))
        res = gamma_limsup_check(RodRecovery(frames, cor), geom, mat, DEFAULT_H, 2.0, q3, threads)
        rod_e = _rod_energy_bend(mesh, q3)
        anchor = max(
            abs(scaled_energy(RodRecovery(reference_frames(geom)), geom, mat, h)) for h in DEFAULT_H
        )
        rel = abs(res.extrapolated - rod_e) / rod_e
        details = {**res.as_dict(), "rod_energy": rod_e, "rel_error": rel, "identity_anchor": anchor}
        return res.rate >= 0.9 and rel <= 0.005 and anchor <= 1e-12, details

    return _timed(6, "limsup convergence with optimal correctors", run)


def criterion_7(threads: int = 1) -> CriterionResult:
    def run():
        mesh, geom, mat, q3, frames = _bend_setup()
        res = gamma_limsup_check(RodRecovery(frames), geom, mat, DEFAULT_H, 2.0, q3, threads)
        rod_e = _rod_energy_bend(mesh, q3)
        return res.extrapolated >= rod_e - 1e-6, {**res.as_dict(), "rod_energy": rod_e}

    return _timed(7, "zero correctors overshoot the rod energy", run)


def criterion_8() -> CriterionResult:
    def run():
        cvx = convexified_density(svk(1.0, 1.0))
        inside = {r: float(cvx.profile(r)) for r in (0.0, 0.5, 0.99)}
        outside = float(cvx.profile(1.1))
        ok = max(inside.values()) <= 1e-8 and outside >= 1e-3
        return ok, {"inside": inside, "at_1.1": outside}

    return _timed(8, "zero set of the relaxed string density", run)


def criterion_9(threads: int = 1) -> CriterionResult:
    def run():
        mesh = disc_mesh(500)
        arc = circle_arc(1.0, 1.0, 201)
        geom = ReferenceGeometry(arc, build_frame(arc, (0.0, 0.0, 1.0)), mesh)
        mat = svk(1.0, 1.0)
        q3 = isotropic_q3(1.0, 1.0)
        rest = gamma_limsup_check(stretched_string(geom, 1.0), geom, mat, DEFAULT_H, 0.0, q3, threads)
        st = gamma_limsup_check(stretched_string(geom, 1.2), geom, mat, DEFAULT_H, 0.0, q3, threads)
        rel = abs(st.extrapolated - st.target) / st.target
        ok = abs(rest.extrapolated) <= 1e-10 and max(abs(rest.E)) <= 1e-10 and rel <= 0.01
        return ok, {"unstretched": rest.as_dict(), "stretched": st.as_dict(), "rel_error": rel}

    return _timed(9, "string-scale limit of the membrane recovery", run)


def criterion_10(threads: int = 1) -> CriterionResult:
    def run():
        geom = straight_geometry(disc_mesh(500))
        res = intermediate_scaling_demo(
            1.0, 0.5, np.eye(3), rot_z(np.pi / 2), 0.5, geom, svk(1.0, 1.0), DEFAULT_H, threads
        )
        return abs(res.rate - 0.5) <= 0.15 and res.monotone, res.as_dict()

    return _timed(10, "intermediate scaling tends to zero", run)


def inverse_expansion_slope() -> dict:
    arc = circle_arc(1.0, 1.0, 201)
    geom = ReferenceGeometry(arc, build_frame(arc, (0.0, 0.0, 1.0)), disc_mesh(100))
    rng = np.random.default_rng(1)
    s = rng.uniform(0, 1, 50)
    xi, zeta = rng.uniform(-0.5, 0.5, (2, 50))
    hs = 2.0 ** -np.arange(2, 8)
    res = []
    for h in hs:
        _, inv, _ = geom.grad_h_psi(s, xi, zeta, h)
        res.append(np.abs(inv - geom.inverse_expansion(s, xi, zeta, h)).max())
    slope = float(np.polyfit(np.log(hs), np.log(res), 1)[0])
    return {"h": hs, "residual": res, "slope": slope}


def fd_gradient_check(seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    N, L = 60, 1.0
    s = np.linspace(0, L, N + 1)
    coef = rng.normal(size=(3, 3, 2)) * 0.5

    def smooth(c):
        return sum(c[:, k, None] * np.sin((k + 1) * np.pi * s)[None] for k in range(3)).T

    R = expm(smooth(coef[..., 0]))
    c = helix(1.0, 0.5, L, 201)
    frame = build_frame(c, (0.0, 0.0, 1.0))
    ref = ReferenceRod.from_frame(frame, q2_circular_pointwise(0.0, fiber_q3(1.0, 0.5, 2.0)), N)
    d = smooth(coef[..., 1])
    g = fd_gradient(R, ref)
    pred = float(np.sum(g * d))
    t = 1e-3
    E = lambda u: energy(R @ expm(u * d), ref)
    ref_dd = (-E(2 * t) + 8 * E(t) - 8 * E(-t) + E(-2 * t)) / (12 * t)
    return {"gradient_dot_direction": pred, "directional_derivative": ref_dd, "rel_error": abs(pred - ref_dd) / abs(ref_dd)}


def monotone_refinement() -> dict:
    q3 = fiber_q3(1.0, 1.0, 2.0)
    mesh = disc_mesh(60)
    vals = []
    for _ in range(3):
        vals.append(np.diag(CellProblem(q3, mesh).q2_matrix()))
        mesh = mesh.refine()
    vals = np.array(vals)
    return {"diagonals": vals, "monotone": bool(np.all(np.diff(vals, axis=0) <= 1e-12))}


def dense_oracle_check() -> dict:
    from .geometry import rectangle_mesh

    out = {}
    for name, mesh, q3 in (
        ("square-isotropic", rectangle_mesh(120), isotropic_q3(1.0, 1.0)),
        ("disc-fiber", disc_mesh(200), fiber_q3(1.0, 0.7, 2.0)),
    ):
        R0 = rot_z(0.4)
        Q = CellProblem(q3, mesh, R0).q2_matrix()
        Qd = dense_cell_oracle(q3, mesh, R0)
        out[name] = {"vertices": len(mesh.vertices), "max_abs_diff": float(np.abs(Q - Qd).max())}
    out["passed"] = all(v["max_abs_diff"] <= 1e-8 and v["vertices"] <= 200 for v in out.values())
    return out


def criterion_11(seed: int = 0) -> CriterionResult:
    def run():
        slope = inverse_expansion_slope()
        hyp = {m.name: check_hypotheses(m, seed=seed).passed for m in (svk(), svk_barrier(), graded_svk())}
        fd = fd_gradient_check(seed)
        mono = monotone_refinement()
        dense = dense_oracle_check()
        ok = (
            abs(slope["slope"] - 2.0) <= 0.1
            and all(hyp.values())
            and fd["rel_error"] <= 1e-5
            and mono["monotone"]
            and dense["passed"]
        )
        return ok, {"inverse_expansion": slope, "hypotheses": hyp, "fd_gradient": fd, "refinement": mono, "dense_qp": dense}

    return _timed(11, "property suites", run)


CRITERIA = {
    1: lambda seed, threads: criterion_1(threads),
    2: lambda seed, threads: criterion_2(seed),
    3: lambda seed, threads: criterion_3(),
    4: lambda seed, threads: criterion_4(seed),
    5: lambda seed, threads: criterion_5(),
    6: lambda seed, threads: criterion_6(threads),
    7: lambda seed, threads: criterion_7(threads),
    8: lambda seed, threads: criterion_8(),
    9: lambda seed, threads: criterion_9(threads),
    10: lambda seed, threads: criterion_10(threads),
    11: lambda seed, threads: criterion_11(seed),
}


def run_acceptance(seed: int = 0, threads: int = 1, only=None) -> list[CriterionResult]:
    keys = sorted(CRITERIA) if only is None else sorted(only)
    return [CRITERIA[k](seed, threads) for k in keys]
