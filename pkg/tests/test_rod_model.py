from __future__ import annotations

import numpy as np
import pytest

from curvrod._so3 import expm, random_rotations, rot_x
from curvrod.cell_problem import Q2Form, q2_closed_form_isotropic
from curvrod.geometry import build_frame, circle_arc
from curvrod.rod_model import (
    InfeasibleBoundary,
    MeshTooCoarse,
    ReferenceRod,
    RodState,
    absolute_strain,
    bend_state,
    energy,
    fd_gradient,
    frame_entries,
    minimize,
    reconstruct_midfiber,
    strain,
    strain_coords,
    twist_state,
)

TORSION = 1 / (2 * np.pi)


@pytest.fixture
def q2_iso():
    return q2_closed_form_isotropic(1.0, 1.0)


@pytest.fixture
def q2_diag():
    return Q2Form.constant(np.diag([1.0, 2.0, 3.0]))


def smooth_state(n, length=1.0, amp=0.6):
    s = np.linspace(0.0, length, n + 1)
    w = amp * np.stack([np.sin(2 * s), np.cos(3 * s) - 1, s**2], axis=-1)
    return RodState.from_matrices(expm(w), length)


def test_reference_has_zero_strain_and_energy(q2_diag):
    ref = ReferenceRod.from_frame(build_frame(circle_arc(1.0, 2.0, 201)), q2_diag, 64)
    st = ref.state()
    assert np.abs(strain_coords(st.R, ref)).max() < 1e-12
    assert energy(st, ref) < 1e-24


def test_rigid_motion_has_zero_energy(q2_diag, rng):
    ref = ReferenceRod.from_frame(build_frame(circle_arc(1.0, 2.0, 201)), q2_diag, 64)
    for Q in random_rotations(3, rng):
        assert energy(ref.state().rotated(Q), ref) < 1e-12


def test_bend_about_e3_gives_negative_p12(q2_diag):
    # rotation exp(kappa s hat(e3)): (R^T R')[0, 1] = -kappa
    kappa = 0.8
    ref = ReferenceRod.straight(q2_diag, 1.0, 40)
    st = bend_state(1.0, 40, kappa)
    for i in (0, 17, 39):
        assert np.allclose(strain(st, i, ref), [-kappa, 0.0, 0.0], atol=1e-12)


def test_uniform_bend_energy(q2_iso):
    ref = ReferenceRod.straight(q2_iso, 1.0, 50)
    assert np.isclose(energy(bend_state(1.0, 50, 1.0), ref), 0.5 * 5 / (4 * np.pi), rtol=1e-12)


def test_circle_straightened(q2_diag):
    ref = ReferenceRod.from_frame(build_frame(circle_arc(1.0, 1.5, 301)), q2_diag, 60)
    flat = RodState.from_matrices(np.broadcast_to(ref.R0[0], ref.R0.shape), ref.length)
    p = strain_coords(flat.R, ref)
    assert np.allclose(np.linalg.norm(p, axis=1), 1.0, atol=1e-5)
    assert np.allclose(p[:, 2], 0.0, atol=1e-8)
    # the strain sits in the bending plane; with p = (-1, 0, 0) the oracle is 1/2 * Q11 * L
    assert np.isclose(energy(flat, ref), 0.5 * 1.0 * 1.5, rtol=1e-4)


def test_straight_specialization_is_exact(q2_diag):
    ref = ReferenceRod.straight(q2_diag, 2.0, 30)
    assert np.all(ref.w0 == 0.0)
    st = smooth_state(30, 2.0)
    p = absolute_strain(st)
    assert np.isclose(energy(st, ref), 0.5 * ref.ds * np.einsum("ni,ij,nj->", p, q2_diag.Q[0], p))


def test_argmin_invariance_under_common_rotation(q2_diag, rng):
    ref = ReferenceRod.from_frame(build_frame(circle_arc(1.0, 1.0, 201)), q2_diag, 40)
    st = smooth_state(40)
    Q = random_rotations(1, rng)[0]
    ref_q = ReferenceRod(Q @ ref.R0, q2_diag, ref.length)
    assert np.isclose(energy(st.rotated(Q), ref_q), energy(st, ref), rtol=1e-12)


def test_energy_nonnegative(q2_iso):
    ref = ReferenceRod.straight(q2_iso, 1.0, 20)
    for amp in (0.1, 0.5, 1.0):
        assert energy(smooth_state(20, amp=amp), ref) >= 0.0


def test_midfiber_identity_is_line():
    st = RodState.from_matrices(np.broadcast_to(np.eye(3), (11, 3, 3)), 2.0, v0=[1.0, 2.0, 3.0])
    v = reconstruct_midfiber(st)
    assert np.allclose(v, [1, 2, 3] + np.outer(st.s, [1, 0, 0]))


def test_midfiber_bend_is_circle():
    kappa = 2.0
    centre = np.array([0.0, 1 / kappa, 0.0])
    errs = []
    for n in (50, 100, 200):
        st = bend_state(1.0, n, kappa)
        v = reconstruct_midfiber(st)
        assert np.allclose(v[:, 2], 0.0)
        assert np.allclose(np.linalg.norm(np.diff(v, axis=0), axis=1), st.ds)
        errs.append(np.abs(np.linalg.norm(v - centre, axis=1) - 1 / kappa).max())
    assert errs[-1] < 1e-5
    assert np.allclose(np.array(errs[:-1]) / errs[1:], 4.0, rtol=0.05)


def test_midfiber_matches_reference_curve(q2_diag):
    c = circle_arc(1.0, 2.0, 401)
    errs = []
    for n in (20, 40, 80):
        ref = ReferenceRod.from_frame(build_frame(c), q2_diag, n)
        v = reconstruct_midfiber(ref.state(v0=c.evaluate(0.0)[0][0]))
        errs.append(np.abs(v - c.evaluate(ref.s)[0]).max())
    assert errs[-1] < 1e-4
    assert errs[0] / errs[-1] > 10


def test_frame_entries_on_reference_circle(q2_diag):
    f = build_frame(circle_arc(1.0, 1.0, 801))
    ref = ReferenceRod.from_frame(f, q2_diag, 200)
    ent = frame_entries(ref.state())
    _, dR = f.at(ref.s_mid)
    R_mid, _ = f.at(ref.s_mid)
    A0 = np.einsum("nji,njk->nik", R_mid, dR)
    assert np.allclose(ent, np.stack([A0[:, 0, 1], A0[:, 0, 2], A0[:, 1, 2]], -1), atol=1e-4)


def test_frame_entries_uniform_twist():
    theta = 3.0
    R = np.array([rot_x(theta * s) for s in np.linspace(0, 1, 101)])
    ent = frame_entries(RodState.from_matrices(R, 1.0))
    assert np.allclose(ent[:, :2], 0.0, atol=1e-12)
    # d2 . d3' = -theta for rotation about e1, the same as the p23 coordinate
    assert np.allclose(ent[:, 2], -theta, rtol=1e-3)
    assert np.allclose(absolute_strain(RodState.from_matrices(R, 1.0))[:, 2], -theta)


def test_frame_entries_consistency_rate():
    errs, ns = [], (20, 40, 80, 160)
    for n in ns:
        st = smooth_state(n)
        errs.append(np.abs(frame_entries(st) - absolute_strain(st)).max())
    slope = np.polyfit(np.log(1.0 / np.array(ns)), np.log(errs), 1)[0]
    assert abs(slope - 2.0) < 0.2


def test_energy_quadrature_converges_at_second_order(q2_diag):
    def E(n):
        return energy(smooth_state(n), ReferenceRod.straight(q2_diag, 1.0, n))

    ns = np.array([10, 20, 40, 80])
    exact = E(5120)
    err = np.abs([E(n) - exact for n in ns])
    slope = np.polyfit(np.log(1.0 / ns), np.log(err), 1)[0]
    assert abs(slope - 2.0) < 0.2


def test_fd_gradient_directional_derivative(q2_diag, rng):
    ref = ReferenceRod.from_frame(build_frame(circle_arc(1.0, 1.0, 201)), q2_diag, 30)
    st = smooth_state(30)
    g = fd_gradient(st.R, ref, 1e-5)
    d = rng.normal(size=g.shape)
    t = 1e-5
    fd = (energy(st.R @ expm(t * d), ref) - energy(st.R @ expm(-t * d), ref)) / (2 * t)
    assert abs(np.sum(g * d) - fd) <= 1e-5 * abs(fd)


def test_minimize_from_reference_takes_no_steps(q2_iso):
    ref = ReferenceRod.from_frame(build_frame(circle_arc(1.0, 1.0, 201)), q2_iso, 40)
    res = minimize(ref.state(), ref, "clamped-both")
    assert res.iterations == 0 and res.converged
    assert res.energy < 1e-24


def test_minimize_clamped_free_decreases(q2_iso):
    ref = ReferenceRod.straight(q2_iso, 1.0, 40)
    st = smooth_state(40)
    res = minimize(st, ref, "clamped-free")
    assert res.converged and not res.line_search_failed
    assert np.all(np.diff(res.history) <= 0.0)
    assert res.grad_norm < 1e-8 * 41
    assert res.energy < 1e-12
    assert np.allclose(res.state.R[0], st.R[0])


def test_minimize_full_twist():
    q2 = Q2Form.constant(np.diag([5 / (8 * np.pi), 5 / (8 * np.pi), TORSION]))
    ref = ReferenceRod.straight(q2, 1.0, 100)
    res = minimize(twist_state(1.0, 100, turns=1.0, wobble=0.5), ref, "clamped-both")
    oracle = 0.5 * TORSION * (2 * np.pi) ** 2
    assert res.converged
    assert np.isclose(res.energy, oracle, rtol=0.01)
    assert np.all(np.diff(res.history) <= 0.0)
    R = res.state.R
    assert np.abs(np.einsum("nji,njk->nik", R, R) - np.eye(3)).max() < 1e-12


def test_invalid_boundary_mode(q2_iso):
    ref = ReferenceRod.straight(q2_iso, 1.0, 10)
    with pytest.raises(InfeasibleBoundary):
        minimize(ref.state(), ref, "pinned")


def test_non_rotation_frames_rejected():
    R = np.broadcast_to(np.diag([1.0, 1.0, -1.0]), (5, 3, 3))
    with pytest.raises(InfeasibleBoundary):
        RodState.from_matrices(R, 1.0)


def test_mesh_too_coarse(q2_iso):
    ref = ReferenceRod.straight(q2_iso, 1.0, 4)
    with pytest.raises(MeshTooCoarse):
        energy(bend_state(1.0, 4, 4 * np.pi), ref)
