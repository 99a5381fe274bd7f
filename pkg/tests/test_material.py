from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from curvrod._so3 import random_rotations
from curvrod.material import (
    MaterialError,
    MaterialModel,
    check_hypotheses,
    dist_so3,
    fiber_q3,
    graded_svk,
    isotropic_q3,
    q3_fd,
    q3_from_evaluator,
    q3_from_material,
    svk,
    svk_barrier,
)


def test_isotropic_q3_identity_value():
    # 2 mu |I|^2 + lam (tr I)^2 = 6 + 9
    assert np.isclose(isotropic_q3(1.0, 1.0)(np.eye(3)), 15.0)


def test_isotropic_q3_annihilates_skew():
    q = isotropic_q3(2.0, 0.5)
    assert q.annihilates_skew()
    A = np.array([[0, 1, 2], [-1, 0, 3], [-2, -3, 0.0]])
    assert abs(q(A)) < 1e-14


def test_svk_hessian_matches_isotropic(rng):
    mat = svk(1.3, 0.7)
    q = isotropic_q3(1.3, 0.7)
    for _ in range(5):
        G = rng.normal(size=(3, 3))
        assert np.isclose(q3_fd(mat, G), q(G), rtol=1e-6)
    qm = q3_from_material(mat)
    assert np.allclose(qm.matrix(), q.matrix(), atol=1e-6)


def test_svk_vanishes_on_rotations(rng):
    R = random_rotations(50, rng)
    assert np.abs(svk()(R)).max() < 1e-13


@settings(max_examples=30, deadline=None)
@given(F=arrays(np.float64, (3, 3), elements=st.floats(-2, 2)), seed=st.integers(0, 2**32 - 1))
def test_svk_frame_indifferent(F, seed):
    Q = random_rotations(1, np.random.default_rng(seed))[0]
    mat = svk(1.0, 2.0)
    w = mat(F)
    assert abs(mat(Q @ F) - w) <= 1e-10 * (1 + abs(w))


@pytest.mark.parametrize(
    "mat",
    [svk(), svk(2.0, 0.0), svk_barrier(1.0, 1.0, 0.5), graded_svk(1.0, 1.0, "linear"), graded_svk(1.0, 1.0, "sine")],
    ids=["svk", "svk_lam0", "barrier", "graded_linear", "graded_sine"],
)
def test_builtin_materials_pass_hypotheses(mat):
    assert check_hypotheses(mat, n_samples=200, seed=0).passed


def test_broken_density_fails_hypotheses():
    broken = MaterialModel(lambda F, s=0.0, xi=0.0, zeta=0.0: np.sum(np.asarray(F) ** 2, axis=(-2, -1)) - 2.0)
    rep = check_hypotheses(broken, n_samples=50)
    assert not rep.passed
    assert rep.rotation_value > 0.5


def test_barrier_infinite_for_nonpositive_det():
    mat = svk_barrier(1.0, 1.0, 1.0)
    assert np.isinf(mat(np.diag([-1.0, 1.0, 1.0])))
    assert np.isinf(mat(np.diag([0.0, 1.0, 1.0])))
    assert np.isfinite(mat(np.diag([0.5, 1.0, 1.0])))


def test_graded_depends_on_s_only():
    mat = graded_svk(1.0, 1.0, "linear")
    F = np.diag([1.2, 1.0, 1.0])
    assert mat(F, 0.0) != mat(F, 1.0)
    assert mat(F, 0.3, 0.1, 0.2) == mat(F, 0.3, -0.4, 0.0)
    assert not mat.homogeneous and mat.s_only


def test_negative_lame_rejected():
    with pytest.raises(MaterialError):
        svk(-1.0, 1.0)


def test_fiber_q3_annihilates_skew_and_stiffens():
    q = fiber_q3(1.0, 1.0, 5.0, (1.0, 0.0, 0.0))
    assert q.annihilates_skew()
    E11 = np.zeros((3, 3))
    E11[0, 0] = 1.0
    assert np.isclose(q(E11), isotropic_q3(1.0, 1.0)(E11) + 5.0)


def test_q3_from_evaluator_recovers_matrix():
    ref = fiber_q3(1.0, 0.5, 2.0)
    q = q3_from_evaluator(lambda G: float(ref(G)))
    assert np.allclose(q.matrix(), ref.matrix(), atol=1e-12)


def test_dist_so3_zero_on_rotations(rng):
    R = random_rotations(10, rng)
    assert np.abs(dist_so3(R)).max() < 1e-12
    assert np.isclose(dist_so3(2.0 * np.eye(3)), np.sqrt(3.0))
