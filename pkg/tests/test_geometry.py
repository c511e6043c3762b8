import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from manifold_infer import RankError, builtin_rm_anova
from manifold_infer.densities import log_f_B_joint, log_f_F_joint, log_f_tilde_B, log_f_tilde_F
from manifold_infer.geometry import (
    D_factor,
    GeometryCache,
    chol_logdet,
    det_joint_via_mdl,
    gram_dets,
    joint_constraint,
    log_det_joint_dense_model,
    log_det_joint_fast,
    orthonormal_complement,
    tangent_basis,
    u_projection_constraint,
)

from conftest import Y_BIV, Y_LOC, manifold_points


# ---------------------------------------------------------------- complements


def test_complement_of_e1():
    np.testing.assert_allclose(orthonormal_complement([[1.0], [0.0]]), [[0.0], [1.0]])


def test_complement_bivariate_example():
    # complement of (u1, -u2) at u = (3, 4) is (u2, u1) / |u|
    C = orthonormal_complement([[3.0], [-4.0]])
    np.testing.assert_allclose(C, [[0.8], [0.6]], atol=1e-15)


@pytest.mark.parametrize("shape", [(5, 2), (5, 1), (7, 3), (3, 2)])
def test_complement_random_orthonormal(shape):
    M = np.random.default_rng(sum(shape)).normal(size=shape)
    C = orthonormal_complement(M)
    assert C.shape == (shape[0], shape[0] - shape[1])
    assert np.max(np.abs(M.T @ C)) < 1e-12
    assert np.max(np.abs(C.T @ C - np.eye(C.shape[1]))) < 1e-12


def test_complement_deterministic():
    M = np.random.default_rng(4).normal(size=(6, 2))
    assert orthonormal_complement(M).tobytes() == orthonormal_complement(M.copy()).tobytes()


def test_complement_rank_error():
    with pytest.raises(RankError):
        orthonormal_complement(np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]))
    with pytest.raises(RankError):
        orthonormal_complement(np.zeros((3, 1)))


def test_complement_square_is_empty():
    assert orthonormal_complement(np.eye(2)).shape == (2, 0)


# ---------------------------------------------------------------- tangent bases


def test_tangent_flat_line():
    np.testing.assert_allclose(tangent_basis(np.array([[0.0, 1.0]])), [[1.0], [0.0]])


def test_tangent_sphere_pole():
    B = tangent_basis(np.array([[0.0, 0.0, 2.0]]))
    assert B.shape == (3, 2)
    np.testing.assert_allclose(B[2], 0.0, atol=1e-15)
    np.testing.assert_allclose(B.T @ B, np.eye(2), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31), k=st.integers(1, 3), extra=st.integers(1, 4))
def test_tangent_basis_property(seed, k, extra):
    Jh = np.random.default_rng(seed).normal(size=(k, k + extra))
    B = tangent_basis(Jh)
    assert B.shape == (k + extra, extra)
    assert np.max(np.abs(Jh @ B)) < 1e-12 * max(1.0, np.abs(Jh).max())
    assert np.max(np.abs(B.T @ B - np.eye(extra))) < 1e-12


def test_tangent_rank_error():
    with pytest.raises(RankError):
        tangent_basis(np.array([[1.0, 1.0], [2.0, 2.0]]))


# ---------------------------------------------------------------- Gram determinants


def test_gram_location_half(loc):
    c = gram_dets(loc, [0.5], [0.5])
    assert c.log_det_joint == pytest.approx(0.5 * math.log(4 * math.pi), rel=1e-14)
    assert c.log_det_joint == pytest.approx(1.2655, abs=1e-4)
    assert c.D_value == pytest.approx(2.0, rel=1e-14)


def test_gram_bivariate_theta_term(biv):
    c = gram_dets(biv, [1.0, 1.0], [0.0])
    np.testing.assert_array_equal(c.Jtheta, [[1.0], [-1.0]])
    assert c.log_det_theta == pytest.approx(0.5 * math.log(2), rel=1e-14)


def test_gram_anova_small_block_det():
    m = builtin_rm_anova(2, 2)
    u = np.random.default_rng(0).standard_normal(m.m)
    t = np.array([0.0, 0.0, 0.0, 0.0])
    blocks = m.ju_gram_blocks(u, t)
    assert chol_logdet(blocks) == pytest.approx(math.log(9.0), rel=1e-14)
    Ju = m.jac_u(u, t)
    assert chol_logdet(Ju @ Ju.T) == pytest.approx(math.log(9.0), rel=1e-14)


def test_mdl_trivial_case():
    c = GeometryCache(np.zeros(3), np.zeros(1), np.eye(3), np.zeros((3, 1)), np.eye(3)[:, 1:],
                      0.0, 0.0, 0.0, 1.0)
    assert det_joint_via_mdl(c) == 0.0


def test_D_unit_inner():
    for q in (1, 2, 3):
        c = GeometryCache(np.zeros(4), np.zeros(q), np.eye(4), np.eye(4)[:, :q], None,
                          0.0, 0.0, 0.0, 0.0)
        assert D_factor(c) == pytest.approx(2.0 ** q, rel=1e-14)


@pytest.mark.parametrize("which", ["loc", "biv", "anova"])
def test_mdl_matches_dense(which, request, y_anova):
    model = request.getfixturevalue(which)
    y = {"loc": Y_LOC, "biv": Y_BIV, "anova": y_anova}[which]
    for u, t in manifold_points(model, y, 100, seed=5):
        c = gram_dets(model, u, t)
        fast = log_det_joint_fast(model, u, t)
        dense = log_det_joint_dense_model(model, u, t)
        assert abs(fast - dense) <= 1e-8 * max(1.0, abs(dense))
        assert abs(det_joint_via_mdl(c) - c.log_det_joint) <= 1e-8 * max(1.0, abs(c.log_det_joint))


@pytest.mark.parametrize("which", ["biv", "anova"])
def test_D_at_least_one(which, request, y_anova):
    model = request.getfixturevalue(which)
    y = Y_BIV if which == "biv" else y_anova
    for u, t in manifold_points(model, y, 30, seed=9):
        assert gram_dets(model, u, t).D_value >= 1.0


def test_change_of_measure_constant_ratio(biv):
    """f~(u) / [f(u, theta_hat) D^(1/2)] is one constant along the manifold."""
    for joint, tilde in ((log_f_F_joint, log_f_tilde_F), (log_f_B_joint, log_f_tilde_B)):
        logs = []
        for u, t in manifold_points(biv, Y_BIV, 25, seed=2):
            D = gram_dets(biv, u, t).D_value
            logs.append(tilde(biv, Y_BIV, u) - joint(biv, Y_BIV, u, t) - 0.5 * math.log(D))
        ratios = np.exp(np.array(logs) - logs[0])
        assert np.ptp(ratios) < 1e-6


# ---------------------------------------------------------------- constraints


def test_joint_constraint_zero_on_manifold(biv):
    con = joint_constraint(biv, Y_BIV)
    assert (con.d, con.k) == (3, 2)
    for u, t in manifold_points(biv, Y_BIV, 5):
        assert np.linalg.norm(con.h(np.concatenate([u, t]))) < 1e-14


def test_u_projection_location_is_empty(loc):
    con = u_projection_constraint(loc, Y_LOC)
    assert (con.d, con.k) == (1, 0)
    assert con.h(np.array([0.3])).size == 0
    assert tangent_basis(con.jac_h(np.array([0.3]))).shape == (1, 1)


def test_u_projection_bivariate_zero_set(biv):
    con = u_projection_constraint(biv, Y_BIV)
    assert (con.d, con.k) == (2, 1)
    for t in (-0.5, 0.0, 0.2, 0.7):
        u = np.array([1.2 / (1 + t), 0.6 / (1 - t)])
        assert abs(con.h(u)[0]) < 1e-12
        assert con.theta_of(u)[0] == pytest.approx(t, abs=1e-12)


def test_u_projection_bivariate_value(biv):
    con = u_projection_constraint(biv, Y_BIV)
    assert con.h(np.array([1.0, 1.0]))[0] == pytest.approx(0.2 / math.sqrt(2), rel=1e-12)


def test_u_projection_closed_form_everywhere(biv):
    con = u_projection_constraint(biv, Y_BIV)
    rng = np.random.default_rng(1)
    for u in rng.uniform(0.3, 2.0, (20, 2)):
        if not abs(con.theta_of(u)[0]) < 1:
            continue
        want = (2 * u[0] * u[1] - u[1] * 1.2 - u[0] * 0.6) / np.hypot(*u)
        assert con.h(u)[0] == pytest.approx(want, rel=1e-10, abs=1e-13)


def test_u_projection_jacobian_matches_analytic(biv):
    con = u_projection_constraint(biv, Y_BIV)

    def h(u):
        return (2 * u[0] * u[1] - u[1] * 1.2 - u[0] * 0.6) / np.hypot(*u)

    u = np.array([0.9, 0.8])
    an = np.array([[(2 * u[1] - 0.6) / np.hypot(*u) - h(u) * u[0] / (u @ u),
                    (2 * u[0] - 1.2) / np.hypot(*u) - h(u) * u[1] / (u @ u)]])
    np.testing.assert_allclose(con.jac_h(u), an, rtol=1e-6)
