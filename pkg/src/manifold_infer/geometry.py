"""Orthonormal frames, Gram determinants and constraint functions.

All determinants are handled on the log scale through Cholesky factors.
``log_det_*`` quantities are *half* log determinants, i.e. the log of the
volume factors ``det(.)^{1/2}`` that enter the manifold densities.

Complements of ``jac_theta`` are computed pointwise from a full QR
factorization (a single Householder reflector when ``q = 1``) with a fixed
sign convention (largest-magnitude entry of each
column positive).  No globally smooth frame is constructed; the convention
is continuous away from a measure-zero set, and the zero set of the
u-projection constraint does not depend on the frame at all.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg.lapack import dpotrf, dtrtri

from .errors import EvaluationError, NumericError, RankError
from .models import RANK_RTOL, ModelSpec, check_full_rank

Array = np.ndarray


def _sign_fix(C: Array) -> Array:
    if C.size == 0:
        return C
    idx = np.argmax(np.abs(C), axis=0)
    signs = np.sign(C[idx, np.arange(C.shape[1])])
    signs[signs == 0] = 1.0
    return C * signs


def orthonormal_complement(M) -> Array:
    """Orthonormal basis of the orthogonal complement of ``col(M)``.

    ``M`` is ``n x q`` with full column rank ``q <= n``; the result is
    ``n x (n - q)`` (empty when ``q = n``).
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    n, q = M.shape
    if q > n:
        raise RankError(f"an {n}x{q} matrix cannot have full column rank")
    if q == 1 and n > 1:
        # Householder reflector mapping M to a multiple of e_1; its other
        # columns span the complement
        v = M[:, 0]
        nv = math.sqrt(float(v @ v))
        if not math.isfinite(nv):
            raise EvaluationError("complement input has non-finite entries")
        if nv == 0.0:
            raise RankError("complement input is the zero vector")
        w = v.copy()
        w[0] += math.copysign(nv, v[0])
        H = np.eye(n) - (2.0 / float(w @ w)) * np.outer(w, w)
        return _sign_fix(H[:, 1:])
    check_full_rank(M, "complement input")
    if q == n:
        return np.zeros((n, 0))
    Q, _ = np.linalg.qr(M, mode="complete")
    return _sign_fix(Q[:, q:])


def tangent_basis(Jh) -> Array:
    """Orthonormal basis of ``null(Jh)`` for a ``k x d`` Jacobian of rank ``k``."""
    Jh = np.asarray(Jh, dtype=float)
    k, d = Jh.shape
    if k == 0:
        return np.eye(d)
    if not np.all(np.isfinite(Jh)):
        raise EvaluationError("constraint Jacobian has non-finite entries")
    _, s, Vt = np.linalg.svd(Jh, full_matrices=True)
    if s[-1] <= RANK_RTOL * s[0] or s[0] == 0.0:
        raise RankError("constraint Jacobian is not a submersion at this point")
    return _sign_fix(Vt[k:].T)


def chol_logdet(A) -> float:
    """``log det A`` for symmetric positive definite ``A`` (or a stack)."""
    A = np.asarray(A, dtype=float)
    if A.shape[-1] == 0:
        return 0.0
    if A.ndim == 2:
        L, info = dpotrf(A, lower=1)
        if info != 0:
            raise NumericError("matrix is not positive definite")
        return float(2.0 * np.log(L.diagonal()).sum())
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise NumericError("matrix is not positive definite") from exc
    return float(2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1))))



def gram_logdet(J) -> float:
    """``log det(J^T J)``, with ``-inf`` when ``J`` has lost column rank.

    A Gram matrix is positive semidefinite by construction, so a failed
    Cholesky factorization means a zero determinant rather than an error.
    """
    J = np.asarray(J, dtype=float)
    try:
        return chol_logdet(J.T @ J)
    except NumericError:
        return -math.inf

# --------------------------------------------------------------------------
# Gram determinants

@dataclass(frozen=True)
class GeometryCache:
    """Jacobians and volume factors at one point ``(u, theta)``."""

    u: Array
    theta: Array
    Ju: Array
    Jtheta: Array
    Jtheta_comp: Array
    log_det_joint: float
    log_det_theta: float
    log_det_proj: float
    D_value: float
    ju_blocks: Optional[Array] = None


def log_det_joint_dense(Ju: Array, Jtheta: Array) -> float:
    """Half log det of ``[Ju Jtheta][Ju Jtheta]^T`` formed densely."""
    G = np.hstack([Ju, Jtheta])
    return 0.5 * chol_logdet(G @ G.T)


def _block_solve(blocks: Array, B: Array) -> Array:
    """Solve ``blockdiag(blocks) X = B`` for contiguous equal blocks."""
    nb, s, _ = blocks.shape
    Bb = B.reshape(nb, s, -1)
    return np.linalg.solve(blocks, Bb).reshape(B.shape)


def _mdl_terms(gram_u: Optional[Array], blocks: Optional[Array], Jtheta: Array):
    """Return ``(log det(Ju Ju^T), Jtheta^T (Ju Ju^T)^-1 Jtheta)``."""
    if blocks is not None and blocks.ndim == 3 and blocks.strides[0] == 0:
        # one block repeated (a broadcast view): factor it once and apply its
        # inverse factor to every subject's rows of Jtheta in one matmul.
        # Raw LAPACK calls keep the per-call overhead of these tiny
        # factorizations well below that of numpy.linalg.
        nb, s, _ = blocks.shape
        L, info = dpotrf(blocks[0], lower=1)
        if info != 0:
            raise NumericError("Ju Ju^T block is not positive definite")
        Linv, info = dtrtri(L, lower=1)
        if info != 0:
            raise NumericError("singular Cholesky factor of the Ju Ju^T block")
        q = Jtheta.shape[1]
        W = np.matmul(Linv, Jtheta.reshape(nb, s, q)).reshape(nb * s, q)
        return 2.0 * nb * float(np.log(L.diagonal()).sum()), W.T @ W
    if blocks is not None:
        try:
            L = np.linalg.cholesky(blocks)
        except np.linalg.LinAlgError as exc:
            raise NumericError("Ju Ju^T block is not positive definite") from exc
        logdet_u = float(2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1))))
        nb, s, _ = blocks.shape
        # triangular solves per block: W = L^-1 Jtheta_b, inner = sum_b W^T W
        Jb = Jtheta.reshape(nb, s, -1)
        W = np.linalg.solve(L, Jb)
        inner = np.einsum("bsi,bsj->ij", W, W)
        return logdet_u, inner
    try:
        L = np.linalg.cholesky(gram_u)
    except np.linalg.LinAlgError as exc:
        raise NumericError("Ju Ju^T is not positive definite") from exc
    logdet_u = float(2.0 * np.sum(np.log(np.diag(L))))
    W = np.linalg.solve(L, Jtheta)
    return logdet_u, W.T @ W


def gram_dets(model: ModelSpec, u, theta) -> GeometryCache:
    """Evaluate every Jacobian and volume factor at ``(u, theta)`` densely."""
    u = np.asarray(u, dtype=float).reshape(model.m)
    theta = np.asarray(theta, dtype=float).reshape(model.q)
    Ju = np.asarray(model.jac_u(u, theta), dtype=float).reshape(model.n, model.m)
    Jt = np.asarray(model.jac_theta(u, theta), dtype=float).reshape(model.n, model.q)
    if not (np.all(np.isfinite(Ju)) and np.all(np.isfinite(Jt))):
        raise EvaluationError("non-finite Jacobian")
    check_full_rank(Ju, "jac_u")
    check_full_rank(Jt, "jac_theta")
    comp = orthonormal_complement(Jt)
    gram_u = Ju @ Ju.T
    logdet_u, inner = _mdl_terms(gram_u, None, Jt)
    log_det_joint = log_det_joint_dense(Ju, Jt)
    log_det_theta = 0.5 * chol_logdet(Jt.T @ Jt)
    P = comp.T @ Ju
    log_det_proj = 0.5 * chol_logdet(P @ P.T)
    D = _D_from_inner(inner)
    blocks = None
    if model.ju_gram_blocks is not None:
        blocks = np.asarray(model.ju_gram_blocks(u, theta), dtype=float)
    for v in (log_det_joint, log_det_theta, log_det_proj, D):
        if not np.isfinite(v):
            raise NumericError("non-finite Gram determinant")
    return GeometryCache(u, theta, Ju, Jt, comp, log_det_joint, log_det_theta,
                         log_det_proj, D, blocks)


def det_joint_via_mdl(cache: GeometryCache) -> float:
    """Half log det of the joint Gram matrix through the determinant lemma.

    ``det(Ju Ju^T + Jt Jt^T) = det(Ju Ju^T) det(I_q + Jt^T (Ju Ju^T)^-1 Jt)``;
    when the cache carries Gram blocks the first factor is block diagonal.
    """
    if cache.ju_blocks is not None:
        logdet_u, inner = _mdl_terms(None, cache.ju_blocks, cache.Jtheta)
    else:
        logdet_u, inner = _mdl_terms(cache.Ju @ cache.Ju.T, None, cache.Jtheta)
    q = inner.shape[0]
    return 0.5 * (logdet_u + chol_logdet(np.eye(q) + inner))


def log_det_joint_fast(model: ModelSpec, u, theta, Jtheta: Optional[Array] = None) -> float:
    """Half log det of the joint Gram matrix without forming it.

    Uses ``model.ju_gram_blocks`` when available so ``jac_u`` is never built.
    """
    if Jtheta is None:
        Jtheta = model.jac_theta(u, theta)
    if model.ju_gram_blocks is not None:
        logdet_u, inner = _mdl_terms(None, model.ju_gram_blocks(u, theta), Jtheta)
    else:
        Ju = np.asarray(model.jac_u(u, theta), dtype=float)
        logdet_u, inner = _mdl_terms(Ju @ Ju.T, None, Jtheta)
    inner.flat[:: inner.shape[0] + 1] += 1.0
    Lq, info = dpotrf(inner, lower=1)
    if info != 0:
        raise NumericError("I + Jtheta^T (Ju Ju^T)^-1 Jtheta is not positive definite")
    return 0.5 * logdet_u + float(np.log(Lq.diagonal()).sum())


def log_det_joint_dense_model(model: ModelSpec, u, theta) -> float:
    """Dense reference route: build both Jacobians and factor the n x n Gram."""
    Ju = np.asarray(model.jac_u(u, theta), dtype=float)
    Jt = np.asarray(model.jac_theta(u, theta), dtype=float)
    return log_det_joint_dense(Ju, Jt)


def _D_from_inner(inner: Array) -> float:
    q = inner.shape[0]
    try:
        inv = np.linalg.inv(inner)
    except np.linalg.LinAlgError as exc:
        raise NumericError("singular Jtheta^T (Ju Ju^T)^-1 Jtheta") from exc
    D = float(np.linalg.det(np.eye(q) + inv))
    if not np.isfinite(D) or D < 1.0 - 1e-12:
        raise NumericError(f"change-of-measure factor D={D} is not >= 1")
    return D


def D_factor(cache: GeometryCache) -> float:
    """``det(I_q + [Jt^T (Ju Ju^T)^-1 Jt]^-1)``; always at least 1."""
    _, inner = _mdl_terms(cache.Ju @ cache.Ju.T, None, cache.Jtheta)
    return _D_from_inner(inner)


# --------------------------------------------------------------------------
# Constraint functions

@dataclass
class ConstraintFn:
    """``h: R^d -> R^k`` whose zero set is the manifold of interest.

    ``theta_of`` maps a point to its parameter value (coordinates for the
    joint chart, the best match for the u chart).
    """

    h: Callable[[Array], Array]
    jac_h: Callable[[Array], Array]
    d: int
    k: int
    theta_of: Optional[Callable[[Array], Array]] = None


def joint_constraint(model: ModelSpec, y) -> ConstraintFn:
    """``h(u, theta) = G(u, theta) - y`` on ``R^{m+q}`` with analytic Jacobian."""
    y = np.asarray(y, dtype=float).reshape(model.n)
    m = model.m

    def h(x):
        return np.asarray(model.evaluate(x[:m], x[m:]), dtype=float) - y

    def jac_h(x):
        return np.hstack([model.jac_u(x[:m], x[m:]), model.jac_theta(x[:m], x[m:])])

    return ConstraintFn(h, jac_h, m + model.q, model.n, theta_of=lambda x: x[m:])


def u_projection_constraint(model: ModelSpec, y, solver_cfg=None, fd_step: float = 1e-6) -> ConstraintFn:
    """Constraint whose zero set is the u-projection of the manifold.

    ``h(u) = C(u, t)^T (G(u, t) - y)`` with ``t`` the best match for ``u``
    and ``C`` the orthonormal complement of ``jac_theta``.  ``jac_h`` is a
    central difference with step ``fd_step * max(1, |u|)``; analytic
    differentiation would need second derivatives of ``G``.

    The returned object warm-starts each best-match solve from the previous
    one, so it is not shared between chains.
    """
    from .solvers import SolverConfig, solve_theta_hat

    y = np.asarray(y, dtype=float).reshape(model.n)
    cfg = solver_cfg or SolverConfig(tol=1e-11, max_iter=100)
    k = model.n - model.q
    state = {"theta": None}

    def theta_of(u):
        u = np.asarray(u, dtype=float)
        if model.theta_hat_batch is not None:
            t = np.asarray(model.theta_hat_batch(y, u[None, :]), dtype=float).reshape(model.q)
            if np.all(np.isfinite(t)) and model.domain_theta.contains(t):
                state["theta"] = t
                return t
        start = state["theta"]
        if start is None or not model.domain_theta.contains(start):
            start = model.default_theta(y, u)
        res = solve_theta_hat(model, y, u, start, cfg)
        if not res.converged:
            # one retry from the model's own initializer
            res = solve_theta_hat(model, y, u, model.default_theta(y, u), cfg)
            if not res.converged:
                raise EvaluationError(f"best-match solve failed at u={u}")
        state["theta"] = res.value
        return res.value

    def h(u):
        if k == 0:
            return np.zeros(0)
        if not model.domain_u.contains(u):
            raise EvaluationError("u outside the domain")
        t = theta_of(u)
        comp = orthonormal_complement(model.jac_theta(u, t))
        return comp.T @ (np.asarray(model.evaluate(u, t), dtype=float) - y)

    def jac_h(u):
        u = np.asarray(u, dtype=float)
        if k == 0:
            return np.zeros((0, model.m))
        step = fd_step * max(1.0, float(np.linalg.norm(u)))
        J = np.empty((k, model.m))
        saved = state["theta"]
        for i in range(model.m):
            e = np.zeros(model.m)
            e[i] = step
            J[:, i] = (h(u + e) - h(u - e)) / (2 * step)
            state["theta"] = saved
        return J

    return ConstraintFn(h, jac_h, model.m, k, theta_of=theta_of)
