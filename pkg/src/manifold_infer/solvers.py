"""Nonlinear solvers: best-match parameter, Newton projection, inverse in u."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .geometry import ConstraintFn
from .models import ModelSpec

logger = logging.getLogger(__name__)

Array = np.ndarray


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-6
    max_iter: int = 50
    damping: float = 1e-3
    step_shrink: float = 0.25
    step_grow: float = 4.0

    def __post_init__(self):
        if not self.tol > 0:
            raise ConfigurationError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ConfigurationError(f"max_iter must be >= 1, got {self.max_iter}")


@dataclass(frozen=True)
class SolveResult:
    """Outcome of an iterative solve.

    ``residual_norm`` is the quantity compared against the tolerance: the
    scaled gradient norm for the best-match problem, ``|h|`` for
    projections and ``|G - y|`` for the inverse in ``u``.  ``fit_norm`` is
    ``|G(u, theta) - y|`` where that differs.
    """

    value: Array
    residual_norm: float
    iterations: int
    converged: bool
    fit_norm: Optional[float] = None


def solve_theta_hat(model: ModelSpec, y, u, theta_init, cfg: SolverConfig = SolverConfig()) -> SolveResult:
    """Minimize ``|G(u, theta) - y|`` over ``theta`` by Levenberg-damped Gauss-Newton.

    Convergence is first-order stationarity,
    ``|Jt^T r| <= tol * (1 + |r|)``.  Each iteration tries the undamped
    Gauss-Newton step first; if it leaves the parameter domain or fails to
    decrease the objective, damped steps are tried with growing damping.
    """
    y = np.asarray(y, dtype=float).reshape(model.n)
    u = np.asarray(u, dtype=float).reshape(model.m)
    theta = np.array(theta_init, dtype=float).reshape(model.q)
    box = model.domain_theta
    if not box.contains(theta):
        theta = model.default_theta(y, u)
    r = np.asarray(model.evaluate(u, theta), dtype=float) - y
    f = float(r @ r)
    lam = cfg.damping
    eye = np.eye(model.q)
    it = 0
    stat = np.inf
    while True:
        Jt = np.asarray(model.jac_theta(u, theta), dtype=float).reshape(model.n, model.q)
        g = Jt.T @ r
        rn = np.sqrt(f)
        stat = float(np.linalg.norm(g)) / (1.0 + rn)
        if not np.isfinite(stat):
            return SolveResult(theta, np.inf, it, False, rn)
        if stat <= cfg.tol:
            return SolveResult(theta, stat, it, True, rn)
        if it >= cfg.max_iter:
            return SolveResult(theta, stat, it, False, rn)
        it += 1
        A = Jt.T @ Jt
        accepted = False
        # plain Gauss-Newton first; exact in one step for models linear in theta
        try:
            cand = theta + np.linalg.solve(A, -g)
        except np.linalg.LinAlgError:
            cand = None
        if cand is not None and box.contains(cand):
            rc = np.asarray(model.evaluate(u, cand), dtype=float) - y
            fc = float(rc @ rc)
            if np.isfinite(fc) and fc <= f:
                theta, r, f = cand, rc, fc
                continue
        while lam < 1e16:
            try:
                step = np.linalg.solve(A + lam * (eye + np.diag(np.diag(A))), -g)
            except np.linalg.LinAlgError:
                lam *= cfg.step_grow
                continue
            cand = theta + step
            if box.contains(cand):
                rc = np.asarray(model.evaluate(u, cand), dtype=float) - y
                fc = float(rc @ rc)
                if np.isfinite(fc) and fc <= f:
                    theta, r, f = cand, rc, fc
                    lam = max(lam * cfg.step_shrink, 1e-12)
                    accepted = True
                    break
            lam *= cfg.step_grow
        if not accepted:
            return SolveResult(theta, stat, it, False, np.sqrt(f))


def check_theta_hat_unique(model: ModelSpec, y, u, theta_hat, rng, n_starts: int = 5,
                           cfg: SolverConfig = SolverConfig(tol=1e-10, max_iter=200),
                           spread: float = 1e-4) -> bool:
    """Re-solve from random starts; warn and return False if solutions disagree."""
    theta_hat = np.asarray(theta_hat, dtype=float)
    box = model.domain_theta
    ok = True
    for _ in range(n_starts):
        lo = np.where(np.isfinite(box.lower), box.lower, theta_hat - 2.0)
        hi = np.where(np.isfinite(box.upper), box.upper, theta_hat + 2.0)
        start = lo + (hi - lo) * rng.uniform(0.05, 0.95, size=model.q)
        res = solve_theta_hat(model, y, u, start, cfg)
        if res.converged and np.max(np.abs(res.value - theta_hat)) > spread:
            ok = False
    if not ok:
        logger.warning("best-match parameter looks non-unique at u=%s", u)
    return ok


def project_to_manifold(x0, B, h: ConstraintFn, gamma: float = 1e-6, R: int = 50) -> SolveResult:
    """Newton retraction ``x = x0 + B a`` onto ``{h = 0}``.

    Iterates ``a <- a - [Jh(x_r) B]^-1 h(x_r)`` with ``x_r = x0 + B a_r``
    until ``|h(x_r)| <= gamma``; at most ``R`` Newton updates.  Any
    non-finite value or singular system ends the solve unconverged.
    """
    x0 = np.asarray(x0, dtype=float)
    B = np.asarray(B, dtype=float).reshape(x0.size, -1)
    a = np.zeros(B.shape[1])
    x = x0
    for r in range(R + 1):
        try:
            hx = np.asarray(h.h(x), dtype=float)
        except (ArithmeticError, ValueError):
            return SolveResult(x, np.inf, r, False)
        nrm = float(np.linalg.norm(hx)) if hx.size else 0.0
        if not np.isfinite(nrm):
            return SolveResult(x, np.inf, r, False)
        if nrm <= gamma:
            return SolveResult(x, nrm, r, True)
        if r == R:
            return SolveResult(x, nrm, r, False)
        try:
            M = np.asarray(h.jac_h(x), dtype=float) @ B
            a = a - np.linalg.solve(M, hx)
        except (ArithmeticError, ValueError, np.linalg.LinAlgError):
            return SolveResult(x, nrm, r, False)
        x = x0 + B @ a
    return SolveResult(x, np.inf, R, False)  # pragma: no cover


def solve_u_hat(model: ModelSpec, y, theta, cfg: SolverConfig = SolverConfig(),
                u_init=None) -> SolveResult:
    """Newton solve of ``G(u, theta) = y`` in ``u`` (square case ``m = n``).

    Steps are halved until they stay in the domain and reduce ``|G - y|``.
    """
    if model.m != model.n:
        raise ConfigurationError(f"solve_u_hat needs m = n, got m={model.m}, n={model.n}")
    y = np.asarray(y, dtype=float).reshape(model.n)
    theta = np.asarray(theta, dtype=float).reshape(model.q)
    box = model.domain_u
    u = box.center() if u_init is None else np.array(u_init, dtype=float).reshape(model.m)
    r = np.asarray(model.evaluate(u, theta), dtype=float) - y
    rn = float(np.linalg.norm(r))
    for it in range(cfg.max_iter + 1):
        if rn <= cfg.tol:
            return SolveResult(u, rn, it, True, rn)
        if it == cfg.max_iter or not np.isfinite(rn):
            break
        try:
            step = np.linalg.solve(np.asarray(model.jac_u(u, theta), dtype=float), -r)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while t > 1e-12:
            cand = u + t * step
            if box.contains(cand):
                rc = np.asarray(model.evaluate(cand, theta), dtype=float) - y
                rcn = float(np.linalg.norm(rc))
                if np.isfinite(rcn) and rcn < rn:
                    u, r, rn = cand, rc, rcn
                    break
            t *= 0.5
        else:
            break
    return SolveResult(u, rn, it, False, rn)
