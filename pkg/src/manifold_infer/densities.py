"""Log densities on the data generating manifold and closed-form references.

Joint-chart densities are with respect to the intrinsic measure of
``{(u, theta): G(u, theta) = y}``; u-chart densities are with respect to the
intrinsic measure of its projection onto ``u``.  All values are unnormalized
logs, ``-inf`` off the support and never NaN.  Off-manifold points (within
Newton tolerance) are evaluated with the same expressions.
"""
from __future__ import annotations

import enum
import math
import warnings
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate
from scipy.special import ndtri
from scipy.stats import norm

from .errors import ConfigurationError, EvaluationError, NumericError
from .geometry import (
    chol_logdet,
    gram_logdet,
    log_det_joint_dense,
    log_det_joint_fast,
    orthonormal_complement,
)
from .models import ModelSpec
from .solvers import SolverConfig, solve_theta_hat, solve_u_hat

Array = np.ndarray


class TargetKind(enum.Enum):
    """Which limiting distribution, on which chart."""

    BAYES_JOINT = "bayes-joint"
    BAYES_U = "bayes-u"
    FIDUCIAL_U = "fiducial-u"
    FIDUCIAL_JOINT = "fiducial-joint"

    @property
    def is_joint(self) -> bool:
        return self in (TargetKind.BAYES_JOINT, TargetKind.FIDUCIAL_JOINT)

    @property
    def is_bayes(self) -> bool:
        return self in (TargetKind.BAYES_JOINT, TargetKind.BAYES_U)

    def chart_dims(self, model: ModelSpec) -> tuple[int, int]:
        """Ambient dimension ``d`` and constraint dimension ``k``."""
        if self.is_joint:
            return model.m + model.q, model.n
        return model.m, model.n - model.q

    @classmethod
    def from_strings(cls, target: str, chart: str) -> "TargetKind":
        if target not in ("bayes", "fiducial") or chart not in ("joint", "u"):
            raise ConfigurationError(f"bad target/chart pair ({target!r}, {chart!r})")
        return cls(f"{target}-{chart}")


def _guard(v: float) -> float:
    return -math.inf if v is None or math.isnan(v) else float(v)


def _in_domain(model: ModelSpec, u, theta) -> bool:
    return model.domain_u.contains(u) and model.domain_theta.contains(theta)


def _require_prior(model: ModelSpec):
    if model.log_prior is None:
        raise ConfigurationError(f"model {model.name} has no prior; Bayesian densities need one")


# --------------------------------------------------------------------------
# Joint chart

def log_f_B_joint(model: ModelSpec, y, u, theta) -> float:
    """``log rho(u) + log pi(theta) - 1/2 log det(dG dG^T)``."""
    _require_prior(model)
    u = np.asarray(u, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if not _in_domain(model, u, theta):
        return -math.inf
    base = model.log_rho(u) + model.log_prior(theta)
    if not np.isfinite(base):
        return -math.inf
    return _guard(base - log_det_joint_fast(model, u, theta))


def log_f_F_joint(model: ModelSpec, y, u, theta) -> float:
    """``log rho(u) + 1/2 log det(Jt^T Jt) - 1/2 log det(dG dG^T)``.

    The joint Gram determinant goes through the determinant lemma (and the
    model's Gram blocks when it has them).
    """
    u = np.asarray(u, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if not _in_domain(model, u, theta):
        return -math.inf
    lr = model.log_rho(u)
    if not np.isfinite(lr):
        return -math.inf
    Jt = np.asarray(model.jac_theta(u, theta), dtype=float)
    return _guard(lr + 0.5 * gram_logdet(Jt) - log_det_joint_fast(model, u, theta, Jt))


def log_f_F_joint_dense(model: ModelSpec, y, u, theta) -> float:
    """Same as :func:`log_f_F_joint` with the joint Gram formed densely."""
    u = np.asarray(u, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if not _in_domain(model, u, theta):
        return -math.inf
    lr = model.log_rho(u)
    if not np.isfinite(lr):
        return -math.inf
    Ju = np.asarray(model.jac_u(u, theta), dtype=float)
    Jt = np.asarray(model.jac_theta(u, theta), dtype=float)
    return _guard(lr + 0.5 * gram_logdet(Jt) - log_det_joint_dense(Ju, Jt))


# --------------------------------------------------------------------------
# u chart

_TIGHT = SolverConfig(tol=1e-11, max_iter=100)


def _theta_hat_or_fail(model, y, u, theta_hat):
    if theta_hat is not None:
        return np.asarray(theta_hat, dtype=float)
    res = solve_theta_hat(model, y, u, model.default_theta(y, u), _TIGHT)
    if not res.converged:
        raise EvaluationError(f"best-match solve failed at u={u}")
    return res.value


def log_proj_gram(model: ModelSpec, u, theta) -> float:
    """Half log det of ``C^T Ju Ju^T C`` with ``C`` the complement of ``Jt``.

    Empty (zero) when ``n = q``.
    """
    Jt = np.asarray(model.jac_theta(u, theta), dtype=float)
    if model.n == model.q:
        return 0.0
    C = orthonormal_complement(Jt)
    P = C.T @ np.asarray(model.jac_u(u, theta), dtype=float)
    return 0.5 * chol_logdet(P @ P.T)


def log_ambient_tilde_B(model: ModelSpec, y, u, theta_hat=None) -> float:
    """Bayesian ambient density on u-space: ``rho(u) pi(t) / det(Jt^T Jt)^{1/2}``."""
    _require_prior(model)
    u = np.asarray(u, dtype=float)
    if not model.domain_u.contains(u):
        return -math.inf
    t = _theta_hat_or_fail(model, y, u, theta_hat)
    if not model.domain_theta.contains(t):
        return -math.inf
    Jt = np.asarray(model.jac_theta(u, t), dtype=float)
    return _guard(model.log_rho(u) + model.log_prior(t) - 0.5 * chol_logdet(Jt.T @ Jt))


def log_f_tilde_B(model: ModelSpec, y, u, theta_hat=None) -> float:
    """Bayesian limit on the u-projection."""
    u = np.asarray(u, dtype=float)
    t = _theta_hat_or_fail(model, y, u, theta_hat) if model.domain_u.contains(u) else None
    amb = log_ambient_tilde_B(model, y, u, t)
    if not np.isfinite(amb):
        return -math.inf
    return _guard(amb - log_proj_gram(model, u, t))


def log_f_tilde_F(model: ModelSpec, y, u, theta_hat=None) -> float:
    """Fiducial limit on the u-projection: ``log rho - 1/2 log det(C^T Ju Ju^T C)``."""
    u = np.asarray(u, dtype=float)
    if not model.domain_u.contains(u):
        return -math.inf
    lr = model.log_rho(u)
    if not np.isfinite(lr):
        return -math.inf
    t = _theta_hat_or_fail(model, y, u, theta_hat)
    if not model.domain_theta.contains(t):
        return -math.inf
    return _guard(lr - log_proj_gram(model, u, t))


# --------------------------------------------------------------------------
# Square case m = n

def _u_hat(model: ModelSpec, y, theta) -> Array:
    res = solve_u_hat(model, y, theta, SolverConfig(tol=1e-12, max_iter=200))
    if not res.converged:
        raise EvaluationError(f"inverse in u failed at theta={theta}")
    return res.value


def log_likelihood_m_eq_n(model: ModelSpec, y, theta) -> float:
    """``log f(y|theta) = log rho(u_hat) - 1/2 log det(Ju Ju^T)`` at ``u_hat(y, theta)``."""
    theta = np.asarray(theta, dtype=float).reshape(model.q)
    if not model.domain_theta.contains(theta):
        return -math.inf
    try:
        u = _u_hat(model, y, theta)
    except EvaluationError:
        return -math.inf
    lr = model.log_rho(u)
    if not np.isfinite(lr):
        return -math.inf
    Ju = np.asarray(model.jac_u(u, theta), dtype=float)
    return _guard(lr - 0.5 * chol_logdet(Ju @ Ju.T))


def log_gfd_m_eq_n(model: ModelSpec, y, theta) -> float:
    """Fiducial density for ``m = n``: likelihood times ``det(Jt^T Jt)^{1/2}``."""
    ll = log_likelihood_m_eq_n(model, y, theta)
    if not np.isfinite(ll):
        return -math.inf
    theta = np.asarray(theta, dtype=float).reshape(model.q)
    u = _u_hat(model, y, theta)
    Jt = np.asarray(model.jac_theta(u, theta), dtype=float)
    return _guard(ll + 0.5 * gram_logdet(Jt))


# --------------------------------------------------------------------------
# Closed forms for the Gaussian location model

def reference_posterior_location(theta, y: float):
    """Posterior of ``theta = Phi(mu)`` under a uniform prior on ``theta``."""
    theta = np.asarray(theta, dtype=float)
    z = ndtri(theta)
    return math.sqrt(2.0) * norm.pdf(math.sqrt(2.0) * (z - y / 2.0)) / norm.pdf(z)


def reference_fiducial_location(theta, y: float):
    """Fiducial density of ``theta``; integrates to one."""
    theta = np.asarray(theta, dtype=float)
    z = ndtri(theta)
    return norm.pdf(y - z) / norm.pdf(z)


def reference_posterior_location_cdf(theta, y: float):
    # mu | y ~ N(y/2, 1/2) and theta = Phi(mu)
    return norm.cdf((ndtri(np.asarray(theta, dtype=float)) - y / 2.0) * math.sqrt(2.0))


def reference_fiducial_location_cdf(theta, y: float):
    # mu ~ N(y, 1) fiducially
    return norm.cdf(ndtri(np.asarray(theta, dtype=float)) - y)


# --------------------------------------------------------------------------
# Quadrature

def quadrature_normalize(f: Callable, domain: Sequence, tol: float = 1e-9) -> float:
    """Integrate ``f`` over a 1-D interval or 2-D box by adaptive quadrature.

    ``domain`` is ``(a, b)`` or ``((a1, b1), (a2, b2))``; infinite limits
    are allowed.  2-D integrands are called as ``f(x1, x2)``.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            if np.ndim(domain) == 1 and len(domain) == 2 and np.isscalar(domain[0]):
                val, err = integrate.quad(f, domain[0], domain[1], epsabs=tol, epsrel=tol, limit=200)
            elif len(domain) == 2:
                (a1, b1), (a2, b2) = domain
                val, err = integrate.dblquad(lambda x2, x1: f(x1, x2), a1, b1, a2, b2,
                                             epsabs=tol, epsrel=tol)
            else:
                raise ConfigurationError("quadrature_normalize supports 1-D and 2-D domains only")
        except integrate.IntegrationWarning as exc:
            raise NumericError(f"quadrature did not converge: {exc}") from exc
    if not np.isfinite(val):
        raise NumericError("quadrature returned a non-finite value")
    return float(val)


def bivariate_flat_ambient(N: int = 10) -> Callable:
    """``rho(u) / (2 |u|)``: the flat-prior ambient density on u-space."""
    from .builtin_models import chi2n_over_n_logpdf

    def f(u1, u2):
        if u1 <= 0 or u2 <= 0:
            return 0.0
        lr = chi2n_over_n_logpdf(u1, N) + chi2n_over_n_logpdf(u2, N)
        return float(np.exp(lr) / (2.0 * math.hypot(u1, u2)))

    return f


def bivariate_flat_ambient_normalizer(N: int = 10, tol: float = 1e-9) -> float:
    return quadrature_normalize(bivariate_flat_ambient(N), ((0.0, np.inf), (0.0, np.inf)), tol)


def theta_marginal_on_grid(log_density_theta: Callable[[float], float], grid: Array,
                           domain: Optional[tuple] = None) -> Array:
    """Normalized 1-D density values on ``grid`` (normalizer by quadrature)."""
    lo, hi = domain if domain is not None else (grid[0], grid[-1])
    logs = np.array([log_density_theta(t) for t in grid])
    shift = np.max(logs[np.isfinite(logs)])
    Z = quadrature_normalize(lambda t: math.exp(log_density_theta(t) - shift), (lo, hi), tol=1e-9)
    return np.exp(logs - shift) / Z
