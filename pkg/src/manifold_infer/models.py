"""Data generating equations (DGEs) and their Jacobians.

A model is a bundle ``y = G(u, theta)`` where ``u`` has a completely known
law ``rho`` and ``theta`` is the parameter.  Everything downstream (the
manifold ``{(u, theta): G(u, theta) = y}``, its densities, the samplers)
is derived from the callables collected in :class:`ModelSpec`.

Smoothness: the limit theory needs ``G`` three times continuously
differentiable, but only first-order Jacobians are ever consumed, so the
requirement is documented rather than checked.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, DomainError, EvaluationError, RankError

Array = np.ndarray

RANK_RTOL = 1e-10


@dataclass(frozen=True)
class Box:
    """Open box ``prod_i (lower_i, upper_i)``; infinite bounds allowed."""

    lower: Array
    upper: Array

    @classmethod
    def make(cls, lower, upper, dim: int) -> "Box":
        lo = np.broadcast_to(np.asarray(lower, dtype=float), (dim,)).copy()
        hi = np.broadcast_to(np.asarray(upper, dtype=float), (dim,)).copy()
        if np.any(lo >= hi):
            raise ConfigurationError("box lower bounds must be below upper bounds")
        lo.flags.writeable = False
        hi.flags.writeable = False
        return cls(lo, hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool((x > self.lower).all() and (x < self.upper).all())

    def contains_rows(self, X) -> Array:
        X = np.asarray(X, dtype=float)
        return np.all((X > self.lower) & (X < self.upper), axis=-1)

    def center(self) -> Array:
        lo, hi = self.lower, self.upper
        c = np.where(np.isfinite(lo) & np.isfinite(hi), 0.5 * (lo + hi), 0.0)
        c = np.where(np.isfinite(lo) & ~np.isfinite(hi), lo + 1.0, c)
        c = np.where(~np.isfinite(lo) & np.isfinite(hi), hi - 1.0, c)
        return c


@dataclass(frozen=True)
class ModelSpec:
    """Immutable DGE bundle.

    Attributes:
        name: Identifier used in configs and output headers.
        n, m, q: Dimensions of data, random component and parameter.
        evaluate: ``(u, theta) -> y``.
        jac_u: ``(u, theta) -> (n, m)`` Jacobian in ``u``.
        jac_theta: ``(u, theta) -> (n, q)`` Jacobian in ``theta``.
        log_rho: Log density of ``U``; ``-inf`` outside its support.
        sample_rho: ``(rng, size=None) -> u`` with shape ``(m,)`` or
            ``(size, m)``.
        log_prior: Optional, possibly improper, log prior on ``theta``.
        sample_prior: Optional prior sampler with the ``sample_rho`` signature.
        domain_u, domain_theta: Open boxes.
        theta_init: Optional ``(y, u) -> theta`` starting value for the
            best-match solver.
        evaluate_batch: Optional vectorized ``(U, Theta) -> Y`` over rows.
        theta_hat_batch: Optional vectorized best match ``(y, U) -> Theta``;
            rows are NaN where no interior minimizer exists.
        ju_gram_blocks: Optional ``(u, theta) -> (b, s, s)`` array of the
            diagonal blocks of ``jac_u @ jac_u.T`` when that Gram matrix is
            block diagonal with contiguous equal blocks.
        default_delta: Preset proposal scale, or None to tune by pilot run.
    """

    name: str
    n: int
    m: int
    q: int
    evaluate: Callable[[Array, Array], Array]
    jac_u: Callable[[Array, Array], Array]
    jac_theta: Callable[[Array, Array], Array]
    log_rho: Callable[[Array], float]
    sample_rho: Callable[..., Array]
    domain_u: Box
    domain_theta: Box
    log_prior: Optional[Callable[[Array], float]] = None
    sample_prior: Optional[Callable[..., Array]] = None
    theta_init: Optional[Callable[[Array, Array], Array]] = None
    evaluate_batch: Optional[Callable[[Array, Array], Array]] = None
    theta_hat_batch: Optional[Callable[[Array, Array], Array]] = None
    ju_gram_blocks: Optional[Callable[[Array, Array], Array]] = None
    u_names: tuple = ()
    theta_names: tuple = ()
    default_delta: Optional[float] = None
    prior_name: Optional[str] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        n, m, q = self.n, self.m, self.q
        if min(n, m, q) < 1:
            raise ConfigurationError(f"dimensions must be positive, got n={n} m={m} q={q}")
        if m < n:
            raise ConfigurationError(f"need n <= m for jac_u to have full row rank (n={n}, m={m})")
        if q > n:
            raise ConfigurationError(f"need q <= n for jac_theta to have full column rank (q={q}, n={n})")
        if self.domain_u.dim != m or self.domain_theta.dim != q:
            raise ConfigurationError("domain boxes do not match (m, q)")
        if not self.u_names:
            object.__setattr__(self, "u_names", tuple(f"u{i + 1}" for i in range(m)))
        if not self.theta_names:
            object.__setattr__(self, "theta_names", tuple(f"theta{i + 1}" for i in range(q)))

    def with_prior(self, log_prior, sample_prior=None, name=None) -> "ModelSpec":
        return replace(self, log_prior=log_prior, sample_prior=sample_prior, prior_name=name)

    def default_theta(self, y, u) -> Array:
        if self.theta_init is not None:
            return np.asarray(self.theta_init(y, u), dtype=float)
        return self.domain_theta.center()


@dataclass(frozen=True)
class TransformSpec:
    """Bijective, length-preserving map of the data space."""

    phi: Callable[[Array], Array]
    jac_phi: Callable[[Array], Array]
    phi_inv: Optional[Callable[[Array], Array]] = None
    name: str = "transform"


def check_full_rank(M: Array, what: str = "matrix") -> None:
    """Raise RankError unless the smallest singular value clears the threshold."""
    if M.size == 0:
        return
    s = np.linalg.svd(M, compute_uv=False)
    if not np.all(np.isfinite(s)):
        raise EvaluationError(f"{what} has non-finite entries")
    if s[-1] <= RANK_RTOL * s[0] or s[0] == 0.0:
        raise RankError(f"{what} is rank deficient (singular values {s[0]:.3g} .. {s[-1]:.3g})")


def _as_vectors(model: ModelSpec, u, theta):
    u = np.asarray(u, dtype=float).reshape(model.m)
    theta = np.asarray(theta, dtype=float).reshape(model.q)
    return u, theta


def _check_domain(model: ModelSpec, u, theta):
    if not model.domain_u.contains(u):
        raise DomainError(f"u={u} outside the domain of {model.name}")
    if not model.domain_theta.contains(theta):
        raise DomainError(f"theta={theta} outside the domain of {model.name}")


def evaluate_dge(model: ModelSpec, u, theta) -> Array:
    """Return ``G(u, theta)`` after checking the domain and finiteness."""
    u, theta = _as_vectors(model, u, theta)
    _check_domain(model, u, theta)
    y = np.asarray(model.evaluate(u, theta), dtype=float)
    if not np.all(np.isfinite(y)):
        raise EvaluationError(f"{model.name}: non-finite output at u={u}, theta={theta}")
    return y


def jacobian_u(model: ModelSpec, u, theta) -> Array:
    """Analytic ``n x m`` Jacobian in ``u``; must have full row rank."""
    u, theta = _as_vectors(model, u, theta)
    _check_domain(model, u, theta)
    J = np.asarray(model.jac_u(u, theta), dtype=float).reshape(model.n, model.m)
    check_full_rank(J, "jac_u")
    return J


def jacobian_theta(model: ModelSpec, u, theta) -> Array:
    """Analytic ``n x q`` Jacobian in ``theta``; must have full column rank."""
    u, theta = _as_vectors(model, u, theta)
    _check_domain(model, u, theta)
    J = np.asarray(model.jac_theta(u, theta), dtype=float).reshape(model.n, model.q)
    check_full_rank(J, "jac_theta")
    return J


def finite_diff_jacobian(f: Callable[[Array], Array], x, step: float = 1e-6) -> Array:
    """Central-difference Jacobian of ``f`` at ``x``.

    The step for coordinate ``i`` is ``step * max(1, |x_i|)``.
    """
    x = np.asarray(x, dtype=float).ravel()
    f0 = np.atleast_1d(np.asarray(f(x), dtype=float))
    J = np.empty((f0.size, x.size))
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        J[:, i] = (np.atleast_1d(f(xp)) - np.atleast_1d(f(xm))) / (2 * h)
    return J


def compose_transform(model: ModelSpec, t: TransformSpec) -> ModelSpec:
    """Return the model whose DGE is ``phi(G(u, theta))``.

    Jacobians follow the chain rule.  The law of ``U``, the prior and the
    domains carry over unchanged.
    """

    def jac_phi_checked(y):
        P = np.asarray(t.jac_phi(y), dtype=float)
        check_full_rank(P, "jac_phi")
        return P

    def evaluate(u, theta):
        return np.asarray(t.phi(model.evaluate(u, theta)), dtype=float)

    def jac_u(u, theta):
        return jac_phi_checked(model.evaluate(u, theta)) @ model.jac_u(u, theta)

    def jac_theta(u, theta):
        return jac_phi_checked(model.evaluate(u, theta)) @ model.jac_theta(u, theta)

    evaluate_batch = None
    if model.evaluate_batch is not None:
        def evaluate_batch(U, Theta):
            return np.asarray(t.phi(model.evaluate_batch(U, Theta).T), dtype=float).T

    theta_init = None
    if t.phi_inv is not None:
        def theta_init(y, u):
            return model.default_theta(t.phi_inv(np.asarray(y, dtype=float)), u)

    return replace(
        model,
        name=f"{model.name}|{t.name}",
        evaluate=evaluate,
        jac_u=jac_u,
        jac_theta=jac_theta,
        evaluate_batch=evaluate_batch,
        theta_init=theta_init,
        # best-match maps and Gram block structure do not survive phi
        theta_hat_batch=None,
        ju_gram_blocks=None,
    )
