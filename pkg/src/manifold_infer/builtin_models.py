"""The three reference DGEs and their named priors.

* ``gaussian-location``: ``Y = Phi^-1(U) + Phi^-1(theta)``, ``U ~ Unif(0, 1)``,
  ``theta = Phi(mu)`` in ``(0, 1)``.
* ``bivariate-corr``: ``Y = ((1 + theta) U1, (1 - theta) U2)`` with
  ``U1, U2`` i.i.d. ``chi2_N / N``; the sufficient statistics of ``N``
  standard bivariate normal pairs with correlation ``theta``.
* ``rm-anova``: ``X_ij = mu_i + sigma_z Z_j + sigma_e E_ij`` with standard
  Gaussian ``Z`` and ``E``, ``y = vec(X)`` (column major, conditions within
  subjects) and ``theta = (mu_1..mu_I, log sigma_z, log sigma_e)``.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln, ndtr, ndtri

from .errors import ConfigurationError
from .models import Box, ModelSpec, TransformSpec

_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


def _std_normal_logpdf(z):
    return -0.5 * z * z - _LOG_SQRT_2PI


# --------------------------------------------------------------------------
# Gaussian location

def builtin_gaussian_location(prior: str | None = "flat") -> ModelSpec:
    def evaluate(u, theta):
        return np.array([ndtri(u[0]) + ndtri(theta[0])])

    def evaluate_batch(U, Theta):
        return ndtri(U) + ndtri(Theta)

    def _dquantile(p):
        z = ndtri(p)
        return math.exp(0.5 * z * z + _LOG_SQRT_2PI)

    def jac_u(u, theta):
        return np.array([[_dquantile(u[0])]])

    def jac_theta(u, theta):
        return np.array([[_dquantile(theta[0])]])

    def log_rho(u):
        return 0.0 if 0.0 < u[0] < 1.0 else -math.inf

    def sample_rho(rng, size=None):
        shape = (1,) if size is None else (size, 1)
        return rng.uniform(size=shape)

    def theta_hat_batch(y, U):
        return ndtr(y[0] - ndtri(U))

    def theta_init(y, u):
        t = ndtr(y[0] - ndtri(u[0]))
        return np.array([min(max(t, 1e-12), 1 - 1e-12)])

    model = ModelSpec(
        name="gaussian-location",
        n=1, m=1, q=1,
        evaluate=evaluate,
        jac_u=jac_u,
        jac_theta=jac_theta,
        log_rho=log_rho,
        sample_rho=sample_rho,
        domain_u=Box.make(0.0, 1.0, 1),
        domain_theta=Box.make(0.0, 1.0, 1),
        theta_init=theta_init,
        evaluate_batch=evaluate_batch,
        theta_hat_batch=theta_hat_batch,
        u_names=("u",),
        theta_names=("theta",),
    )
    if prior is None:
        return model
    if prior != "flat":
        raise ConfigurationError(f"unknown prior {prior!r} for gaussian-location (expected 'flat')")
    return model.with_prior(
        lambda theta: 0.0 if 0.0 < theta[0] < 1.0 else -math.inf,
        lambda rng, size=None: rng.uniform(size=(1,) if size is None else (size, 1)),
        name="flat",
    )


# --------------------------------------------------------------------------
# Bivariate correlation

def chi2n_over_n_logpdf(u, N: int):
    """Log density of ``chi2_N / N`` evaluated elementwise."""
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (math.log(N) + (N / 2 - 1) * np.log(N * u) - N * u / 2
               - (N / 2) * math.log(2) - gammaln(N / 2))
    return np.where(u > 0, out, -np.inf)


def bivariate_flat_log_prior(theta):
    return math.log(0.5) if -1.0 < theta[0] < 1.0 else -math.inf


def bivariate_jeffreys_log_prior(theta):
    t = theta[0]
    if not -1.0 < t < 1.0:
        return -math.inf
    return 0.5 * math.log1p(t * t) - math.log1p(-t * t)


def builtin_bivariate_corr(N: int = 10, prior: str | None = "flat") -> ModelSpec:
    if N < 3:
        raise ConfigurationError(f"bivariate-corr needs N >= 3 for an integrable flat-prior density, got N={N}")

    def evaluate(u, theta):
        t = theta[0]
        return np.array([(1 + t) * u[0], (1 - t) * u[1]])

    def evaluate_batch(U, Theta):
        t = Theta[:, 0]
        return np.column_stack([(1 + t) * U[:, 0], (1 - t) * U[:, 1]])

    def jac_u(u, theta):
        t = theta[0]
        return np.array([[1 + t, 0.0], [0.0, 1 - t]])

    def jac_theta(u, theta):
        return np.array([[u[0]], [-u[1]]])

    def log_rho(u):
        if u[0] <= 0 or u[1] <= 0:
            return -math.inf
        return float(np.sum(chi2n_over_n_logpdf(u, N)))

    def sample_rho(rng, size=None):
        shape = (2,) if size is None else (size, 2)
        g = rng.standard_normal(shape + (N,))
        return np.sum(g * g, axis=-1) / N

    def theta_hat_batch(y, U):
        u1, u2 = U[:, 0], U[:, 1]
        s = u1 * u1 + u2 * u2
        t = (u1 * y[0] - u2 * y[1] - u1 * u1 + u2 * u2) / s
        return np.where(np.abs(t) < 1, t, np.nan)[:, None]

    def theta_init(y, u):
        t = (y[0] - y[1]) / (y[0] + y[1])
        return np.array([min(max(t, -0.9), 0.9)])

    model = ModelSpec(
        name="bivariate-corr",
        n=2, m=2, q=1,
        evaluate=evaluate,
        jac_u=jac_u,
        jac_theta=jac_theta,
        log_rho=log_rho,
        sample_rho=sample_rho,
        domain_u=Box.make(0.0, np.inf, 2),
        domain_theta=Box.make(-1.0, 1.0, 1),
        theta_init=theta_init,
        evaluate_batch=evaluate_batch,
        theta_hat_batch=theta_hat_batch,
        u_names=("u1", "u2"),
        theta_names=("theta",),
        meta={"N": N},
    )
    if prior is None:
        return model
    if prior == "flat":
        return model.with_prior(
            bivariate_flat_log_prior,
            lambda rng, size=None: rng.uniform(-1, 1, size=(1,) if size is None else (size, 1)),
            name="flat",
        )
    if prior == "jeffreys-bivariate":
        return model.with_prior(bivariate_jeffreys_log_prior, None, name="jeffreys-bivariate")
    raise ConfigurationError(f"unknown prior {prior!r} for bivariate-corr")


def reciprocal_transform(n: int = 2) -> TransformSpec:
    """Elementwise ``y -> 1 / y`` on the positive orthant."""

    def phi(y):
        return 1.0 / np.asarray(y, dtype=float)

    def jac_phi(y):
        y = np.asarray(y, dtype=float).reshape(n)
        return np.diag(-1.0 / (y * y))

    return TransformSpec(phi=phi, jac_phi=jac_phi, phi_inv=phi, name="reciprocal")


# --------------------------------------------------------------------------
# Repeated-measures ANOVA

def half_cauchy_log_sigma(log_sigma: float, scale: float) -> float:
    """Log density of ``log sigma`` when ``sigma`` is half-Cauchy(scale)."""
    s = math.exp(log_sigma)
    return math.log(2 / (math.pi * scale)) - math.log1p((s / scale) ** 2) + log_sigma


def builtin_rm_anova(I: int, J: int, prior: str | None = None,
                     cauchy_scale: float = 34.5) -> ModelSpec:
    if I < 2 or J < 2:
        raise ConfigurationError(f"rm-anova needs I, J > 1, got I={I}, J={J}")
    n, m, q = I * J, I * J + J, I + 2
    cond = np.tile(np.arange(I), J)      # row r = i + I*j
    subj = np.repeat(np.arange(J), I)
    rows = np.arange(n)
    mu_design = np.zeros((n, I))
    mu_design[rows, cond] = 1.0

    def evaluate(u, theta):
        sz, se = math.exp(theta[I]), math.exp(theta[I + 1])
        return theta[:I][cond] + sz * u[:J][subj] + se * u[J:]

    def evaluate_batch(U, Theta):
        sz = np.exp(Theta[:, I])[:, None]
        se = np.exp(Theta[:, I + 1])[:, None]
        return Theta[:, :I][:, cond] + sz * U[:, :J][:, subj] + se * U[:, J:]

    def jac_u(u, theta):
        sz, se = math.exp(theta[I]), math.exp(theta[I + 1])
        Ju = np.zeros((n, m))
        Ju[rows, subj] = sz
        Ju[rows, J + rows] = se
        return Ju

    jt_template = np.zeros((n, q))
    jt_template[:, :I] = mu_design

    def jac_theta(u, theta):
        Jt = jt_template.copy()
        Jt[:, I] = math.exp(theta[I]) * u[subj]
        Jt[:, I + 1] = math.exp(theta[I + 1]) * u[J:]
        return Jt

    ones = np.ones((I, I))
    eye = np.eye(I)

    def ju_gram_blocks(u, theta):
        # every subject shares one compound-symmetric block; return it as a
        # read-only stride-0 stack so callers can factor it once
        sz2, se2 = math.exp(2 * theta[I]), math.exp(2 * theta[I + 1])
        A = sz2 * ones + se2 * eye
        view = np.ndarray((J, I, I), buffer=A, strides=(0,) + A.strides)
        view.flags.writeable = False
        return view

    def log_rho(u):
        return float(-0.5 * np.dot(u, u) - m * _LOG_SQRT_2PI)

    def sample_rho(rng, size=None):
        return rng.standard_normal((m,) if size is None else (size, m))

    def theta_init(y, u):
        D = np.column_stack([mu_design, u[:J][subj], u[J:]])
        coef = np.linalg.lstsq(D, np.asarray(y, dtype=float), rcond=None)[0]
        resid_sd = max(float(np.std(y - mu_design @ coef[:I])), 1e-3)
        scales = [c if c > 1e-3 else resid_sd for c in coef[I:]]
        return np.concatenate([coef[:I], np.log(scales)])

    model = ModelSpec(
        name="rm-anova",
        n=n, m=m, q=q,
        evaluate=evaluate,
        jac_u=jac_u,
        jac_theta=jac_theta,
        log_rho=log_rho,
        sample_rho=sample_rho,
        domain_u=Box.make(-np.inf, np.inf, m),
        domain_theta=Box.make(-np.inf, np.inf, q),
        theta_init=theta_init,
        evaluate_batch=evaluate_batch,
        ju_gram_blocks=ju_gram_blocks,
        u_names=tuple(f"z{j + 1}" for j in range(J))
        + tuple(f"e{i + 1}_{j + 1}" for j in range(J) for i in range(I)),
        theta_names=tuple(f"mu{i + 1}" for i in range(I)) + ("log_sigma_z", "log_sigma_e"),
        default_delta=1.05,
        meta={"I": I, "J": J},
    )
    if prior is None:
        return model
    if prior == "flat":
        return model.with_prior(lambda theta: 0.0, None, name="flat")
    if prior == "gelman-anova":
        def log_prior(theta):
            # flat on mu and log sigma_e; half-Cauchy on sigma_z
            return half_cauchy_log_sigma(theta[I], cauchy_scale)
        return model.with_prior(log_prior, None, name="gelman-anova")
    raise ConfigurationError(f"unknown prior {prior!r} for rm-anova")


def get_builtin(model_id: str, prior: str | None = None, **kwargs) -> ModelSpec:
    """Look up a builtin by its config string id."""
    if model_id == "gaussian-location":
        return builtin_gaussian_location(prior=prior)
    if model_id == "bivariate-corr":
        return builtin_bivariate_corr(N=kwargs.get("N", 10), prior=prior)
    if model_id == "rm-anova":
        kw = {k: kwargs[k] for k in ("cauchy_scale",) if k in kwargs}
        return builtin_rm_anova(kwargs.get("I", 4), kwargs.get("J", 11), prior=prior, **kw)
    raise ConfigurationError(
        f"unknown model id {model_id!r}; expected gaussian-location, bivariate-corr or rm-anova")


MODEL_IDS = ("gaussian-location", "bivariate-corr", "rm-anova")
