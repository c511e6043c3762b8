"""Manifold random-walk Metropolis, rejection baselines and the epsilon study.

The manifold sampler follows the constrained random walk of Zappa, Holmes-Cerfon
and Goodman (2018): a Gaussian step in the tangent space, a Newton retraction
along the normal space, a reverse-move check, and a Metropolis-Hastings
correction.  The proposal mean optionally carries a Langevin drift
``(delta^2 / 2) * grad log f`` projected onto the tangent basis, estimated by
central differences in the tangent coordinates.
"""
from __future__ import annotations

import enum
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import norm

from .densities import (
    TargetKind,
    log_f_B_joint,
    log_f_F_joint,
    log_f_tilde_B,
    log_f_tilde_F,
)
from .diagnostics import w1_dist
from .errors import ConfigurationError, StartupError
from .geometry import ConstraintFn, joint_constraint, tangent_basis, u_projection_constraint
from .models import Box, ModelSpec
from .solvers import SolverConfig, project_to_manifold, solve_theta_hat

logger = logging.getLogger(__name__)

Array = np.ndarray

THREADS_ENV = "MANIFOLD_INFER_THREADS"


def make_rng(seed: int, chain_index: int = 0) -> np.random.Generator:
    """Counter-based Philox stream keyed by ``(seed, chain_index)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(chain_index),))
    return np.random.Generator(np.random.Philox(ss))


# --------------------------------------------------------------------------
# Targets

@dataclass
class ManifoldTarget:
    """A density on ``{x in box: h(x) = 0}`` together with its constraint."""

    constraint: ConstraintFn
    log_density: Callable[[Array], float]
    box: Box
    theta_of: Callable[[Array], Array]
    kind: Optional[TargetKind] = None
    names: tuple = ()

    @property
    def d(self) -> int:
        return self.constraint.d

    @property
    def k(self) -> int:
        return self.constraint.k

    def safe_log_density(self, x) -> float:
        if not self.box.contains(x):
            return -math.inf
        try:
            v = float(self.log_density(x))
        except (ArithmeticError, ValueError, np.linalg.LinAlgError):
            return -math.inf
        return -math.inf if math.isnan(v) else v


def build_target(model: ModelSpec, y, kind: TargetKind,
                 solver_cfg: Optional[SolverConfig] = None) -> ManifoldTarget:
    """Wire a model, data and target kind into a sampler target."""
    y = np.asarray(y, dtype=float).reshape(model.n)
    if kind.is_bayes and model.log_prior is None:
        raise ConfigurationError(f"Bayesian target needs a prior on {model.name}")
    m = model.m
    if kind.is_joint:
        con = joint_constraint(model, y)
        box = Box(np.concatenate([model.domain_u.lower, model.domain_theta.lower]),
                  np.concatenate([model.domain_u.upper, model.domain_theta.upper]))
        dens = log_f_B_joint if kind is TargetKind.BAYES_JOINT else log_f_F_joint

        def log_density(x):
            return dens(model, y, x[:m], x[m:])

        names = tuple(model.u_names) + tuple(model.theta_names)
        return ManifoldTarget(con, log_density, box, lambda x: x[m:], kind, names)

    con = u_projection_constraint(model, y, solver_cfg)
    dens = log_f_tilde_B if kind is TargetKind.BAYES_U else log_f_tilde_F

    def log_density(u):
        return dens(model, y, u, con.theta_of(u))

    return ManifoldTarget(con, log_density, model.domain_u, con.theta_of, kind, tuple(model.u_names))


# --------------------------------------------------------------------------
# Single step

class StepOutcome(enum.Enum):
    ACCEPT = "accept"
    PROJECTION_FAIL = "projection-fail"
    REVERSE_FAIL = "reverse-fail"
    METROPOLIS_REJECT = "metropolis-reject"


@dataclass(frozen=True)
class ChainConfig:
    """Sampler tuning constants.

    ``delta`` of None means the model preset, or a pilot-tuned value when the
    model has none.
    """

    delta: Optional[float] = None
    n_burn: int = 10000
    n_keep: int = 20000
    newton_tol: float = 1e-6
    newton_max: int = 50
    seed: int = 0
    drift: str = "langevin"
    target: TargetKind = TargetKind.FIDUCIAL_JOINT
    grad_step: float = 1e-5
    reverse_factor: float = 10.0
    pilot_steps: int = 500

    def __post_init__(self):
        if self.delta is not None and not self.delta > 0:
            raise ConfigurationError(f"delta must be positive, got {self.delta}")
        if self.n_burn < 0 or self.n_keep < 0:
            raise ConfigurationError("n_burn and n_keep must be non-negative")
        if self.drift not in ("langevin", "none"):
            raise ConfigurationError(f"drift must be 'langevin' or 'none', got {self.drift!r}")
        if not self.newton_tol > 0 or self.newton_max < 1:
            raise ConfigurationError("newton_tol must be positive and newton_max >= 1")


@dataclass(frozen=True)
class ManifoldPoint:
    """A point on (within ``gamma`` of) the manifold with cached local data."""

    x: Array
    residual: float
    normal: Array       # d x k, rows of jac_h transposed
    basis: Array        # d x (d - k), orthonormal tangent basis
    log_f: float
    grad: Array         # tangent-coordinate gradient of log f


def numerical_tangent_gradient(log_f: Callable[[Array], float], x, basis, step: float = 1e-5) -> Array:
    """Central differences of ``t -> log f(x + basis t)`` at ``t = 0``.

    Falls back to zeros when any stencil value is non-finite.
    """
    x = np.asarray(x, dtype=float)
    basis = np.asarray(basis, dtype=float)
    p = basis.shape[1] if basis.ndim == 2 else 0
    g = np.empty(p)
    for i in range(p):
        fp = log_f(x + step * basis[:, i])
        fm = log_f(x - step * basis[:, i])
        if not (np.isfinite(fp) and np.isfinite(fm)):
            return np.zeros(p)
        g[i] = (fp - fm) / (2 * step)
    return g


def make_point(target: ManifoldTarget, x, cfg: ChainConfig, residual: Optional[float] = None) -> ManifoldPoint:
    x = np.asarray(x, dtype=float)
    if residual is None:
        hx = target.constraint.h(x)
        residual = float(np.linalg.norm(hx)) if hx.size else 0.0
    Jh = np.asarray(target.constraint.jac_h(x), dtype=float).reshape(target.k, target.d)
    basis = tangent_basis(Jh)
    log_f = target.safe_log_density(x)
    if cfg.drift == "langevin" and np.isfinite(log_f):
        grad = numerical_tangent_gradient(target.safe_log_density, x, basis, cfg.grad_step)
    else:
        grad = np.zeros(basis.shape[1])
    return ManifoldPoint(x, residual, Jh.T, basis, log_f, grad)


def _drift(point: ManifoldPoint, delta: float) -> Array:
    return 0.5 * delta * delta * point.grad


def manifold_rwm_step(state: ManifoldPoint, target: ManifoldTarget, cfg: ChainConfig,
                      rng: np.random.Generator, delta: Optional[float] = None):
    """One manifold random-walk Metropolis update.

    The tangent step is ``z ~ N(mu(x), delta * I)``.  Failed projections,
    failed or non-recovering reverse moves, and Metropolis rejections all
    return the current state with the matching :class:`StepOutcome`.
    """
    delta = cfg.delta if delta is None else delta
    # far-out proposals may overflow; those become rejections below
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return _rwm_step(state, target, cfg, rng, delta)


def _rwm_step(state, target, cfg, rng, delta):
    gamma, R = cfg.newton_tol, cfg.newton_max
    mu = _drift(state, delta)
    z = mu + math.sqrt(delta) * rng.standard_normal(mu.shape[0])
    fwd = project_to_manifold(state.x + state.basis @ z, state.normal, target.constraint, gamma, R)
    if not fwd.converged:
        return state, StepOutcome.PROJECTION_FAIL
    xp = fwd.value
    if not target.box.contains(xp):
        return state, StepOutcome.METROPOLIS_REJECT
    try:
        new = make_point(target, xp, cfg, residual=fwd.residual_norm)
    except (ArithmeticError, ValueError, np.linalg.LinAlgError):
        return state, StepOutcome.REVERSE_FAIL
    if not np.isfinite(new.log_f):
        return state, StepOutcome.METROPOLIS_REJECT
    zp = new.basis.T @ (state.x - xp)
    rev = project_to_manifold(xp + new.basis @ zp, new.normal, target.constraint, gamma, R)
    if not rev.converged or np.linalg.norm(rev.value - state.x) > cfg.reverse_factor * gamma:
        return state, StepOutcome.REVERSE_FAIL
    mup = _drift(new, delta)
    log_q_rev = -0.5 * float(np.sum((zp - mup) ** 2)) / delta
    log_q_fwd = -0.5 * float(np.sum((z - mu) ** 2)) / delta
    log_alpha = new.log_f - state.log_f + log_q_rev - log_q_fwd
    if math.log(rng.uniform()) <= log_alpha:
        return new, StepOutcome.ACCEPT
    return state, StepOutcome.METROPOLIS_REJECT


# --------------------------------------------------------------------------
# Chains

@dataclass
class ChainOutput:
    samples: Array
    theta_samples: Array
    accept_rate: float
    reject_reasons: dict
    n_accept: int
    residual_max: float
    delta: float
    names: tuple = ()
    theta_names: tuple = ()
    seed: int = 0
    chain_index: int = 0
    elapsed: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def total_steps(self) -> int:
        return self.n_accept + sum(self.reject_reasons.values())


def find_initial_point(target: ManifoldTarget, model: ModelSpec, y, cfg: ChainConfig,
                       rng: np.random.Generator, max_tries: int = 50) -> ManifoldPoint:
    """Draw ``u ~ rho``, pair it with its best match, project onto the manifold."""
    y = np.asarray(y, dtype=float)
    loose = SolverConfig(tol=1e-8, max_iter=200)
    for _ in range(max_tries):
        u0 = np.asarray(model.sample_rho(rng), dtype=float).reshape(model.m)
        if target.kind is not None and target.kind.is_joint:
            res = solve_theta_hat(model, y, u0, model.default_theta(y, u0), loose)
            x0 = np.concatenate([u0, res.value])
        else:
            x0 = u0
        if not target.box.contains(x0):
            continue
        try:
            Jh = np.asarray(target.constraint.jac_h(x0), dtype=float).reshape(target.k, target.d)
        except (ArithmeticError, ValueError):
            continue
        proj = project_to_manifold(x0, Jh.T, target.constraint, cfg.newton_tol, max(cfg.newton_max, 200))
        if not proj.converged or not target.box.contains(proj.value):
            continue
        try:
            point = make_point(target, proj.value, cfg, residual=proj.residual_norm)
        except (ArithmeticError, ValueError, np.linalg.LinAlgError):
            continue
        if np.isfinite(point.log_f):
            return point
    raise StartupError(f"no feasible starting point for {model.name} after {max_tries} tries")


def tune_delta(state: ManifoldPoint, target: ManifoldTarget, cfg: ChainConfig,
               rng: np.random.Generator, delta: float = 1.0, max_rounds: int = 12,
               band: tuple = (0.4, 0.6)):
    """Pilot runs that halve or double ``delta`` until acceptance is in ``band``."""
    for _ in range(max_rounds):
        acc = 0
        for _ in range(cfg.pilot_steps):
            state, out = manifold_rwm_step(state, target, cfg, rng, delta)
            acc += out is StepOutcome.ACCEPT
        rate = acc / max(cfg.pilot_steps, 1)
        if rate < band[0]:
            delta *= 0.5
        elif rate > band[1]:
            delta *= 2.0
        else:
            break
    return delta, state


def run_chain(model: ModelSpec, y, target: TargetKind | ManifoldTarget, cfg: ChainConfig,
              chain_index: int = 0, init: Optional[ManifoldPoint] = None) -> ChainOutput:
    """Run burn-in plus retained cycles; deterministic given ``cfg.seed``."""
    t0 = time.perf_counter()
    rng = make_rng(cfg.seed, chain_index)
    tgt = target if isinstance(target, ManifoldTarget) else build_target(model, y, target)
    state = init if init is not None else find_initial_point(tgt, model, y, cfg, rng)
    delta = cfg.delta if cfg.delta is not None else model.default_delta
    if delta is None:
        delta, state = tune_delta(state, tgt, cfg, rng)
    counts = {o.value: 0 for o in StepOutcome if o is not StepOutcome.ACCEPT}
    n_accept = 0
    for _ in range(cfg.n_burn):
        state, out = manifold_rwm_step(state, tgt, cfg, rng, delta)
        if out is StepOutcome.ACCEPT:
            n_accept += 1
        else:
            counts[out.value] += 1
    samples = np.empty((cfg.n_keep, tgt.d))
    thetas = np.empty((cfg.n_keep, model.q))
    kept_accept = 0
    residual_max = 0.0
    theta_cur = np.asarray(tgt.theta_of(state.x), dtype=float).copy()
    for i in range(cfg.n_keep):
        state, out = manifold_rwm_step(state, tgt, cfg, rng, delta)
        if out is StepOutcome.ACCEPT:
            n_accept += 1
            kept_accept += 1
            theta_cur = np.asarray(tgt.theta_of(state.x), dtype=float).copy()
        else:
            counts[out.value] += 1
        samples[i] = state.x
        thetas[i] = theta_cur
        residual_max = max(residual_max, state.residual)
    return ChainOutput(
        samples=samples,
        theta_samples=thetas,
        accept_rate=kept_accept / cfg.n_keep if cfg.n_keep else float("nan"),
        reject_reasons=counts,
        n_accept=n_accept,
        residual_max=residual_max,
        delta=float(delta),
        names=tgt.names,
        theta_names=tuple(model.theta_names),
        seed=cfg.seed,
        chain_index=chain_index,
        elapsed=time.perf_counter() - t0,
        meta={"model": model.name, "target": tgt.kind.value if tgt.kind else None,
              "n_burn": cfg.n_burn, "n_keep": cfg.n_keep, "drift": cfg.drift},
    )


def worker_count(n_tasks: int) -> int:
    env = os.environ.get(THREADS_ENV)
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(n_tasks, cap))


def run_chains(model: ModelSpec, y, target: TargetKind, cfg: ChainConfig, n_chains: int = 4) -> list:
    """Independent chains on per-index RNG streams, returned in index order."""
    with ThreadPoolExecutor(max_workers=worker_count(n_chains)) as pool:
        futures = [pool.submit(run_chain, model, y, target, cfg, i) for i in range(n_chains)]
        return [f.result() for f in futures]


# --------------------------------------------------------------------------
# Rejection baselines

@dataclass(frozen=True)
class ABCConfig:
    epsilon: float
    n_draws: int = 100000
    mode: str = "bayes"
    chunk_size: int = 200000
    keep_rejected: bool = False

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigurationError(f"epsilon must be positive, got {self.epsilon}")
        if self.mode not in ("bayes", "fiducial"):
            raise ConfigurationError(f"mode must be 'bayes' or 'fiducial', got {self.mode!r}")
        if self.n_draws < 1:
            raise ConfigurationError("n_draws must be >= 1")


@dataclass
class ABCResult:
    u: Array
    theta: Array
    n_draws: int
    n_accepted: int
    acceptance_rate: float
    epsilon: float
    mode: str
    all_u: Optional[Array] = None
    all_theta: Optional[Array] = None
    accepted_mask: Optional[Array] = None


def _batch_eval(model: ModelSpec, U, Theta):
    if model.evaluate_batch is not None:
        return np.asarray(model.evaluate_batch(U, Theta), dtype=float)
    return np.array([model.evaluate(u, t) for u, t in zip(U, Theta)], dtype=float)


def _batch_theta_hat(model: ModelSpec, y, U):
    if model.theta_hat_batch is not None:
        return np.asarray(model.theta_hat_batch(y, U), dtype=float).reshape(len(U), model.q)
    cfg = SolverConfig(tol=1e-10, max_iter=100)
    out = np.full((len(U), model.q), np.nan)
    for i, u in enumerate(U):
        res = solve_theta_hat(model, y, u, model.default_theta(y, u), cfg)
        if res.converged:
            out[i] = res.value
    return out


def abc_rejection(model: ModelSpec, y, cfg: ABCConfig, rng: np.random.Generator) -> ABCResult:
    """Accept-reject on ``|G(u, theta) - y| <= epsilon``.

    ``bayes`` draws ``theta`` from the prior; ``fiducial`` pairs each ``u``
    with its best match (draws without an interior best match are rejected).
    """
    y = np.asarray(y, dtype=float).reshape(model.n)
    if cfg.mode == "bayes" and model.sample_prior is None:
        raise ConfigurationError(f"bayes-mode ABC needs a proper, samplable prior on {model.name}")
    acc_u, acc_t, all_u, all_t, masks = [], [], [], [], []
    remaining = cfg.n_draws
    while remaining > 0:
        size = min(cfg.chunk_size, remaining)
        remaining -= size
        U = np.asarray(model.sample_rho(rng, size), dtype=float).reshape(size, model.m)
        if cfg.mode == "bayes":
            T = np.asarray(model.sample_prior(rng, size), dtype=float).reshape(size, model.q)
        else:
            T = _batch_theta_hat(model, y, U)
        ok = np.all(np.isfinite(T), axis=1) & model.domain_theta.contains_rows(np.nan_to_num(T))
        dist = np.full(size, np.inf)
        if np.any(ok):
            with np.errstate(invalid="ignore"):
                Y = _batch_eval(model, U[ok], T[ok])
            dist[ok] = np.linalg.norm(Y - y, axis=1)
        mask = dist <= cfg.epsilon
        acc_u.append(U[mask])
        acc_t.append(T[mask])
        if cfg.keep_rejected:
            all_u.append(U)
            all_t.append(T)
            masks.append(mask)
    u = np.concatenate(acc_u) if acc_u else np.empty((0, model.m))
    t = np.concatenate(acc_t) if acc_t else np.empty((0, model.q))
    if len(t) == 0:
        logger.warning("ABC accepted no draws at epsilon=%g (%d draws)", cfg.epsilon, cfg.n_draws)
    res = ABCResult(u, t, cfg.n_draws, len(t), len(t) / cfg.n_draws, cfg.epsilon, cfg.mode)
    if cfg.keep_rejected:
        res.all_u = np.concatenate(all_u)
        res.all_theta = np.concatenate(all_t)
        res.accepted_mask = np.concatenate(masks)
    return res


def fiducial_rejection(model: ModelSpec, y, epsilon: float, n_draws: int, rng) -> ABCResult:
    return abc_rejection(model, y, ABCConfig(epsilon=epsilon, n_draws=n_draws, mode="fiducial"), rng)


# --------------------------------------------------------------------------
# Epsilon-sequence study

@dataclass
class StudyReport:
    eps: list
    n_accepted: list
    w1: list
    w1_se: list
    mode: str

    @property
    def missing(self) -> list:
        return [e for e, n in zip(self.eps, self.n_accepted) if n == 0]

    def non_increasing(self, k_se: float = 2.0) -> bool:
        """Each W1 at most the previous one plus ``k_se`` combined standard errors."""
        pts = [(w, s) for w, s in zip(self.w1, self.w1_se) if np.isfinite(w)]
        for (w0, s0), (w1, s1) in zip(pts, pts[1:]):
            if w1 > w0 + k_se * math.hypot(s0, s1):
                return False
        return True

    def as_dict(self) -> dict:
        return {"eps": self.eps, "n_accepted": self.n_accepted, "w1": self.w1,
                "w1_se": self.w1_se, "mode": self.mode}


def epsilon_sequence_study(model: ModelSpec, y, eps_list: Sequence[float], n_draws: int,
                           reference, rng: np.random.Generator, mode: str = "bayes",
                           n_boot: int = 100, theta_index: int = 0) -> StudyReport:
    """W1 between epsilon-truncated theta-marginals and a manifold reference.

    ``reference`` is a :class:`ChainOutput` or an array of theta draws.  The
    standard error of each distance is a bootstrap over the truncated sample.
    """
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ConfigurationError("eps_list must be strictly decreasing")
    ref = reference.theta_samples if isinstance(reference, ChainOutput) else np.asarray(reference)
    ref = np.asarray(ref, dtype=float).reshape(len(ref), -1)[:, theta_index]
    ws, ses, ns = [], [], []
    for eps in eps_list:
        res = abc_rejection(model, y, ABCConfig(epsilon=eps, n_draws=n_draws, mode=mode), rng)
        ns.append(res.n_accepted)
        if res.n_accepted == 0:
            ws.append(float("nan"))
            ses.append(float("nan"))
            continue
        a = res.theta[:, theta_index]
        ws.append(w1_dist(a, ref))
        boots = [w1_dist(a[rng.integers(0, len(a), len(a))], ref) for _ in range(n_boot)]
        ses.append(float(np.std(boots, ddof=1)))
    return StudyReport(eps_list, ns, ws, ses, mode)


def tightness_demo(eps: float, C: float, n_draws: int, rng: np.random.Generator,
                   x1_max: float = 9.0) -> tuple:
    """Truncate a flat density to ``{x2 <= eps exp(-x1^2 / 2)}`` and measure ``[0, C] x [0, 1]``.

    Returns ``(estimate, standard_error, exact)`` where the exact mass
    ``2 Phi(C) - 1`` does not depend on ``eps``.  ``x1`` is truncated at
    ``x1_max``, whose neglected mass is below ``exp(-x1_max^2 / 2)``.
    """
    if not 0 < eps < 1:
        raise ConfigurationError("eps must lie in (0, 1)")
    x1 = rng.uniform(0, x1_max, n_draws)
    x2 = rng.uniform(0, 1, n_draws)
    acc = x2 <= eps * np.exp(-0.5 * x1 * x1)
    inside = x1[acc] <= C
    p = float(np.mean(inside))
    se = math.sqrt(p * (1 - p) / max(inside.size, 1))
    return p, se, float(2 * norm.cdf(C) - 1)
