"""Chain diagnostics: ESS, HDI, KS, W1 and split-chain PSRF."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .errors import ConfigurationError

logger = logging.getLogger(__name__)

Array = np.ndarray


def autocorrelation(x) -> Array:
    """Normalized autocorrelation at all lags via FFT."""
    x = np.asarray(x, dtype=float)
    n = x.size
    xc = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n] / n
    return acov / acov[0]


def ess(series) -> float:
    """Effective sample size with Geyer's initial monotone sequence.

    Autocorrelations are summed in adjacent pairs while the pair sums stay
    positive, and the pair sums are forced to be non-increasing.  The
    result is capped at the series length; a constant series gets exactly
    its length.
    """
    x = np.asarray(series, dtype=float).ravel()
    n = x.size
    if n < 10:
        raise ConfigurationError(f"ess needs at least 10 draws, got {n}")
    if np.ptp(x) == 0:
        logger.warning("constant series; ESS set to its length")
        return float(n)
    rho = autocorrelation(x)
    pairs = rho[: 2 * ((n - 1) // 2)].reshape(-1, 2).sum(axis=1)
    pos = np.flatnonzero(pairs <= 0)
    pairs = pairs[: pos[0]] if pos.size else pairs
    pairs = np.minimum.accumulate(pairs)
    tau = -1.0 + 2.0 * pairs.sum()
    tau = max(tau, 1.0 / math.log10(n))
    return float(min(n / tau, n))


def batch_means_ess(series, n_batches: int | None = None) -> float:
    """ESS from the batch-means variance estimate (cross-check for :func:`ess`)."""
    x = np.asarray(series, dtype=float).ravel()
    n = x.size
    b = n_batches or int(math.sqrt(n))
    size = n // b
    means = x[: b * size].reshape(b, size).mean(axis=1)
    sigma2 = size * means.var(ddof=1)
    return float(n * x.var(ddof=1) / sigma2)


def hdi(series, mass: float = 0.90) -> tuple:
    """Shortest window of sorted draws holding ``ceil(mass * N)`` of them."""
    x = np.sort(np.asarray(series, dtype=float).ravel())
    n = x.size
    k = int(math.ceil(mass * n))
    if k >= n:
        return float(x[0]), float(x[-1])
    widths = x[k - 1:] - x[: n - k + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + k - 1])


def ks_stat(a, b) -> tuple:
    """Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value."""
    r = stats.ks_2samp(np.ravel(a), np.ravel(b), method="asymp")
    return float(r.statistic), float(r.pvalue)


def ks_1samp(a, cdf) -> tuple:
    r = stats.kstest(np.ravel(a), cdf)
    return float(r.statistic), float(r.pvalue)


def w1_dist(a, b) -> float:
    """Empirical 1-Wasserstein distance between two samples on the line."""
    return float(stats.wasserstein_distance(np.ravel(a), np.ravel(b)))


def psrf(chains) -> float:
    """Split-chain potential scale reduction for a ``(n_chains, n_draws)`` array."""
    c = np.asarray(chains, dtype=float)
    if c.ndim != 2:
        raise ConfigurationError("psrf expects a (n_chains, n_draws) array")
    half = c.shape[1] // 2
    split = np.concatenate([c[:, :half], c[:, half:2 * half]], axis=0)
    n = split.shape[1]
    W = split.var(axis=1, ddof=1).mean()
    B = n * split.mean(axis=1).var(ddof=1)
    var_plus = (n - 1) / n * W + B / n
    return float(math.sqrt(var_plus / W))


def thin_for_independence(series, max_thin: int | None = None) -> Array:
    """Thin a chain by ``ceil(N / ESS)`` so the kept draws are roughly independent."""
    x = np.asarray(series)
    base = x if x.ndim == 1 else x[:, 0]
    step = int(math.ceil(base.size / ess(base)))
    if max_thin is not None:
        step = min(step, max_thin)
    return x[:: max(step, 1)]


@dataclass
class DiagnosticsReport:
    names: list
    ess: list
    hdi90: list
    mean: list
    psrf: list = field(default_factory=list)
    ks: dict = field(default_factory=dict)
    w1: dict = field(default_factory=dict)
    n_draws: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def diagnose(chains: Sequence[Array], names: Sequence[str],
             compare: Mapping[str, tuple] | None = None) -> DiagnosticsReport:
    """Per-coordinate ESS (summed over chains), 90% HDI, mean and PSRF.

    ``compare`` maps a label to a pair of 1-D samples for KS and W1.
    """
    chains = [np.asarray(c, dtype=float).reshape(len(c), -1) for c in chains]
    pooled = np.concatenate(chains, axis=0)
    p = pooled.shape[1]
    rep = DiagnosticsReport(
        names=list(names),
        ess=[float(sum(ess(c[:, j]) for c in chains)) for j in range(p)],
        hdi90=[list(hdi(pooled[:, j])) for j in range(p)],
        mean=[float(v) for v in pooled.mean(axis=0)],
        n_draws=int(pooled.shape[0]),
    )
    if len(chains) > 1:
        n = min(len(c) for c in chains)
        rep.psrf = [psrf(np.stack([c[:n, j] for c in chains])) for j in range(p)]
    for label, (a, b) in (compare or {}).items():
        rep.ks[label] = list(ks_stat(a, b))
        rep.w1[label] = w1_dist(a, b)
    return rep
