"""Run configuration, chain persistence, bundled data and figure bundles.

Samples are written as CSV with 17 significant digits so a write/read
round trip reproduces every float64 bitwise.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.stats import gaussian_kde

from .diagnostics import ess, hdi
from .errors import ConfigurationError, ParseError

Array = np.ndarray

AGES = (8, 10, 12, 14)
N_FEMALES = 11

# --------------------------------------------------------------------------
# Run configuration


@dataclass(frozen=True)
class RunConfig:
    """Every CLI flag as a typed field.  JSON documents map onto it key by key."""

    model: str = "gaussian-location"
    target: str = "fiducial"
    chart: str = "joint"
    prior: Optional[str] = None
    delta: Optional[float] = None
    burn: int = 10000
    keep: int = 20000
    seed: int = 0
    chains: int = 1
    out: Optional[str] = None
    y: Optional[list] = None
    newton_tol: float = 1e-6
    newton_max_iter: int = 50
    drift: str = "langevin"
    mode: str = "bayes"
    epsilon: float = 0.05
    draws: int = 100000
    eps: Optional[list] = None
    cauchy_scale: float = 34.5
    N: int = 10

    def __post_init__(self):
        choices = {"target": ("fiducial", "bayes"), "chart": ("joint", "u"),
                   "mode": ("bayes", "fiducial"), "drift": ("langevin", "none")}
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise ConfigurationError(f"config key {key!r}: expected one of {allowed}, "
                                         f"got {getattr(self, key)!r}")
        for key in ("burn", "keep", "seed"):
            if getattr(self, key) < 0:
                raise ConfigurationError(f"config key {key!r}: expected a non-negative int")
        for key in ("chains", "draws", "newton_max_iter", "N"):
            if getattr(self, key) < 1:
                raise ConfigurationError(f"config key {key!r}: expected a positive int")
        for key in ("epsilon", "newton_tol", "cauchy_scale"):
            if not getattr(self, key) > 0:
                raise ConfigurationError(f"config key {key!r}: expected a positive float")
        if self.delta is not None and not self.delta > 0:
            raise ConfigurationError("config key 'delta': expected a positive float")


# expected JSON types per key; None is allowed where the default is None
_KEY_TYPES = {
    "model": str, "target": str, "chart": str, "prior": str, "delta": float,
    "burn": int, "keep": int, "seed": int, "chains": int, "out": str, "y": list,
    "newton_tol": float, "newton_max_iter": int, "drift": str, "mode": str,
    "epsilon": float, "draws": int, "eps": list, "cauchy_scale": float, "N": int,
}
_NULLABLE = {f.name for f in fields(RunConfig) if f.default is None}


def _coerce(key: str, value):
    want = _KEY_TYPES[key]
    if value is None:
        if key in _NULLABLE:
            return None
        raise ConfigurationError(f"config key {key!r}: expected {want.__name__}, got null")
    if want is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"config key {key!r}: expected float, got {type(value).__name__}")
        return float(value)
    if want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"config key {key!r}: expected int, got {type(value).__name__}")
        return value
    if want is list:
        if not isinstance(value, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigurationError(f"config key {key!r}: expected list of numbers")
        return [float(v) for v in value]
    if not isinstance(value, want):
        raise ConfigurationError(f"config key {key!r}: expected {want.__name__}, "
                                 f"got {type(value).__name__}")
    return value


def parse_run_config(doc: Mapping | str, base: Optional[RunConfig] = None) -> RunConfig:
    """Validate a JSON document (or parsed mapping) into a :class:`RunConfig`.

    Unknown keys are rejected; absent keys keep the values of ``base``.
    """
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise ParseError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, Mapping):
        raise ConfigurationError("config must be a JSON object")
    unknown = sorted(set(doc) - set(_KEY_TYPES))
    if unknown:
        raise ConfigurationError(f"unknown config key(s): {', '.join(map(repr, unknown))}")
    values = {k: _coerce(k, v) for k, v in doc.items()}
    return dataclasses.replace(base or RunConfig(), **values)


def load_run_config(path) -> RunConfig:
    return parse_run_config(Path(path).read_text())


# --------------------------------------------------------------------------
# Chain persistence


def _fmt(v: float) -> str:
    return "%.17g" % v


def write_samples_csv(path, samples: Array, names: Sequence[str]) -> None:
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[1] != len(names):
        raise ConfigurationError("samples must be (n_draws, len(names))")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in samples:
            w.writerow([_fmt(v) for v in row])


def read_samples_csv(path) -> tuple:
    """Return ``(samples, names)``; malformed rows raise ParseError with the line."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            names = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        rows = []
        for row in reader:
            if len(row) != len(names):
                raise ParseError(f"{path}:{reader.line_num}: expected {len(names)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ParseError(f"{path}:{reader.line_num}: {exc}") from None
    arr = np.array(rows, dtype=float).reshape(len(rows), len(names))
    return arr, names


def chain_summary(out) -> dict:
    """JSON-ready summary of a :class:`~manifold_infer.samplers.ChainOutput`."""
    th = out.theta_samples
    n = th.shape[0]
    return {
        "model": out.meta.get("model"),
        "target": out.meta.get("target"),
        "acceptance": out.accept_rate,
        "reject_reasons": dict(out.reject_reasons),
        "n_accept": out.n_accept,
        "residual_max": out.residual_max,
        "delta": out.delta,
        "seed": out.seed,
        "chain_index": out.chain_index,
        "n_burn": out.meta.get("n_burn"),
        "n_keep": out.meta.get("n_keep"),
        "elapsed_s": out.elapsed,
        "theta_names": list(out.theta_names),
        "ess": [ess(th[:, j]) for j in range(th.shape[1])] if n >= 10 else [],
        "hdi90": [list(hdi(th[:, j])) for j in range(th.shape[1])] if n >= 2 else [],
        "mean": [float(v) for v in th.mean(axis=0)] if n else [],
    }


def write_chain(out_dir, out) -> Path:
    """Write ``samples.csv`` (state then theta columns) and ``summary.json``."""
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    names = [f"x:{s}" for s in out.names] + list(out.theta_names)
    write_samples_csv(d / "samples.csv", np.hstack([out.samples, out.theta_samples]), names)
    (d / "summary.json").write_text(json.dumps(chain_summary(out), indent=2))
    return d


def read_chain(in_dir) -> dict:
    """Read a directory written by :func:`write_chain`.

    Returns a dict with ``samples`` (state columns), ``theta_samples``,
    ``names``, ``theta_names`` and the parsed ``summary``.
    """
    d = Path(in_dir)
    if not (d / "samples.csv").is_file():
        raise ConfigurationError(f"{d} has no samples.csv")
    arr, header = read_samples_csv(d / "samples.csv")
    summary = json.loads((d / "summary.json").read_text()) if (d / "summary.json").is_file() else {}
    state = [i for i, h in enumerate(header) if h.startswith("x:")]
    theta = [i for i, h in enumerate(header) if not h.startswith("x:")]
    return {
        "samples": arr[:, state],
        "theta_samples": arr[:, theta],
        "names": [header[i][2:] for i in state],
        "theta_names": [header[i] for i in theta],
        "summary": summary,
    }


# --------------------------------------------------------------------------
# Bundled data


def load_orthodontic_female(path=None) -> Array:
    """Female subsample of the orthodontic growth data as a 4 x 11 matrix.

    Rows are ages 8, 10, 12, 14 and columns are subjects F01..F11.  The file
    is long format ``subject,age,distance``; row order does not matter.
    """
    if path is None:
        text = resources.files("manifold_infer").joinpath("data/orthodont_female.csv").read_text()
        src = "orthodont_female.csv"
    else:
        text = Path(path).read_text()
        src = str(path)
    lines = text.splitlines()
    if not lines or [c.strip() for c in lines[0].split(",")] != ["subject", "age", "distance"]:
        raise ParseError(f"{src}:1: expected header 'subject,age,distance'")
    X = np.full((len(AGES), N_FEMALES), np.nan)
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = [c.strip() for c in line.split(",")]
        if len(parts) != 3:
            raise ParseError(f"{src}:{lineno}: expected 3 fields, got {len(parts)}")
        subj, age, dist = parts
        try:
            j = int(subj.lstrip("Ff")) - 1
            i = AGES.index(int(age))
            v = float(dist)
        except ValueError:
            raise ParseError(f"{src}:{lineno}: cannot parse {line!r}") from None
        if not 0 <= j < N_FEMALES:
            raise ParseError(f"{src}:{lineno}: subject {subj!r} out of range")
        if not (math.isfinite(v) and v > 0):
            raise ParseError(f"{src}:{lineno}: distance must be positive and finite")
        if not np.isnan(X[i, j]):
            raise ParseError(f"{src}:{lineno}: duplicate entry for {subj} at age {age}")
        X[i, j] = v
    if np.isnan(X).any():
        raise ParseError(f"{src}: missing (age, subject) cells")
    return X


def orthodontic_y() -> Array:
    """The female data stacked as the rm-anova data vector (row ``i + I j``)."""
    return load_orthodontic_female().ravel(order="F")


def default_data(model_id: str) -> Array:
    """Observed data used throughout the worked examples."""
    if model_id == "gaussian-location":
        return np.array([-0.5])
    if model_id == "bivariate-corr":
        return np.array([1.2, 0.6])
    if model_id == "rm-anova":
        return orthodontic_y()
    raise ConfigurationError(f"no default data for model {model_id!r}")


# --------------------------------------------------------------------------
# Figure bundles


def _write_cols(path: Path, cols: Mapping[str, Array]) -> None:
    names = list(cols)
    arr = np.column_stack([np.asarray(cols[k], dtype=float).ravel() for k in names])
    write_samples_csv(path, arr, names)


def moving_average(x, window: int = 500) -> Array:
    """Trailing mean over up to ``window`` previous draws (shorter at the start)."""
    x = np.asarray(x, dtype=float)
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, x.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


FIGURE_REQUIREMENTS = {
    "fig1": ("abc: ABCResult with keep_rejected=True on gaussian-location",),
    "fig2": (),
    "fig3": ("chain: ChainOutput (or read_chain dict) from an rm-anova run",),
}


def _fig1(out: Path, runs: Mapping, y: float) -> dict:
    from .densities import reference_fiducial_location, reference_posterior_location

    res = runs["abc"]
    if res.all_u is None:
        raise ConfigurationError("fig1 needs the ABC run with keep_rejected=True")
    n_scatter = min(len(res.all_u), 20000)
    _write_cols(out / "scatter.csv", {
        "u": res.all_u[:n_scatter, 0], "theta": res.all_theta[:n_scatter, 0],
        "accepted": res.accepted_mask[:n_scatter].astype(float)})
    bins = np.linspace(0, 1, 51)
    h_acc, _ = np.histogram(res.theta[:, 0], bins=bins, density=True)
    h_u, ub = np.histogram(res.u[:, 0], bins=50, density=True)
    _write_cols(out / "hist_theta.csv", {"lo": bins[:-1], "hi": bins[1:], "density": h_acc})
    _write_cols(out / "hist_u.csv", {"lo": ub[:-1], "hi": ub[1:], "density": h_u})
    grid = np.linspace(0.001, 0.999, 999)
    _write_cols(out / "curves.csv", {
        "theta": grid,
        "posterior": reference_posterior_location(grid, y),
        "fiducial": reference_fiducial_location(grid, y)})
    return {"figure": "fig1", "y": y, "epsilon": res.epsilon, "n_draws": res.n_draws,
            "n_accepted": res.n_accepted, "acceptance_rate": res.acceptance_rate}


def _fig2(out: Path, runs: Mapping, y: Sequence[float], N: int) -> dict:
    from .builtin_models import builtin_bivariate_corr, chi2n_over_n_logpdf
    from .densities import (bivariate_flat_ambient_normalizer, log_gfd_m_eq_n,
                            log_likelihood_m_eq_n, theta_marginal_on_grid)

    y1, y2 = y
    th = np.linspace(-0.99, 0.99, 397)
    u1, u2 = y1 / (1 + th), y2 / (1 - th)
    keep = (u1 < 12) & (u2 < 12)
    _write_cols(out / "manifold.csv", {"theta": th[keep], "u1": u1[keep], "u2": u2[keep]})
    Z = bivariate_flat_ambient_normalizer(N)
    g = np.linspace(0.02, 3.0, 150)
    G1, G2 = np.meshgrid(g, g, indexing="ij")
    dens = np.exp(chi2n_over_n_logpdf(G1, N) + chi2n_over_n_logpdf(G2, N)) / (2 * np.hypot(G1, G2)) / Z
    _write_cols(out / "contours.csv", {"u1": G1, "u2": G2, "density": dens})
    model = builtin_bivariate_corr(N, prior="flat")
    yv = np.array([y1, y2])
    tg = np.linspace(-0.98, 0.98, 197)
    bayes = theta_marginal_on_grid(lambda t: log_likelihood_m_eq_n(model, yv, [t]), tg, (-1, 1))
    fid = theta_marginal_on_grid(lambda t: log_gfd_m_eq_n(model, yv, [t]), tg, (-1, 1))
    cols = {"theta": tg, "bayes_flat": bayes, "fiducial": fid}
    for label, chain in runs.items():
        ts = chain.theta_samples if hasattr(chain, "theta_samples") else chain["theta_samples"]
        kde = gaussian_kde(np.asarray(ts)[:, 0])
        cols[f"kde_{label}"] = kde(tg)
    _write_cols(out / "theta_marginals.csv", cols)
    i0 = int(np.argmin(np.abs(th)))
    return {"figure": "fig2", "y": [y1, y2], "N": N, "contour_normalizer": Z,
            "point_theta0": [float(u1[i0]), float(u2[i0])]}


def _fig3(out: Path, runs: Mapping, window: int) -> dict:
    chain = runs["chain"]
    if hasattr(chain, "theta_samples"):
        ts, names = chain.theta_samples, list(chain.theta_names)
    else:
        ts, names = chain["theta_samples"], list(chain["theta_names"])
    ts = np.asarray(ts, dtype=float)
    cols = {"iter": np.arange(1, len(ts) + 1)}
    for j, nm in enumerate(names):
        cols[nm] = ts[:, j]
        cols[f"{nm}_trend"] = moving_average(ts[:, j], window)
    _write_cols(out / "traces.csv", cols)
    dcols, hdis = {}, {}
    for j, nm in enumerate(names):
        lo, hi = hdi(ts[:, j])
        hdis[nm] = [lo, hi]
        pad = 0.1 * (hi - lo)
        grid = np.linspace(ts[:, j].min() - pad, ts[:, j].max() + pad, 200)
        dcols[f"{nm}_x"] = grid
        dcols[f"{nm}_density"] = gaussian_kde(ts[:, j])(grid)
    _write_cols(out / "densities.csv", dcols)
    return {"figure": "fig3", "trend": f"moving average, window {window}", "hdi90": hdis,
            "ess": {nm: ess(ts[:, j]) for j, nm in enumerate(names)}}


def emit_figure_data(figure_id: str, out_dir, runs: Optional[Mapping] = None, *,
                     y=None, N: int = 10, window: int = 500) -> dict:
    """Write the CSV bundle for ``fig1``, ``fig2`` or ``fig3`` and return its metadata.

    ``runs`` supplies completed runs: fig1 needs ``abc``, fig3 needs
    ``chain``; fig2 is computed directly and overlays any chains given.
    Metadata is also written to ``meta.json``.
    """
    if figure_id not in FIGURE_REQUIREMENTS:
        raise ConfigurationError(f"unknown figure {figure_id!r}; expected fig1, fig2 or fig3")
    runs = dict(runs or {})
    need = [r.split(":")[0] for r in FIGURE_REQUIREMENTS[figure_id]]
    missing = [r for r in need if r not in runs]
    if missing:
        detail = "; ".join(r for r in FIGURE_REQUIREMENTS[figure_id] if r.split(":")[0] in missing)
        raise ConfigurationError(f"{figure_id} is missing required runs: {detail}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if figure_id == "fig1":
        meta = _fig1(out, runs, float(-0.5 if y is None else np.ravel(y)[0]))
    elif figure_id == "fig2":
        meta = _fig2(out, runs, (1.2, 0.6) if y is None else tuple(np.ravel(y)), N)
    else:
        meta = _fig3(out, runs, window)
    (out / "meta.json").write_text(json.dumps(meta, indent=2))
    return meta
