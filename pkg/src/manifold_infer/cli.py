"""Command line entry point ``manifold-infer``.

Subcommands: ``run``, ``abc``, ``study``, ``diag`` and ``figures``.  A JSON
config given with ``--config`` supplies defaults; explicit flags win.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .builtin_models import get_builtin
from .densities import TargetKind
from .diagnostics import diagnose
from .errors import ManifoldInferError
from .io import (RunConfig, default_data, emit_figure_data, load_run_config, read_chain,
                 write_chain)
from .samplers import (ABCConfig, ChainConfig, abc_rejection, epsilon_sequence_study, make_rng,
                       run_chain, run_chains)

logger = logging.getLogger(__name__)


def _model_for(cfg: RunConfig, bayes: bool):
    prior = cfg.prior
    if prior is None and bayes:
        prior = "gelman-anova" if cfg.model == "rm-anova" else "flat"
    kw = {"cauchy_scale": cfg.cauchy_scale, "N": cfg.N}
    return get_builtin(cfg.model, prior=prior, **kw)


def _data(cfg: RunConfig):
    return np.asarray(cfg.y, dtype=float) if cfg.y is not None else default_data(cfg.model)


def _chain_cfg(cfg: RunConfig, kind: TargetKind) -> ChainConfig:
    return ChainConfig(delta=cfg.delta, n_burn=cfg.burn, n_keep=cfg.keep,
                       newton_tol=cfg.newton_tol, newton_max=cfg.newton_max_iter,
                       seed=cfg.seed, drift=cfg.drift, target=kind)


def _chains(cfg: RunConfig):
    kind = TargetKind.from_strings(cfg.target, cfg.chart)
    model = _model_for(cfg, kind.is_bayes)
    y = _data(cfg)
    ccfg = _chain_cfg(cfg, kind)
    if cfg.chains == 1:
        return [run_chain(model, y, kind, ccfg)]
    return run_chains(model, y, kind, ccfg, n_chains=cfg.chains)


def cmd_run(cfg: RunConfig, args) -> dict:
    outs = _chains(cfg)
    if cfg.out:
        root = Path(cfg.out)
        if len(outs) == 1:
            write_chain(root, outs[0])
        else:
            for o in outs:
                write_chain(root / f"chain_{o.chain_index}", o)
    return {"chains": [{"chain_index": o.chain_index, "acceptance": o.accept_rate,
                        "reject_reasons": o.reject_reasons, "residual_max": o.residual_max,
                        "delta": o.delta, "elapsed_s": o.elapsed} for o in outs],
            "out": cfg.out}


def cmd_abc(cfg: RunConfig, args) -> dict:
    bayes = cfg.mode == "bayes"
    model = _model_for(cfg, bayes)
    res = abc_rejection(model, _data(cfg),
                        ABCConfig(epsilon=cfg.epsilon, n_draws=cfg.draws, mode=cfg.mode),
                        make_rng(cfg.seed))
    rep = {"mode": res.mode, "epsilon": res.epsilon, "n_draws": res.n_draws,
           "n_accepted": res.n_accepted, "acceptance_rate": res.acceptance_rate}
    if res.n_accepted:
        rep["theta_mean"] = [float(v) for v in res.theta.mean(axis=0)]
    return rep


def cmd_study(cfg: RunConfig, args) -> dict:
    eps = cfg.eps or [0.4, 0.2, 0.1, 0.05]
    kind = TargetKind.from_strings(cfg.mode, "joint")
    model = _model_for(cfg, kind.is_bayes)
    y = _data(cfg)
    ref = run_chain(model, y, kind, _chain_cfg(cfg, kind))
    rep = epsilon_sequence_study(model, y, eps, cfg.draws, ref, make_rng(cfg.seed, 1), mode=cfg.mode)
    d = rep.as_dict()
    d["non_increasing"] = rep.non_increasing()
    return d


def _load_dir(path) -> list:
    p = Path(path)
    if (p / "samples.csv").is_file():
        return [read_chain(p)]
    subs = sorted(q for q in p.iterdir() if (q / "samples.csv").is_file())
    if not subs:
        raise ManifoldInferError(f"{p} contains no samples.csv")
    return [read_chain(q) for q in subs]


def cmd_diag(cfg: RunConfig, args) -> dict:
    chains = _load_dir(args.input)
    names = chains[0]["theta_names"]
    compare = None
    if args.compare:
        other = _load_dir(args.compare)
        a = np.concatenate([c["theta_samples"] for c in chains])
        b = np.concatenate([c["theta_samples"] for c in other])
        compare = {nm: (a[:, j], b[:, j]) for j, nm in enumerate(names)}
    return diagnose([c["theta_samples"] for c in chains], names, compare).as_dict()


def cmd_figures(cfg: RunConfig, args) -> dict:
    which = args.which
    runs = {}
    if which == "fig1":
        model = get_builtin("gaussian-location", prior="flat")
        runs["abc"] = abc_rejection(model, default_data("gaussian-location"),
                                    ABCConfig(epsilon=0.05, n_draws=10 ** 6, keep_rejected=True),
                                    make_rng(cfg.seed))
    elif which == "fig3":
        if args.input:
            runs["chain"] = _load_dir(args.input)[0]
        else:
            c = dataclasses.replace(cfg, model="rm-anova", target="fiducial", chart="joint")
            runs["chain"] = _chains(c)[0]
    return emit_figure_data(which, cfg.out or args.out, runs)


COMMANDS = {"run": cmd_run, "abc": cmd_abc, "study": cmd_study, "diag": cmd_diag,
            "figures": cmd_figures}

# flag name -> RunConfig key
_FLAG_KEYS = {"model": "model", "target": "target", "chart": "chart", "prior": "prior",
              "delta": "delta", "burn": "burn", "keep": "keep", "seed": "seed",
              "chains": "chains", "out": "out", "mode": "mode", "epsilon": "epsilon",
              "draws": "draws", "eps": "eps", "newton_tol": "newton_tol",
              "newton_max_iter": "newton_max_iter", "drift": "drift"}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="manifold-infer",
                                description="Bayesian and fiducial sampling on data generating manifolds.")
    p.add_argument("--config", help="JSON document with RunConfig keys")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    def common(sp):
        sp.add_argument("--model", default=S, choices=["gaussian-location", "bivariate-corr", "rm-anova"])
        sp.add_argument("--prior", default=S)
        sp.add_argument("--seed", type=int, default=S)
        sp.add_argument("--config", default=S, help=argparse.SUPPRESS)

    def chain_flags(sp):
        sp.add_argument("--delta", type=float, default=S)
        sp.add_argument("--burn", type=int, default=S)
        sp.add_argument("--keep", type=int, default=S)
        sp.add_argument("--newton-tol", dest="newton_tol", type=float, default=S)
        sp.add_argument("--newton-max-iter", dest="newton_max_iter", type=int, default=S)
        sp.add_argument("--drift", choices=["langevin", "none"], default=S)

    r = sub.add_parser("run", help="run the manifold sampler")
    common(r)
    chain_flags(r)
    r.add_argument("--target", choices=["fiducial", "bayes"], default=S)
    r.add_argument("--chart", choices=["joint", "u"], default=S)
    r.add_argument("--chains", type=int, default=S)
    r.add_argument("--out", default=S)

    a = sub.add_parser("abc", help="accept-reject baseline")
    common(a)
    a.add_argument("--mode", choices=["bayes", "fiducial"], default=S)
    a.add_argument("--epsilon", type=float, default=S)
    a.add_argument("--draws", type=int, default=S)

    s = sub.add_parser("study", help="epsilon-sequence W1 study")
    common(s)
    chain_flags(s)
    s.add_argument("--mode", choices=["bayes", "fiducial"], default=S)
    s.add_argument("--eps", type=lambda v: [float(x) for x in v.split(",")], default=S)
    s.add_argument("--draws", type=int, default=S)

    d = sub.add_parser("diag", help="diagnostics of saved chains as JSON")
    d.add_argument("--in", dest="input", required=True)
    d.add_argument("--compare")

    f = sub.add_parser("figures", help="write figure CSV bundles")
    f.add_argument("--which", choices=["fig1", "fig2", "fig3"], required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--in", dest="input", help="saved rm-anova chain for fig3")
    f.add_argument("--seed", type=int, default=S)
    return p


def resolve_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if getattr(args, "config", None) else RunConfig()
    over = {k: getattr(args, flag) for flag, k in _FLAG_KEYS.items() if hasattr(args, flag)}
    return dataclasses.replace(cfg, **over)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        result = COMMANDS[args.command](cfg, args)
    except ManifoldInferError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    json.dump(result, sys.stdout, indent=2, default=float)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
