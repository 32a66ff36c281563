"""Command-line interface: ``poisson-caic {fit,score,simulate}``.

Settings come from an optional JSON file (``--config``) whose keys are the
long option names with dashes replaced by underscores; command-line flags
override it.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import reporting
from .criteria import score_models
from .estimation import fit_fixed_glm, fit_glmm
from .exceptions import DataFormatError, DimensionError, DomainError, RankDeficiencyError
from .model import ModelKind, ModelSpec, SolverControls, read_csv
from .simlab import SELECTION_SIGMAS, TABLE1_CONFIGS, SimulationDesign, run_selection_experiment, run_table1

log = logging.getLogger("poisson_caic")

PRESETS = {"smoke": {"replicates": 25, "inner_replicates": 25}, "paper": {"replicates": 500, "inner_replicates": 500}}

DEFAULTS = {
    "input": None,
    "output_dir": ".",
    "seed": None,
    "time_seed": False,
    "threads": os.cpu_count() or 1,
    "format": "both",
    "preset": "smoke",
    "model": "both",
    "refit_mode": "full",
    "variance_floor": 1e-8,
    "inner_tol": 1e-10,
    "outer_tol": 1e-8,
    "max_inner": 200,
    "max_outer": 500,
    "max_halvings": 30,
    "experiment": "table1",
    "replicates": None,
    "inner_replicates": None,
    "sigma_b": None,
    "n_i": None,
    "clusters": 10,
}


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of settings; flags override it")
    common.add_argument("--input", help="CSV with columns cluster_id,y,x1..xp,z1..zq")
    common.add_argument("--output-dir")
    common.add_argument("--seed", type=int)
    common.add_argument("--time-seed", action="store_true", default=None, help="derive the seed from the clock")
    common.add_argument("--threads", type=int)
    common.add_argument("--format", choices=["csv", "json", "both"])
    common.add_argument("--preset", choices=sorted(PRESETS))
    common.add_argument("--variance-floor", type=float)
    common.add_argument("--inner-tol", type=float)
    common.add_argument("--outer-tol", type=float)
    common.add_argument("--max-inner", type=int)
    common.add_argument("--max-outer", type=int)
    common.add_argument("--max-halvings", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="poisson-caic", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    f = sub.add_parser("fit", parents=[common], help="fit the fixed-effects and/or mixed model")
    f.add_argument("--model", choices=["fixed", "mixed", "both"])
    s = sub.add_parser("score", parents=[common], help="compute AIC, mAIC and cAIC")
    s.add_argument("--refit-mode", choices=["full", "fixed-theta"])
    m = sub.add_parser("simulate", parents=[common], help="run a Monte Carlo experiment")
    m.add_argument("--experiment", choices=["table1", "selection"])
    m.add_argument("--replicates", type=int)
    m.add_argument("--inner-replicates", type=int)
    m.add_argument("--sigma-b", type=float, nargs="+", help="override the sigma_b grid")
    m.add_argument("--n-i", type=int, nargs="+", help="override the cluster sizes")
    m.add_argument("--clusters", type=int)
    return p


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        unknown = set(file_cfg) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    for key, val in vars(args).items():
        if key in DEFAULTS and val is not None:
            cfg[key] = val
    for key in ("inner_tol", "outer_tol", "variance_floor"):
        if not cfg[key] > 0:
            raise UsageError(f"{key} must be positive")
    return cfg


def _spec(cfg: dict, q: int) -> ModelSpec:
    ctl = SolverControls(
        max_inner=cfg["max_inner"],
        max_outer=cfg["max_outer"],
        inner_tol=cfg["inner_tol"],
        outer_tol=cfg["outer_tol"],
        max_halvings=cfg["max_halvings"],
    )
    return ModelSpec(ModelKind.MIXED_DIAGONAL, q=max(q, 1), variance_floor=cfg["variance_floor"], solver=ctl)


def _load(cfg: dict):
    if not cfg["input"]:
        raise UsageError("--input is required")
    return read_csv(cfg["input"])


def _outdir(cfg: dict) -> Path:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_fit(cfg: dict) -> int:
    data = _load(cfg)
    spec = _spec(cfg, data.q)
    report: dict = {"schema_version": reporting.SCHEMA_VERSION, "input": str(cfg["input"]), "fits": {}, "warnings": []}
    models = ["fixed", "mixed"] if cfg["model"] == "both" else [cfg["model"]]
    if data.q == 0 and "mixed" in models:
        if cfg["model"] == "mixed":
            raise UsageError("input has no random-effect columns (z1..zq)")
        models.remove("mixed")
    for name in models:
        fit = fit_fixed_glm(data, spec.solver) if name == "fixed" else fit_glmm(data, spec)
        report["fits"][name] = reporting.fit_to_dict(fit, data)
        if not fit.converged:
            report["warnings"].append(f"{name} model did not converge: {fit.convergence.message}")
        line = f"{name:5s}  loglik={fit.cond_loglik:.6f}  beta=" + np.array2string(fit.beta_hat, precision=5)
        if fit.sigma_hat is not None:
            line += "  sigma=" + np.array2string(fit.sigma_hat, precision=5)
            line += f"  marginal={fit.marg_loglik:.6f}"
        print(line + ("" if fit.converged else "  [NOT CONVERGED]"))
    out = _outdir(cfg)
    if cfg["format"] in ("json", "both"):
        reporting.write_json(report, out / "fit.json")
    if cfg["format"] in ("csv", "both"):
        rows = []
        for name, f in report["fits"].items():
            rows += [[name, "beta", k, v] for k, v in f["beta_hat"].items()]
            rows += [[name, "sigma", k, v] for k, v in f.get("sigma_hat", {}).items()]
        reporting.write_rows(out / "fit.csv", ["model", "parameter", "column", "value"], rows)
    for w in report["warnings"]:
        log.warning(w)
    return 0


def cmd_score(cfg: dict) -> int:
    data = _load(cfg)
    spec = _spec(cfg, data.q)
    rep = score_models(data, spec, refit_mode=cfg["refit_mode"], workers=cfg["threads"])
    body = reporting.criteria_to_dict(rep, data)
    warnings = []
    for name, fit in (("fixed", rep.fixed_fit), ("mixed", rep.mixed_fit)):
        if fit is not None and not fit.converged:
            warnings.append(f"{name} model did not converge: {fit.convergence.message}")
    if rep.refit_failures:
        warnings.append(f"{len(rep.refit_failures)} perturbed refit(s) did not converge")
    report = {"schema_version": reporting.SCHEMA_VERSION, "input": str(cfg["input"]), **body, "warnings": warnings}
    out = _outdir(cfg)
    if cfg["format"] in ("json", "both"):
        reporting.write_json(report, out / "criteria.json")
    if cfg["format"] in ("csv", "both"):
        reporting.write_rows(
            out / "criteria.csv",
            ["criterion", "value"],
            [["aic", rep.aic], ["maic", rep.maic], ["caic", rep.caic], ["penalty_K", rep.penalty_K]],
        )
        reporting.write_rows(
            out / "per_observation_K.csv",
            ["index", "cluster_id", "y", "K_i"],
            [[i, data.ids[data.group[i]], int(data.y[i]), rep.per_observation_K[i]] for i in range(data.N)],
        )
    def show(v):
        return "n/a" if v is None else f"{v:.6f}"

    print(f"AIC  (fixed)  {show(rep.aic)}")
    print(f"mAIC (mixed)  {show(rep.maic)}")
    print(f"cAIC (mixed)  {show(rep.caic)}   K = {rep.penalty_K:.6f} [{rep.refit_mode} refits]")
    for w in warnings:
        log.warning(w)
    return 0


def cmd_simulate(cfg: dict) -> int:
    time_derived = cfg["seed"] is None
    if time_derived:
        if not cfg["time_seed"]:
            raise UsageError("simulate needs --seed (or --time-seed to derive one from the clock)")
        cfg["seed"] = time.time_ns() % (2**63)
    preset = PRESETS[cfg["preset"]]
    R = preset["replicates"] if cfg["replicates"] is None else cfg["replicates"]
    S = preset["inner_replicates"] if cfg["inner_replicates"] is None else cfg["inner_replicates"]
    if R < 1 or S < 1 or cfg["clusters"] < 1:
        raise UsageError("replicates, inner replicates and clusters must be >= 1")
    spec = _spec(cfg, 1)
    workers = max(1, int(cfg["threads"]))
    if cfg["experiment"] == "table1":
        sig = cfg["sigma_b"]
        ns = cfg["n_i"]
        configs = TABLE1_CONFIGS if sig is None and ns is None else [
            (n, s) for s in (sig or (0.25, 0.5, 1.0)) for n in (ns or (5, 15))
        ]
        for n, s in configs:
            SimulationDesign(m=cfg["clusters"], n_i=n, sigma_b=s, replicates=R)
        report = run_table1(configs, R=R, S=S, seed=cfg["seed"], workers=workers, m=cfg["clusters"], spec=spec)
    else:
        sigmas = cfg["sigma_b"] or SELECTION_SIGMAS
        n_i = (cfg["n_i"] or [5])[0]
        for s in sigmas:
            SimulationDesign(m=cfg["clusters"], n_i=n_i, sigma_b=s, replicates=R)
        report = run_selection_experiment(sigmas, R=R, seed=cfg["seed"], workers=workers, n_i=n_i, m=cfg["clusters"], spec=spec)
    report.provenance["time_derived_seed"] = time_derived
    out = _outdir(cfg)
    reporting.write_experiment(report, out, cfg["format"])
    reporting.write_json({"wall_clock_seconds": report.wall_clock_seconds}, out / f"{report.experiment}_timing.json")
    for r in report.rows:
        line = f"n_i={r.n_i:<3d} sigma_b={r.sigma_b:<6g} K={r.mean_K:8.3f} (se {r.K_stderr:.3f})"
        if report.experiment == "table1":
            line += f"  BC={r.bc_estimate:8.3f} (se {r.bc_stderr:.3f})  BC analytic={r.bc_analytic:8.3f}"
        else:
            line += f"  fixed preferred: mAIC {r.maic_fixed}/{r.replicates}, cAIC {r.caic_fixed}/{r.replicates}"
        print(line + ("  [UNRELIABLE]" if r.unreliable else ""))
    print(f"wall clock: {report.wall_clock_seconds:.1f}s")
    return 0


COMMANDS = {"fit": cmd_fit, "score": cmd_score, "simulate": cmd_simulate}


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataFormatError, DimensionError, DomainError, RankDeficiencyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
