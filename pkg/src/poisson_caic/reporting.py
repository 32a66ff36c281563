"""Serialisation of fits, criteria and experiment reports.

Floats are written with 17 significant digits so that two runs can be
compared byte for byte; non-finite values become ``null`` in JSON.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import asdict
from os import PathLike
from pathlib import Path

import numpy as np

from .criteria import CriteriaReport
from .estimation import FitResult
from .model import ClusteredCounts
from .simlab import ExperimentReport

SCHEMA_VERSION = 1


def fmt(x: float) -> str:
    return "%.17g" % x


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with 17-significant-digit floats."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, np.generic):
        obj = obj.item()
    if obj is None or isinstance(obj, bool):
        return json.dumps(obj)
    if isinstance(obj, enum.Enum):
        return json.dumps(obj.value)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return fmt(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.generic)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_json(obj, path: str | PathLike) -> None:
    Path(path).write_text(dumps(obj) + "\n")


def write_rows(path: str | PathLike, header: list[str], rows: list[list]) -> None:
    def cell(v):
        if isinstance(v, (float, np.floating)):
            return fmt(float(v)) if math.isfinite(v) else ""
        return v

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([cell(v) for v in r])


def fit_to_dict(fit: FitResult, data: ClusteredCounts) -> dict:
    out = {
        "kind": fit.kind.value,
        "beta_hat": dict(zip(data.x_names, fit.beta_hat.tolist())),
        "cond_loglik": fit.cond_loglik,
    }
    if fit.log_sigma_hat is not None:
        out["sigma_hat"] = dict(zip(data.z_names, fit.sigma_hat.tolist()))
        out["log_sigma_hat"] = dict(zip(data.z_names, fit.log_sigma_hat.tolist()))
        out["marg_loglik"] = fit.marg_loglik
        out["b_hat"] = {str(cid): row.tolist() for cid, row in zip(data.ids, fit.b_hat)}
    out["convergence"] = asdict(fit.convergence)
    return out


def criteria_to_dict(report: CriteriaReport, data: ClusteredCounts) -> dict:
    return {
        "aic": report.aic,
        "maic": report.maic,
        "caic": report.caic,
        "penalty_K": report.penalty_K,
        "refit_mode": report.refit_mode,
        "per_observation_K": report.per_observation_K.tolist(),
        "refit_failures": report.refit_failures,
        "fixed_cond_loglik": None if report.fixed_fit is None else report.fixed_fit.cond_loglik,
        "mixed_cond_loglik": None if report.mixed_fit is None else report.mixed_fit.cond_loglik,
        "mixed_marg_loglik": None if report.mixed_fit is None else report.mixed_fit.marg_loglik,
    }


TABLE_COLUMNS = [
    "n_i", "sigma_b", "replicates", "bc_estimate", "bc_stderr", "bc_analytic", "bc_analytic_stderr",
    "mean_K", "K_stderr", "maic_fixed", "caic_fixed", "mean_aic", "mean_maic", "mean_caic",
    "boundary_fraction", "fit_failures", "refit_failures", "unreliable",
]


def experiment_rows(report: ExperimentReport) -> list[list]:
    return [[getattr(r, c) for c in TABLE_COLUMNS] for r in report.rows]


def write_experiment(report: ExperimentReport, out_dir: str | PathLike, fmt_sel: str = "both") -> list[Path]:
    """Write ``<experiment>.csv/.json`` and, for selection runs, plot data."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt_sel in ("csv", "both"):
        p = out_dir / f"{report.experiment}.csv"
        write_rows(p, TABLE_COLUMNS, experiment_rows(report))
        written.append(p)
    if fmt_sel in ("json", "both"):
        p = out_dir / f"{report.experiment}.json"
        write_json(report.to_dict(), p)
        written.append(p)
    if report.experiment == "selection":
        p = out_dir / "criteria_vs_sigma.csv"
        write_rows(
            p,
            ["sigma_b", "mean_aic", "mean_maic", "mean_caic"],
            [[r.sigma_b, r.mean_aic, r.mean_maic, r.mean_caic] for r in report.rows],
        )
        written.append(p)
    return written
