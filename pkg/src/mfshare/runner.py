"""Config-driven repetition studies and their report files."""

from __future__ import annotations

import csv
import importlib
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Any

import numpy as np

from .errors import MfshareError, ParameterError
from .estimators import (
    CSV_COLUMNS,
    ModelSpec,
    PipelineConfig,
    pipeline_mc,
    pipeline_mfmc,
    pipeline_mfmc_ae,
    pipeline_mfmc_as,
)
from .seeding import derive_seed

log = logging.getLogger(__name__)

BENCHMARKS = ("theoretical", "analytic", "reaction_diffusion", "external")
METHODS = ("mc", "mfmc", "mfmc_as", "mfmc_ae")
DENSITY_POINTS = 201
DENSITY_SPAN = 4.0

# per-benchmark defaults for budget, pilot size and repetitions
_DEFAULTS: dict[str, dict[str, Any]] = {
    "theoretical": {"budget": 300.0, "pilot_n": 100, "repetitions": 100,
                    "analytic_flow": True, "analytic_gradient": True, "model_as_encoder": True},
    "analytic": {"budget": 300.0, "pilot_n": 100, "repetitions": 100},
    "reaction_diffusion": {"budget": 100.0, "pilot_n": 200, "repetitions": 20},
    "external": {"budget": 100.0, "pilot_n": 100, "repetitions": 20},
}


@dataclass
class RunConfig:
    benchmark: str = "analytic"
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    pilot_n: int | None = None
    budget: float | None = None
    w: float | None = None
    r: int = 1
    repetitions: int | None = None
    seed: int = 0
    analytic_flow: bool | None = None
    analytic_gradient: bool | None = None
    model_as_encoder: bool | None = None
    reuse_pilot: bool = False
    out: str = "runs/out"
    workers: int = 1
    trials: int = 20
    epochs: int = 5000
    flow_epochs: int = 2000
    flow_kind: str = "auto"
    ic_seed: int | None = None
    external: str | None = None

    def __post_init__(self):
        if self.benchmark not in BENCHMARKS:
            raise ParameterError(f"unknown benchmark {self.benchmark!r}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ParameterError(f"unknown or empty method list: {self.methods}")
        self.methods = list(self.methods)
        defaults = _DEFAULTS[self.benchmark]
        for key in ("budget", "pilot_n", "repetitions", "analytic_flow", "analytic_gradient", "model_as_encoder"):
            if getattr(self, key) is None:
                setattr(self, key, defaults.get(key, False))
        if int(self.repetitions) < 1:
            raise ParameterError("repetitions must be >= 1")
        if any(m != "mc" for m in self.methods) and int(self.pilot_n) < 2:
            raise ParameterError("multifidelity methods need pilot_n >= 2")
        if self.benchmark == "external" and not self.external:
            raise ParameterError("external benchmark needs an 'external' factory 'module:function'")
        if self.workers < 1:
            raise ParameterError("workers must be >= 1")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ParameterError(f"unknown config keys: {unknown}")
        return cls(**d)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(
            r=self.r, analytic_flow=bool(self.analytic_flow), analytic_gradient=bool(self.analytic_gradient),
            model_as_encoder=bool(self.model_as_encoder), reuse_pilot=self.reuse_pilot,
            flow_kind=self.flow_kind, epochs=self.epochs, flow_epochs=self.flow_epochs,
            trials=self.trials, w=self.w,
        )


def load_config(path: str) -> RunConfig:
    """Read a JSON run configuration."""
    with open(path, encoding="utf-8") as fh:
        return RunConfig.from_dict(json.load(fh))


def build_models(cfg: RunConfig) -> tuple[ModelSpec, ModelSpec]:
    if cfg.benchmark == "theoretical":
        from .benchmarks.theoretical import W_COST, theoretical_models

        return theoretical_models(cfg.w if cfg.w is not None else W_COST)
    if cfg.benchmark == "analytic":
        from .benchmarks.analytic import W_COST, analytic_pair

        pair = analytic_pair(cfg.w if cfg.w is not None else W_COST)
        return pair.hf, pair.lf
    if cfg.benchmark == "reaction_diffusion":
        from .benchmarks.reaction_diffusion import DEFAULT_IC_SEED, W_COST, rd_models

        seed_ic = DEFAULT_IC_SEED if cfg.ic_seed is None else cfg.ic_seed
        return rd_models(seed_ic, w=cfg.w if cfg.w is not None else W_COST)
    module, _, name = cfg.external.partition(":")
    factory = getattr(importlib.import_module(module), name)
    hf, lf = factory()
    return hf, lf


def run_repetition(cfg_dict: dict[str, Any], rep: int) -> dict[str, Any]:
    """All configured methods for one repetition; errors are recorded, not raised."""
    cfg = RunConfig.from_dict(cfg_dict)
    hf, lf = build_models(cfg)
    pcfg = cfg.pipeline_config()
    rep_seed = derive_seed(cfg.seed, "repetition", rep)
    est_seed = derive_seed(rep_seed, "estimate")
    out: dict[str, Any] = {}
    for method in cfg.methods:
        try:
            if method == "mc":
                report = pipeline_mc(hf, cfg.budget, est_seed)
            elif method == "mfmc":
                report = pipeline_mfmc(hf, lf, cfg.pilot_n, cfg.budget, rep_seed, pcfg, est_seed)
            elif method == "mfmc_as":
                report = pipeline_mfmc_as(hf, lf, cfg.pilot_n, cfg.budget, rep_seed, pcfg, est_seed)
            else:
                report = pipeline_mfmc_ae(hf, lf, cfg.pilot_n, cfg.budget, rep_seed, pcfg, est_seed)
            out[method] = {"status": "ok", "report": report.to_dict()}
        except (MfshareError, ArithmeticError, ValueError) as exc:
            log.warning("repetition %d, %s failed: %s", rep, method, exc)
            out[method] = {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}
    return out


def density_rows(mean: float, std: float, points: int = DENSITY_POINTS) -> list[tuple[float, float, str]]:
    """Normal density on ``mean +- 4 std``; a zero std gives one flagged spike row."""
    if std < 0 or not math.isfinite(std):
        raise ParameterError("standard deviation must be finite and non-negative")
    if std == 0.0:
        return [(float(mean), math.inf, "degenerate")]
    xs = np.linspace(mean - DENSITY_SPAN * std, mean + DENSITY_SPAN * std, points)
    pdf = np.exp(-0.5 * ((xs - mean) / std) ** 2) / (std * math.sqrt(2.0 * math.pi))
    return [(float(x), float(p), "") for x, p in zip(xs, pdf)]


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    wr.writerows(rows)
    return buf.getvalue()


def _fmt(x) -> str:
    return repr(float(x))


def summarize(cfg: RunConfig, results: list[dict[str, Any]]) -> dict[str, Any]:
    methods: dict[str, Any] = {}
    for method in cfg.methods:
        ok = [(i, r[method]["report"]) for i, r in enumerate(results) if r[method]["status"] == "ok"]
        errors = [{"repetition": i, "error": r[method]["error"]}
                  for i, r in enumerate(results) if r[method]["status"] != "ok"]
        est = np.array([rep["estimate"] for _, rep in ok])
        mean = float(np.mean(est)) if est.size else math.nan
        std = float(np.std(est, ddof=1)) if est.size > 1 else 0.0
        corr = [{"repetition": i, "rho": rep["provenance"].get("pilot_rho"),
                 "rho_original": rep["provenance"].get("rho_original")}
                for i, rep in ok if method != "mc"]
        methods[method] = {"mean": mean, "std": std, "n_ok": len(ok), "n_failed": len(errors),
                           "errors": errors, "density": {"mean": mean, "std": std},
                           "correlations": corr}
    return {
        "config": cfg.to_dict(),
        "methods": methods,
        "budget_accounting": "pilot, surrogate, autoencoder and flow training costs are excluded from the budget",
        "search_trials": cfg.trials,
    }


def write_outputs(cfg: RunConfig, results: list[dict[str, Any]], out_dir: str) -> dict[str, Any]:
    os.makedirs(out_dir, exist_ok=True)
    summary = summarize(cfg, results)
    files: dict[str, str] = {}
    for method in cfg.methods:
        rows = []
        for i, r in enumerate(results):
            entry = r[method]
            if entry["status"] == "ok":
                rep = entry["report"]
                vals = [rep["method"], rep["qoi"], _fmt(rep["estimate"]), _fmt(rep["rho"]), _fmt(rep["beta"]),
                        str(rep["n_hf"]), str(rep["n_lf"]), _fmt(rep["halfwidth"]), str(rep["seed"])]
                rows.append([cfg.seed, i, "ok", *vals])
            else:
                rows.append([cfg.seed, i, "failed", method, "", "", "", "", "", "", "", ""])
        files[f"estimates_{method}.csv"] = _csv_text(["master_seed", "repetition", "status", *CSV_COLUMNS], rows)
        m = summary["methods"][method]
        dens = density_rows(m["mean"], m["std"]) if m["n_ok"] else []
        files[f"density_{method}.csv"] = _csv_text(
            ["master_seed", "repetitions", "x", "pdf", "flag"],
            [[cfg.seed, m["n_ok"], _fmt(x), _fmt(p), flag] for x, p, flag in dens])
        if method != "mc":
            crow = [[cfg.seed, c["repetition"],
                     "" if c["rho_original"] is None else _fmt(c["rho_original"]),
                     "" if c["rho"] is None else _fmt(c["rho"])] for c in m["correlations"]]
            files[f"correlation_{method}.csv"] = _csv_text(
                ["master_seed", "repetition", "rho_original", "rho_modified"], crow)
    files["summary.json"] = json.dumps(summary, indent=2, sort_keys=True, allow_nan=True) + "\n"
    for name, text in files.items():
        with open(os.path.join(out_dir, name), "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return summary


def run(cfg: RunConfig, out_dir: str | None = None) -> dict[str, Any]:
    """Run every repetition (in parallel when ``cfg.workers > 1``) and write the report files."""
    out_dir = out_dir or cfg.out
    cfg_dict = cfg.to_dict()
    reps = range(int(cfg.repetitions))
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(run_repetition, [cfg_dict] * len(reps), reps))
    else:
        results = [run_repetition(cfg_dict, i) for i in reps]
    return write_outputs(cfg, results, out_dir)


def regenerate_report(run_dir: str) -> dict[str, Any]:
    """Rewrite the density files of an existing run directory from its summary."""
    with open(os.path.join(run_dir, "summary.json"), encoding="utf-8") as fh:
        summary = json.load(fh)
    seed = summary["config"]["seed"]
    for method, m in summary["methods"].items():
        dens = density_rows(m["mean"], m["std"]) if m["n_ok"] else []
        text = _csv_text(["master_seed", "repetitions", "x", "pdf", "flag"],
                         [[seed, m["n_ok"], _fmt(x), _fmt(p), flag] for x, p, flag in dens])
        with open(os.path.join(run_dir, f"density_{method}.csv"), "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return summary
