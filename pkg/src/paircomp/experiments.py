"""Monte-Carlo experiments: convergence curves, existence sweeps, selection batches.

Every row owns an RNG stream seeded with
``derive_seed(base_seed, kind, n_index, cell_index, replication)`` so any row
can be recomputed alone (:func:`rerun_row`) and output never depends on the
number of workers.  Rows are sorted by cell and replication before writing,
floats are written with ``repr`` and quartiles use linear interpolation
between order statistics (numpy's default, "type 7").
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import partial
from multiprocessing import get_context
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np
from threadpoolctl import threadpool_limits

from .estimator import FitOptions, fit_newton, linf_error
from .existence import check_condition1
from .models import ModelError, make_model
from .selection import CandidateModel, compare_models
from .simulate import RNG_SCHEME, derive_seed, generate_dataset, generate_graph, generate_scores, make_rng
from .theory import schedule

KINDS = ("convergence", "dynamic_range", "selection", "existence_sweep")
_KIND_CODE = {k: c for c, k in enumerate(KINDS, start=1)}
REGIMES = ("dense", "mid", "sparse", "connectivity", "explicit")
M_RULES = ("fixed", "half_loglog", "two_loglog")
SCORE_CONVENTION = "u_i ~ Uniform[-M/2, M/2] i.i.d., shifted so that u_1 = 0"


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    kind: str
    n: list[int]
    model: dict = field(default_factory=lambda: {"name": "davidson", "params": {"theta": 1.0}})
    regime: str = "sparse"
    p: float | None = None
    p_grid: list[float] | None = None
    M_rule: str = "fixed"
    M_rules: list[str] | None = None
    M: float = 1.0
    T: int = 1
    replications: int = 30
    seed: int = 0
    workers: int = 1
    out: str | None = None
    candidates: list[dict] | None = None
    loocv: bool = True

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ExperimentConfig":
        d = dict(d)
        if "replications" not in d and "R" in d:
            d["replications"] = d.pop("R")
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s) {unknown}")
        if "kind" not in d or "n" not in d:
            raise ConfigError("config needs 'kind' and 'n'")
        if isinstance(d["n"], int):
            d["n"] = [d["n"]]
        if isinstance(d.get("model"), str):
            d["model"] = {"name": d["model"], "params": {}}
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path: str | os.PathLike) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(data)

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if not self.n or any(int(v) != v or v < 3 for v in self.n):
            raise ConfigError("n values must be integers >= 3")
        self.n = [int(v) for v in self.n]
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.regime not in REGIMES:
            raise ConfigError(f"unknown regime {self.regime!r}")
        if self.regime == "explicit" and self.kind != "existence_sweep":
            if self.p is None or not 0 <= self.p <= 1:
                raise ConfigError("explicit regime needs p in [0, 1]")
        for rule in [self.M_rule] + list(self.M_rules or []):
            if rule not in M_RULES:
                raise ConfigError(f"unknown M rule {rule!r}")
        if self.regime != "explicit" and self.kind in ("convergence", "existence_sweep"):
            for v in self.n:
                if self.kind == "convergence" and self.p_for(v) > 1:
                    raise ConfigError(f"regime {self.regime!r} gives p = {self.p_for(v):.3g} > 1 at n = {v}")
        if self.kind == "existence_sweep":
            if not self.p_grid or any(not 0 <= q <= 1 for q in self.p_grid):
                raise ConfigError("existence_sweep needs p_grid values in [0, 1]")
        if self.kind == "selection":
            if self.p is None or not 0 < self.p <= 1:
                raise ConfigError("selection needs p in (0, 1]")
            if self.candidates is not None and len(self.candidates) < 2:
                raise ConfigError("selection needs at least two candidates")
        try:
            make_model(self.model)
            for c in self.candidate_specs():
                CandidateModel.from_spec(c)
        except (ModelError, KeyError, ValueError) as exc:
            raise ConfigError(f"bad model spec: {exc}") from None

    def candidate_specs(self) -> list[dict]:
        if self.kind != "selection":
            return []
        return self.candidates or [{"name": "general_bt_bo3"}, {"name": "clm4"}]

    def p_for(self, n: int) -> float:
        if self.regime == "explicit":
            return float(self.p)
        return schedule(n).p(self.regime)

    def M_for(self, n: int, rule: str | None = None) -> float:
        rule = rule or self.M_rule
        if rule == "fixed":
            return float(self.M)
        return schedule(n).M(rule)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ExperimentResult:
    kind: str
    rows: list[dict]
    summary: list[dict]
    columns: list[str]
    summary_columns: list[str]
    config: ExperimentConfig
    extra: dict = field(default_factory=dict)

    def write(self, out_dir: str | os.PathLike) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"rows": out / "rows.csv", "summary": out / "summary.csv",
                 "config": out / "config_echo.json"}
        paths["rows"].write_text(_csv_text(self.rows, self.columns))
        paths["summary"].write_text(_csv_text(self.summary, self.summary_columns))
        echo = {"config": self.config.to_dict(), "rng": RNG_SCHEME, "score_generation": SCORE_CONVENTION,
                "quartiles": "linear interpolation (type 7)", **self.extra}
        echo["config"].pop("workers", None)
        echo["config"].pop("out", None)
        paths["config"].write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n")
        return paths


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    return str(v)


def _csv_text(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def quartiles(values) -> tuple[float, float, float]:
    v = np.asarray([x for x in values if x is not None and not math.isnan(x)], dtype=float)
    if v.size == 0:
        return math.nan, math.nan, math.nan
    q = np.percentile(v, [25, 50, 75])
    return float(q[0]), float(q[1]), float(q[2])


# -- worker tasks (top level so that spawned workers can import them) ------------

def row_seed(cfg: ExperimentConfig, n_index: int, cell: int, rep: int) -> int:
    return derive_seed(cfg.seed, _KIND_CODE[cfg.kind], n_index, cell, rep)


def _fit_task(task: dict) -> dict:
    model = make_model(task["model"])
    rng = make_rng(task["seed"])
    n, p, M = task["n"], task["p"], task["M"]
    u = generate_scores(n, M, rng)
    graph = generate_graph(n, p, task["T"], rng)
    ds = generate_dataset(u, graph, model, rng)
    row = {k: task[k] for k in ("cell", "n", "p", "M", "M_rule", "replication", "seed")}
    row.update(records=len(ds), linf_error=math.nan, iterations=0)
    if len(ds) == 0:
        row["status"] = "nonexistent_blocked"
        return row
    res = fit_newton(ds, model, FitOptions())
    row["status"] = res.status
    row["iterations"] = res.iterations
    if res.converged:
        row["linf_error"] = linf_error(res.estimate, u)
    return row


def _existence_task(task: dict) -> dict:
    model = make_model(task["model"])
    rng = make_rng(task["seed"])
    n, p = task["n"], task["p"]
    u = generate_scores(n, task["M"], rng)
    ds = generate_dataset(u, generate_graph(n, p, task["T"], rng), model, rng)
    row = {k: task[k] for k in ("cell", "n", "p", "M", "replication", "seed")}
    row["records"] = len(ds)
    row["holds"] = bool(check_condition1(ds, True, model).holds) if n >= 2 else False
    return row


def _selection_task(task: dict) -> dict:
    gen = make_model(task["model"])
    rng = make_rng(task["seed"])
    n, p = task["n"], task["p"]
    u = generate_scores(n, task["M"], rng)
    ds = generate_dataset(u, generate_graph(n, p, task["T"], rng), gen, rng)
    row = {k: task[k] for k in ("cell", "n", "p", "M", "replication", "seed")}
    row["records"] = len(ds)
    cands = [CandidateModel.from_spec(c) for c in task["candidates"]]
    if not check_condition1(ds, True, gen).holds:
        row["status"] = "nonexistent_blocked"
        return row
    rep = compare_models(ds, cands, with_loocv=task["loocv"])
    row["status"] = "ok"
    for r in rep.rows:
        for key in ("aic", "bic", "loocv", "loocv_skipped"):
            row[f"{r.name}.{key}"] = getattr(r, key)
        for name, val in r.thresholds.items():
            row[f"{r.name}.{name}"] = val
        if not r.ok:
            row[f"{r.name}.error"] = r.error
    for crit, name in rep.winners.items():
        row[f"winner.{crit}"] = name
    return row


def _one_thread(fn: Callable[[dict], dict], task: dict) -> dict:
    # LAPACK results can depend on the BLAS thread count, so every task runs
    # single-threaded whether it is executed in-process or in a worker
    with threadpool_limits(limits=1):
        return fn(task)


def _run_tasks(fn: Callable[[dict], dict], tasks: list[dict], workers: int) -> list[dict]:
    call = partial(_one_thread, fn)
    if workers <= 1 or len(tasks) <= 1:
        rows = [call(t) for t in tasks]
    else:
        # results are keyed by task order, so scheduling cannot leak into the output
        ctx = get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            rows = list(pool.map(call, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    return sorted(rows, key=lambda r: (r["cell"], r["replication"]))


def _base_task(cfg: ExperimentConfig, cell: int, n_index: int, n: int, p: float, M: float,
               rep: int, **extra) -> dict:
    return {"cell": cell, "n": n, "p": p, "M": M, "T": cfg.T, "replication": rep,
            "seed": row_seed(cfg, n_index, cell, rep), "model": dict(cfg.model), **extra}


_FIT_COLUMNS = ["cell", "n", "p", "M", "M_rule", "replication", "seed", "records", "linf_error",
                "iterations", "status"]
_FIT_SUMMARY = ["n", "p", "M", "M_rule", "replications", "converged", "nonexistence_fraction",
                "q1", "median", "q3"]


def _fit_summary(rows: list[dict]) -> list[dict]:
    out = []
    for cell in sorted({r["cell"] for r in rows}):
        rs = [r for r in rows if r["cell"] == cell]
        ok = [r["linf_error"] for r in rs if r["status"] == "converged"]
        bad = sum(r["status"] in ("nonexistent_blocked", "diverged") for r in rs)
        q1, med, q3 = quartiles(ok)
        first = rs[0]
        out.append({"cell": cell, "n": first["n"], "p": first["p"], "M": first["M"],
                    "M_rule": first["M_rule"], "replications": len(rs), "converged": len(ok),
                    "nonexistence_fraction": bad / len(rs), "q1": q1, "median": med, "q3": q3})
    return out


def run_convergence(cfg: ExperimentConfig) -> ExperimentResult:
    """One cell per ``n`` at the configured sparsity regime and M rule."""
    tasks = []
    for k, n in enumerate(cfg.n):
        p, M = cfg.p_for(n), cfg.M_for(n)
        tasks += [_base_task(cfg, k, k, n, p, M, r, M_rule=cfg.M_rule) for r in range(cfg.replications)]
    rows = _run_tasks(_fit_task, tasks, cfg.workers)
    return ExperimentResult("convergence", rows, _fit_summary(rows), _FIT_COLUMNS, _FIT_SUMMARY, cfg)


def run_dynamic_range(cfg: ExperimentConfig) -> ExperimentResult:
    """One cell per ``(n, M rule)``; ``p`` defaults to the dense value 1/2."""
    rules = cfg.M_rules or list(M_RULES)
    tasks = []
    cell = 0
    for k, n in enumerate(cfg.n):
        p = cfg.p_for(n) if cfg.regime == "explicit" else 0.5
        for rule in rules:
            M = cfg.M_for(n, rule)
            tasks += [_base_task(cfg, cell, k, n, p, M, r, M_rule=rule) for r in range(cfg.replications)]
            cell += 1
    rows = _run_tasks(_fit_task, tasks, cfg.workers)
    return ExperimentResult("dynamic_range", rows, _fit_summary(rows), _FIT_COLUMNS, _FIT_SUMMARY, cfg)


def run_existence_sweep(cfg: ExperimentConfig) -> ExperimentResult:
    tasks = []
    cell = 0
    for k, n in enumerate(cfg.n):
        for p in cfg.p_grid:
            M = cfg.M_for(n)
            tasks += [_base_task(cfg, cell, k, n, float(p), M, r) for r in range(cfg.replications)]
            cell += 1
    rows = _run_tasks(_existence_task, tasks, cfg.workers)
    summary = []
    for cell in sorted({r["cell"] for r in rows}):
        rs = [r for r in rows if r["cell"] == cell]
        frac = sum(r["holds"] for r in rs) / len(rs)
        summary.append({"n": rs[0]["n"], "p": rs[0]["p"], "M": rs[0]["M"], "replications": len(rs),
                        "fraction_holds": frac,
                        "std_error": math.sqrt(frac * (1 - frac) / len(rs))})
    cols = ["cell", "n", "p", "M", "replication", "seed", "records", "holds"]
    scols = ["n", "p", "M", "replications", "fraction_holds", "std_error"]
    return ExperimentResult("existence_sweep", rows, summary, cols, scols, cfg)


def run_selection_batch(cfg: ExperimentConfig) -> ExperimentResult:
    """Replicated model comparison with data drawn from ``cfg.model``."""
    specs = cfg.candidate_specs()
    names = [CandidateModel.from_spec(c).name for c in specs]
    generator = make_model(cfg.model).name
    tasks = []
    for k, n in enumerate(cfg.n):
        M = cfg.M_for(n)
        tasks += [_base_task(cfg, k, k, n, float(cfg.p), M, r, candidates=specs, loocv=cfg.loocv)
                  for r in range(cfg.replications)]
    rows = _run_tasks(_selection_task, tasks, cfg.workers)
    crits = ("aic", "bic", "loocv") if cfg.loocv else ("aic", "bic")
    cols = ["cell", "n", "p", "M", "replication", "seed", "records", "status"]
    for nm in names:
        cols += [f"{nm}.{c}" for c in crits] + ([f"{nm}.loocv_skipped"] if cfg.loocv else [])
        spec = next(s for s in specs if CandidateModel.from_spec(s).name == nm)
        cols += [f"{nm}.{t}" for t in CandidateModel.from_spec(spec).free]
    cols += [f"winner.{c}" for c in crits]
    summary = []
    for cell in sorted({r["cell"] for r in rows}):
        rs = [r for r in rows if r["cell"] == cell and r["status"] == "ok"]
        base = {"n": cfg.n[cell], "p": cfg.p, "generator": generator, "replications": len(rs)}
        for nm in names:
            srow = dict(base, candidate=nm)
            for c in crits:
                vals = [r.get(f"{nm}.{c}") for r in rs]
                vals = [v for v in vals if v is not None and math.isfinite(v)]
                srow[f"mean_{c}"] = float(np.mean(vals)) if vals else math.nan
                srow[f"win_rate_{c}"] = (sum(r.get(f"winner.{c}") == nm for r in rs) / len(rs)
                                         if rs else math.nan)
            summary.append(srow)
    scols = ["n", "p", "generator", "candidate", "replications"]
    scols += [f"mean_{c}" for c in crits] + [f"win_rate_{c}" for c in crits]
    extra = {"generator": generator, "candidates": specs}
    return ExperimentResult("selection", rows, summary, cols, scols, cfg, extra)


RUNNERS = {
    "convergence": run_convergence,
    "dynamic_range": run_dynamic_range,
    "selection": run_selection_batch,
    "existence_sweep": run_existence_sweep,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    return RUNNERS[cfg.kind](cfg)


def rerun_row(cfg: ExperimentConfig, row: Mapping[str, Any]) -> dict:
    """Recompute a single row from its recorded seed and cell parameters."""
    task = {"cell": int(row["cell"]), "n": int(row["n"]), "p": float(row["p"]), "M": float(row["M"]),
            "T": cfg.T, "replication": int(row["replication"]), "seed": int(row["seed"]),
            "model": dict(cfg.model)}
    if cfg.kind in ("convergence", "dynamic_range"):
        return _one_thread(_fit_task, dict(task, M_rule=row["M_rule"]))
    if cfg.kind == "existence_sweep":
        return _one_thread(_existence_task, task)
    return _one_thread(_selection_task, dict(task, candidates=cfg.candidate_specs(), loocv=cfg.loocv))
