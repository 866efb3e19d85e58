"""Choosing among link models: AIC, BIC and leave-one-out cross-entropy."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

import numpy as np
from scipy import optimize
from scipy.sparse import csr_matrix

from .dataset import ComparisonDataset
from .estimator import CONVERGED, FitOptions, FitResult, _ReducedPattern, fit_newton, log_likelihood
from .existence import _vanishes, check_condition1, defeat_digraph
from .models import LinkModel, make_model

LOOCV_WARM_ITERATIONS = 25
_PARAM_XTOL = 1e-10
_PARAM_STOP = 1e-8


@dataclass(frozen=True)
class CandidateModel:
    """A link model plus the parameters to estimate alongside the scores."""

    model: LinkModel
    free: tuple[str, ...] = ()
    label: str | None = None

    def __post_init__(self):
        unknown = [p for p in self.free if p not in self.model.param_bounds]
        if unknown:
            raise ValueError(f"{self.model.name} has no parameter(s) {unknown}")

    @classmethod
    def from_spec(cls, spec: Mapping[str, Any] | str) -> "CandidateModel":
        """``{"name", "params", "free"}``; ``free`` defaults to every parameter."""
        if isinstance(spec, str):
            spec = {"name": spec}
        model = make_model({"name": spec["name"], "params": spec.get("params", {})})
        free = spec.get("free")
        if free is None:
            free = tuple(model.param_bounds)
        return cls(model, tuple(free), spec.get("label"))

    @property
    def name(self) -> str:
        return self.label or self.model.name

    def parameter_count(self, n: int) -> int:
        return (n - 1) + len(self.free)


@dataclass
class ThresholdFit:
    fit: FitResult
    model: LinkModel
    thresholds: dict[str, float]
    sweeps: int
    history: list[float] = field(default_factory=list)


def information_criteria(dataset: ComparisonDataset, fit: FitResult, k: int) -> tuple[float, float]:
    """``AIC = 2k - 2l``, ``BIC = k log m - 2l`` with ``m`` records."""
    if not fit.converged:
        raise ValueError(f"information criteria need a converged fit (status {fit.status})")
    m = len(dataset)
    ll = float(fit.log_likelihood)
    return 2.0 * k - 2.0 * ll, k * math.log(m) - 2.0 * ll


def _to_free(val: float, lo: float) -> float:
    return math.log(val - lo) if math.isfinite(lo) else val


def _from_free(z: float, lo: float) -> float:
    return lo + math.exp(z) if math.isfinite(lo) else z


def _profile_param(dataset, model: LinkModel, v, name: str, width: float = 3.0) -> LinkModel:
    """Maximise ``l`` over one parameter with the scores held at ``v``."""
    lo, hi = model.param_bounds[name]
    z0 = _to_free(model.params[name], lo)

    def negll(z):
        val = _from_free(z, lo)
        if not val < hi:
            return math.inf
        return -log_likelihood(dataset, model.with_params(**{name: val}), v)

    a, b = z0 - width, z0 + width
    for _ in range(20):
        res = optimize.minimize_scalar(negll, bounds=(a, b), method="bounded",
                                       options={"xatol": _PARAM_XTOL})
        z = float(res.x)
        # an optimum pinned at the bracket edge means the bracket was too narrow
        if b - z > 1e-6 and z - a > 1e-6:
            break
        a, b = z - 2 * width, z + 2 * width
    best = _from_free(z, lo)
    if negll(z) > negll(z0):
        best = model.params[name]
    return model.with_params(**{name: best})


def fit_with_thresholds(dataset: ComparisonDataset, candidate: CandidateModel,
                        opts: FitOptions | None = None, max_sweeps: int = 200,
                        v0=None) -> ThresholdFit:
    """Coordinate ascent between the scores and the free parameters.

    Each sweep refits the scores by Newton with the parameters fixed, then
    maximises the likelihood over each free parameter in turn with bounded
    Brent searches.  Stops when a sweep moves no parameter by more than
    ``1e-8`` (on the log scale for bounded-below parameters) and the score
    fit has converged.
    """
    opts = opts or FitOptions()
    model = candidate.model
    fit = fit_newton(dataset, model, opts, v0)
    history = [fit.log_likelihood]
    sweeps = 0
    if candidate.free and fit.status == CONVERGED:
        for sweeps in range(1, max_sweeps + 1):
            moved = 0.0
            for name in candidate.free:
                lo = model.param_bounds[name][0]
                new = _profile_param(dataset, model, fit.estimate, name)
                moved = max(moved, abs(_to_free(new.params[name], lo) - _to_free(model.params[name], lo)))
                model = new
            fit = fit_newton(dataset, model, replace(opts, precheck=False), fit.estimate)
            history.append(fit.log_likelihood)
            if fit.status != CONVERGED or moved <= _PARAM_STOP:
                break
    fit.params = dict(model.params)
    thresholds = {k: float(model.params[k]) for k in candidate.free}
    return ThresholdFit(fit, model, thresholds, sweeps, history)


def _loo_skippable(dataset: ComparisonDataset, tie_edges: bool, model: LinkModel):
    """Per-record skip flags for leave-one-out.

    A record is skipped when either of its subjects would be left without
    comparisons, or when dropping it breaks the existence condition.  The
    condition can only break when the record is the sole support of a defeat
    edge ``s -> t``, and even then it survives whenever some two-step path
    ``s -> w -> t`` exists (such a path avoids both edges between ``s`` and
    ``t``).  Only the remaining records get a full recheck.
    """
    n, i, j, x = dataset.n, dataset.i, dataset.j, dataset.x
    deg = dataset.degrees()
    skip = (deg[i] < 2) | (deg[j] < 2)
    g = defeat_digraph(dataset, tie_edges, model)
    fwd = _vanishes(model, x, -1.0)
    back = _vanishes(model, x, +1.0)
    if not tie_edges:
        fwd &= x != 0
        back &= x != 0
    key_f, key_b = i * n + j, j * n + i
    keys, counts = np.unique(np.concatenate([key_f[fwd], key_b[back]]), return_counts=True)
    adj = csr_matrix((np.ones(g.src.size), (g.src, g.dst)), shape=(n, n))
    two = (adj @ adj).tocoo()
    detour = np.unique(two.row.astype(np.int64) * n + two.col)

    def fragile(mask, key):
        sole = np.isin(key, keys[counts == 1])
        return mask & sole & ~np.isin(key, detour)

    suspect = (fragile(fwd, key_f) | fragile(back, key_b)) & ~skip
    keep = np.ones(len(dataset), dtype=bool)
    for r in np.flatnonzero(suspect):
        keep[r] = False
        if not check_condition1(dataset.subset(keep), tie_edges, model).holds:
            skip[r] = True
        keep[r] = True
    return skip


@dataclass
class LoocvResult:
    mean_error: float
    skipped: int
    errors: np.ndarray
    skip_mask: np.ndarray

    def __iter__(self):
        # unpacks as (mean error, skip count)
        yield self.mean_error
        yield self.skipped


def loocv(dataset: ComparisonDataset, candidate: CandidateModel | LinkModel,
          opts: FitOptions | None = None, *, model: LinkModel | None = None,
          full_fit: FitResult | None = None, exact: bool = False) -> LoocvResult:
    """Leave-one-out cross-entropy ``-log f(x_r; u_i - u_j)`` of held-out records.

    Free parameters are estimated once on the full data and then frozen; the
    held-out refits only move the scores.  Refits warm-start from the full
    optimum and are capped at 25 Newton iterations unless ``exact`` is set,
    in which case every refit runs cold from zero to full convergence.
    """
    opts = opts or FitOptions()
    if isinstance(candidate, LinkModel):
        candidate = CandidateModel(candidate)
    if model is None or full_fit is None:
        tf = fit_with_thresholds(dataset, candidate, opts)
        model, full_fit = tf.model, tf.fit
    if not full_fit.converged:
        raise ValueError(f"full-data fit did not converge (status {full_fit.status})")
    skip = _loo_skippable(dataset, opts.tie_edges, model)
    if skip.all():
        raise ValueError("every record was skipped")
    refit_opts = replace(opts, precheck=False)
    if not exact:
        refit_opts = replace(refit_opts, max_iterations=LOOCV_WARM_ITERATIONS)
    pattern = _ReducedPattern(dataset)
    weights = np.ones(len(dataset))
    errors = np.full(len(dataset), np.nan)
    for r in np.flatnonzero(~skip):
        weights[r] = 0.0
        res = fit_newton(dataset, model, refit_opts, None if exact else full_fit.estimate,
                         weights=weights, _pattern=pattern)
        weights[r] = 1.0
        v = res.estimate
        a, b = dataset.i[r], dataset.j[r]
        errors[r] = -float(model.logpdf(dataset.x[r], v[a] - v[b]))
    used = errors[~skip]
    return LoocvResult(float(np.mean(used)), int(skip.sum()), errors, skip)


@dataclass
class CandidateRow:
    name: str
    spec: dict
    status: str
    log_likelihood: float = math.nan
    k: int = 0
    aic: float = math.nan
    bic: float = math.nan
    loocv: float = math.nan
    loocv_skipped: int = 0
    thresholds: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        for key in ("log_likelihood", "aic", "bic", "loocv"):
            if not math.isfinite(d[key]):
                d[key] = None
        return d


@dataclass
class SelectionReport:
    rows: list[CandidateRow]
    winners: dict[str, str | None]
    m: int
    n: int

    def row(self, name: str) -> CandidateRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"n": self.n, "m": self.m, "winners": dict(self.winners),
                "candidates": [r.to_dict() for r in self.rows]}

    def table(self) -> str:
        head = f"{'model':<18}{'k':>6}{'logL':>14}{'AIC':>14}{'BIC':>14}{'LOOCV':>10}{'skip':>6}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            if not r.ok:
                lines.append(f"{r.name:<18}  unfit: {r.error}")
                continue
            lines.append(f"{r.name:<18}{r.k:>6}{r.log_likelihood:>14.4f}{r.aic:>14.4f}"
                         f"{r.bic:>14.4f}{r.loocv:>10.4f}{r.loocv_skipped:>6}")
        lines.append("winners: " + ", ".join(f"{k}={v}" for k, v in self.winners.items()))
        return "\n".join(lines)


def _winner(rows: Sequence[CandidateRow], key: str) -> str | None:
    best, name = math.inf, None
    for r in rows:
        val = getattr(r, key)
        if r.ok and math.isfinite(val) and val < best:
            best, name = val, r.name
    return name


def compare_models(dataset: ComparisonDataset, candidates: Sequence[CandidateModel],
                   opts: FitOptions | None = None, *, with_loocv: bool = True,
                   exact_loocv: bool = False) -> SelectionReport:
    if len(candidates) < 2:
        raise ValueError("model comparison needs at least two candidates")
    opts = opts or FitOptions()
    rows = []
    for cand in candidates:
        spec = {**cand.model.to_spec(), "free": list(cand.free)}
        try:
            tf = fit_with_thresholds(dataset, cand, opts)
            if not tf.fit.converged:
                raise ValueError(f"fit status {tf.fit.status}")
            k = cand.parameter_count(dataset.n)
            aic, bic = information_criteria(dataset, tf.fit, k)
            row = CandidateRow(cand.name, spec, tf.fit.status, tf.fit.log_likelihood, k, aic, bic,
                               thresholds=tf.thresholds)
            if with_loocv:
                lo = loocv(dataset, cand, opts, model=tf.model, full_fit=tf.fit, exact=exact_loocv)
                row.loocv, row.loocv_skipped = lo.mean_error, lo.skipped
        except (ValueError, ArithmeticError) as exc:
            row = CandidateRow(cand.name, spec, "unfit", error=str(exc))
        rows.append(row)
    winners = {c: _winner(rows, c) for c in ("aic", "bic", "loocv")}
    return SelectionReport(rows, winners, len(dataset), dataset.n)
