"""Maximum likelihood for latent scores with subject 0 anchored at 0.

The log-likelihood ``l(v) = sum_r log f(x_r; v_i - v_j)`` has gradient
``sum_r g_r (e_i - e_j)`` and Hessian equal to minus a weighted graph
Laplacian with edge weights ``-g2_r > 0``.  Dropping the anchored coordinate
leaves a positive definite system whenever the comparison graph is connected,
so Newton directions come from Jacobi-preconditioned conjugate gradients on a
sparse matrix with one nonzero pair per compared pair (small systems are
factorised densely instead).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.sparse import coo_matrix, csr_matrix, diags
from scipy.sparse.linalg import cg

from .dataset import ComparisonDataset
from .existence import check_condition1
from .models import LinkModel, make_model

CONVERGED = "converged"
MAX_ITERATIONS = "max_iterations"
DIVERGED = "diverged"
BLOCKED = "nonexistent_blocked"
STATUSES = (CONVERGED, MAX_ITERATIONS, DIVERGED, BLOCKED)

# below this predicted increase the gain is at rounding level and the
# sufficient-increase test is replaced by a no-loss test
_NEGLIGIBLE_GAIN = 1e-10
_NO_LOSS_SLACK = 1e-9


@dataclass(frozen=True)
class FitOptions:
    tol: float = 1e-8
    max_iterations: int = 200
    divergence_bound: float = 50.0
    backtrack: float = 0.5
    sufficient_increase: float = 1e-4
    cg_rtol: float = 1e-10
    precheck: bool = True
    # a point only counts as converged once the Newton step is this small;
    # a vanishing gradient alone also happens along escape directions
    step_tol: float = 1e-4
    max_halvings: int = 60
    tie_edges: bool = True

    def __post_init__(self):
        if not (self.tol > 0 and self.cg_rtol > 0 and self.step_tol > 0):
            raise ValueError("tolerances must be positive")
        if not (0 < self.backtrack < 1 and 0 < self.sufficient_increase < 1):
            raise ValueError("line-search factors must lie in (0, 1)")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be nonnegative")


@dataclass
class FitResult:
    estimate: np.ndarray
    log_likelihood: float
    grad_inf_norm: float
    iterations: int
    status: str
    solver: str = "newton"
    history: list[float] = field(default_factory=list)
    params: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    def to_dict(self) -> dict:
        return {
            "estimate": [float(v) for v in self.estimate],
            "log_likelihood": float(self.log_likelihood),
            "grad_inf_norm": float(self.grad_inf_norm),
            "iterations": int(self.iterations),
            "status": self.status,
            "solver": self.solver,
            "params": dict(self.params),
        }


def _check_dim(dataset: ComparisonDataset, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (dataset.n,):
        raise ValueError(f"score vector has shape {v.shape}, expected ({dataset.n},)")
    return v


def record_log_terms(dataset, model, v) -> np.ndarray:
    v = _check_dim(dataset, v)
    return model.logpdf(dataset.x, v[dataset.i] - v[dataset.j])


def log_likelihood(dataset: ComparisonDataset, model: LinkModel, v) -> float:
    if len(dataset) == 0:
        _check_dim(dataset, v)
        return 0.0
    return float(np.sum(record_log_terms(dataset, model, v)))


def gradient(dataset: ComparisonDataset, model: LinkModel, v) -> np.ndarray:
    v = _check_dim(dataset, v)
    g = model.score(dataset.x, v[dataset.i] - v[dataset.j])
    return (np.bincount(dataset.i, weights=g, minlength=dataset.n)
            - np.bincount(dataset.j, weights=g, minlength=dataset.n))


def laplacian_weights(dataset, model, v) -> np.ndarray:
    v = _check_dim(dataset, v)
    return -model.score_slope(dataset.x, v[dataset.i] - v[dataset.j])


def _laplacian(n: int, i, j, w, drop_anchor: bool) -> csr_matrix:
    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([i, j, j, i])
    data = np.concatenate([w, w, -w, -w])
    if drop_anchor:
        keep = (rows > 0) & (cols > 0)
        rows, cols, data = rows[keep] - 1, cols[keep] - 1, data[keep]
        n -= 1
    return coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()


class _ReducedPattern:
    """CSR sparsity pattern of the reduced Laplacian, built once per fit.

    Records are grouped into distinct pairs; each Newton step only refills
    the nonzeros from per-pair weight sums instead of re-sorting a COO list.
    """

    def __init__(self, dataset: ComparisonDataset):
        n = dataset.n
        key = dataset.i * n + dataset.j
        pairs, self.pair_of = np.unique(key, return_inverse=True)
        self.pi, self.pj = np.divmod(pairs, n)
        self.n = n
        self.free = (self.pi > 0)
        off_r, off_c = self.pi[self.free] - 1, self.pj[self.free] - 1
        diag = np.arange(n - 1)
        rows = np.concatenate([diag, off_r, off_c])
        cols = np.concatenate([diag, off_c, off_r])
        slot = np.arange(rows.size, dtype=float) + 1.0
        mat = coo_matrix((slot, (rows, cols)), shape=(n - 1, n - 1)).tocsr()
        mat.sort_indices()
        self.order = mat.data.astype(np.int64) - 1
        self.matrix = mat

    def laplacian(self, w: np.ndarray) -> csr_matrix:
        pw = np.bincount(self.pair_of, weights=w, minlength=self.pi.size)
        deg = (np.bincount(self.pi, weights=pw, minlength=self.n)
               + np.bincount(self.pj, weights=pw, minlength=self.n))[1:]
        off = -pw[self.free]
        vals = np.concatenate([deg, off, off])
        mat = self.matrix.copy()
        mat.data = vals[self.order]
        return mat


def hessian(dataset: ComparisonDataset, model: LinkModel, v) -> csr_matrix:
    """Sparse ``n x n`` Hessian: ``H_ij = -sum g2`` off the diagonal, rows summing to 0."""
    w = laplacian_weights(dataset, model, v)
    return -_laplacian(dataset.n, dataset.i, dataset.j, w, drop_anchor=False)


def reduced_hessian(dataset, model, v) -> csr_matrix:
    """Hessian restricted to the free coordinates ``1..n-1``."""
    w = laplacian_weights(dataset, model, v)
    return -_laplacian(dataset.n, dataset.i, dataset.j, w, drop_anchor=True)


# below this many free coordinates a dense Cholesky solve beats CG, whose
# cost at small sizes is all per-iteration interpreter overhead
DENSE_SOLVE_MAX = 400


def _newton_direction(L: csr_matrix, rhs: np.ndarray, rtol: float) -> np.ndarray:
    if rhs.size <= DENSE_SOLVE_MAX:
        try:
            d = cho_solve(cho_factor(L.toarray(), check_finite=False), rhs, check_finite=False)
            if np.all(np.isfinite(d)) and rhs @ d > 0:
                return d
        except np.linalg.LinAlgError:
            pass
    diag = L.diagonal()
    inv = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)
    d, _info = cg(L, rhs, rtol=rtol, atol=0.0, M=diags(inv), maxiter=10 * max(rhs.size, 10))
    if not np.all(np.isfinite(d)) or rhs @ d <= 0:
        d = inv * rhs
    return d


def _start(dataset, v0) -> np.ndarray:
    if v0 is None:
        return np.zeros(dataset.n)
    v = _check_dim(dataset, v0).copy()
    return v - v[0]


def fit_newton(dataset: ComparisonDataset, model: LinkModel, opts: FitOptions | None = None,
               v0=None, *, weights=None, _pattern: "_ReducedPattern | None" = None) -> FitResult:
    """Damped Newton ascent on the free coordinates.

    Each step solves the reduced Laplacian system by Jacobi-preconditioned
    conjugate gradients, then backtracks until the log-likelihood has
    increased by at least ``sufficient_increase`` times the predicted gain.
    Iterates whose sup-norm exceeds ``divergence_bound`` end the fit with
    status ``diverged``; with ``precheck`` on, data failing the existence
    condition are refused up front.

    ``weights`` multiplies each record's log-density; a zero weight drops the
    record without copying the dataset (the existence precheck still sees
    every record, so weighted fits usually run with ``precheck=False``).
    """
    opts = opts or FitOptions()
    if len(dataset) == 0:
        raise ValueError("cannot fit an empty dataset")
    params = dict(model.params)
    if opts.precheck and not check_condition1(dataset, opts.tie_edges, model).holds:
        v = np.zeros(dataset.n)
        return FitResult(v, log_likelihood(dataset, model, v), math.nan, 0, BLOCKED,
                         params=params)

    n, i, j, x = dataset.n, dataset.i, dataset.j, dataset.x
    w = None if weights is None else np.asarray(weights, dtype=float)
    if w is not None and w.shape != x.shape:
        raise ValueError("one weight per record is required")
    v = _start(dataset, v0)
    terms = model.logpdf(x, v[i] - v[j])
    if w is not None:
        terms = w * terms
    ll = float(np.sum(terms))
    history = [ll]
    pattern = _pattern or _ReducedPattern(dataset)
    status = MAX_ITERATIONS
    it = 0
    gnorm = math.inf
    while True:
        y = v[i] - v[j]
        g, g2 = model.score_pair(x, y)
        if w is not None:
            g, g2 = w * g, w * g2
        full = np.bincount(i, weights=g, minlength=n) - np.bincount(j, weights=g, minlength=n)
        grad = full[1:]
        # the anchor's component is minus the sum of the rest, so it is
        # included in the stopping norm
        gnorm = float(np.max(np.abs(full)))
        d = _newton_direction(pattern.laplacian(-g2), grad, opts.cg_rtol)
        if gnorm <= opts.tol and np.max(np.abs(d)) <= opts.step_tol:
            status = CONVERGED
            break
        if it >= opts.max_iterations:
            break
        gain = float(grad @ d)
        t = 1.0
        accepted = False
        for _ in range(opts.max_halvings):
            trial = v.copy()
            trial[1:] += t * d
            with np.errstate(over="ignore", invalid="ignore"):
                new_terms = model.logpdf(x, trial[i] - trial[j])
                if w is not None:
                    new_terms = w * new_terms
            delta = float(np.sum(new_terms - terms))
            if math.isfinite(delta) and (
                delta >= opts.sufficient_increase * t * gain
                or (gain <= _NEGLIGIBLE_GAIN and delta >= -_NO_LOSS_SLACK)
            ):
                accepted = True
                break
            t *= opts.backtrack
        if not accepted:
            status = CONVERGED if gnorm <= opts.tol else MAX_ITERATIONS
            break
        it += 1
        v, terms = trial, new_terms
        ll = float(np.sum(terms))
        history.append(ll)
        if np.max(np.abs(v)) > opts.divergence_bound:
            status = DIVERGED
            break
    return FitResult(v, ll, gnorm, it, status, "newton", history, params)


def fit(dataset, model, opts=None, solver: str = "newton", v0=None) -> FitResult:
    if solver == "newton":
        return fit_newton(dataset, model, opts, v0)
    if solver == "mm":
        return fit_mm_bt(dataset, opts, v0=v0)
    raise ValueError(f"unknown solver {solver!r}")


_BT = make_model("bt")


def fit_mm_bt(dataset: ComparisonDataset, opts: FitOptions | None = None,
              max_iterations: int = 100_000, v0=None) -> FitResult:
    """Minorize-maximize iteration for Bradley-Terry data.

    With strengths ``w = exp(v)`` every subject is updated simultaneously by
    ``w_k <- W_k / sum_{records r at k} 1 / (w_i(r) + w_j(r))`` where ``W_k``
    counts the wins of ``k``; strengths are then rescaled so that ``w_0 = 1``.
    Stops on the same sup-norm gradient tolerance as :func:`fit_newton`.
    """
    opts = opts or FitOptions()
    if len(dataset) == 0:
        raise ValueError("cannot fit an empty dataset")
    if not np.all(np.isin(dataset.x, (-1.0, 1.0))):
        raise ValueError("MM solver needs binary win/loss outcomes")
    n, i, j, x = dataset.n, dataset.i, dataset.j, dataset.x
    if opts.precheck and not check_condition1(dataset, opts.tie_edges).holds:
        v = np.zeros(n)
        return FitResult(v, log_likelihood(dataset, _BT, v), math.nan, 0, BLOCKED, "mm")

    winner = np.where(x > 0, i, j)
    wins = np.bincount(winner, minlength=n).astype(float)
    w = np.exp(_start(dataset, v0))
    history = []
    status = MAX_ITERATIONS
    it = 0
    while True:
        v = np.log(w)
        ll = log_likelihood(dataset, _BT, v)
        history.append(ll)
        gnorm = float(np.max(np.abs(gradient(dataset, _BT, v)[1:])))
        if gnorm <= opts.tol:
            status = CONVERGED
            break
        if it >= max_iterations:
            break
        inv = 1.0 / (w[i] + w[j])
        den = np.bincount(i, weights=inv, minlength=n) + np.bincount(j, weights=inv, minlength=n)
        w = np.where(den > 0, wins / np.where(den > 0, den, 1.0), w)
        it += 1
        if w[0] <= 0 or not np.all(np.isfinite(w)):
            status = DIVERGED
            break
        w = w / w[0]
        with np.errstate(divide="ignore"):
            if np.max(np.abs(np.log(w))) > opts.divergence_bound:
                status = DIVERGED
                v = np.log(w)
                break
    return FitResult(v, ll, gnorm, it, status, "mm", history)


def linf_error(estimate, truth) -> float:
    """``max_k |estimate_k - truth_k|`` for two anchored score vectors."""
    a = np.asarray(estimate, dtype=float)
    b = np.asarray(truth, dtype=float)
    if a.shape != b.shape:
        raise ValueError("score vectors differ in length")
    if a.size and (a[0] != 0.0 or b[0] != 0.0):
        raise ValueError("both score vectors must be anchored (first component 0)")
    return float(np.max(np.abs(a - b))) if a.size else 0.0
