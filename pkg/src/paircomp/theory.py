"""Theoretical constants of the uniform-consistency analysis.

For a model ``f`` and dynamic range ``M``:

    C1  mass of ``X >= 0`` at ``y = M`` (strongest against weakest)
    C2  sup |g(x; y)| over x in A, |y| <= M
    C3  sup |g2(x; y)| over x in A, |y| <= M + 1
    C4  inf |g2(x; y)| over x in A, |y| <= M + 1
    C5  sup over |y| <= M of the psi_2 norm of g(X_y, y), X_y ~ f(.; y)

Extrema over ``y`` are taken on a uniform grid and then polished by bounded
Brent searches around the best grid points, so values are deterministic for
a given step.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate, optimize
from scipy.special import logsumexp

from .models import LinkModel, ModelError

GRID_STEP = 1e-3
C5_STEP = 0.05
_LOG2 = math.log(2.0)


@dataclass
class ConstantsBundle:
    C1: float
    C2: float
    C3: float
    C4: float
    C5: float | None = None
    M: float = 0.0
    c2_unbounded: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def delta_form(self) -> str:
        """``"bounded"`` uses C2, ``"sub_gaussian"`` falls back to C5."""
        return "bounded" if math.isfinite(self.C2) else "sub_gaussian"

    @property
    def leading(self) -> float:
        if self.delta_form == "bounded":
            return self.C2
        if self.C5 is None:
            raise ValueError("C2 is unbounded and no C5 was computed")
        return self.C5

    def to_dict(self) -> dict:
        d = asdict(self)
        d["delta_form"] = self.delta_form
        for k in ("C2", "C5"):
            if d[k] is not None and not math.isfinite(d[k]):
                d[k] = "inf"
        return d


@dataclass(frozen=True)
class Schedule:
    n: int
    p_dense: float
    p_mid: float
    p_sparse: float
    p_connectivity: float
    M_unit: float
    M_half_loglog: float
    M_two_loglog: float

    def p(self, regime: str) -> float:
        try:
            return {"dense": self.p_dense, "mid": self.p_mid, "sparse": self.p_sparse,
                    "connectivity": self.p_connectivity}[regime]
        except KeyError:
            raise ValueError(f"unknown sparsity regime {regime!r}") from None

    def M(self, rule: str) -> float:
        try:
            return {"fixed": self.M_unit, "unit": self.M_unit,
                    "half_loglog": self.M_half_loglog, "two_loglog": self.M_two_loglog}[rule]
        except KeyError:
            raise ValueError(f"unknown dynamic-range rule {rule!r}") from None

    def mean_degree(self, p: float) -> float:
        """Expected comparisons per subject at ``T = 1``."""
        return (self.n - 1) * p


def schedule(n: int) -> Schedule:
    if n < 3:
        raise ValueError("schedule needs n >= 3")
    ln = math.log(n)
    sparse = ln ** 3 / n
    lln = math.log(ln)
    return Schedule(n, 0.5, math.sqrt(sparse), sparse, ln / n, 1.0, lln / 2.0, 2.0 * lln)


def _check_M(M: float) -> float:
    M = float(M)
    if not M >= 0:
        raise ValueError("dynamic range M must be nonnegative")
    return M


def global_discrepancy(model: LinkModel, M: float) -> float:
    """Probability that the outcome at ``y = M`` is ``>= 0`` (ties included)."""
    M = _check_M(M)
    if model.space.is_finite:
        xs = np.array([v for v in model.space.values if v >= 0])
        return float(np.sum(model.pdf(xs, np.full(xs.shape, M))))
    s = model.scale
    hi = min(model.space.bounds[1], M + 40 * s)
    val, _ = integrate.quad(lambda t: float(model.pdf(t, M)), 0.0, hi,
                            points=[M] if 0 < M < hi else None, epsabs=1e-12, epsrel=1e-12, limit=200)
    return float(val)


def _grid(M: float, step: float) -> np.ndarray:
    if M == 0:
        return np.zeros(1)
    k = int(math.ceil(2 * M / step))
    return np.linspace(-M, M, k + 1)


def _abs_of(fn):
    def f(x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        return np.abs(fn(x, y))
    return f


def _extremum(fun, xs, R: float, step: float, maximize: bool) -> float:
    """Extremum over ``x in xs`` and ``|y| <= R`` of ``fun(x, y)``."""
    ys = _grid(R, step)
    sign = 1.0 if maximize else -1.0
    vals = sign * fun(xs[:, None], ys[None, :])
    best = float(vals.max())
    # polish around the best grid point of every outcome separately
    for x, row in zip(xs, vals):
        k = int(np.argmax(row))
        a, b = max(-R, ys[k] - step), min(R, ys[k] + step)
        if b <= a:
            continue
        res = optimize.minimize_scalar(lambda t: -sign * float(fun(x, t)), bounds=(a, b),
                                       method="bounded", options={"xatol": 1e-10})
        best = max(best, -float(res.fun))
    return sign * best


def constants(model: LinkModel, M: float, *, step: float = GRID_STEP,
              with_c5: bool | None = None, c5_step: float = C5_STEP) -> ConstantsBundle:
    """C1-C4 (and C5 when requested or when C2 is unbounded)."""
    M = _check_M(M)
    if not 0 < step <= GRID_STEP:
        raise ValueError(f"grid step must lie in (0, {GRID_STEP}]")
    abs_g, abs_g2 = _abs_of(model.score), _abs_of(model.score_slope)
    C1 = global_discrepancy(model, M)
    unbounded = not model.space.bounded
    meta = {"step": step, "refine": "bounded-brent", "model": model.to_spec()}
    if model.space.is_finite:
        xs = np.asarray(model.space.values)
        C2 = _extremum(abs_g, xs, M, step, True)
        C3 = _extremum(abs_g2, xs, M + 1, step, True)
        C4 = _extremum(abs_g2, xs, M + 1, step, False)
    else:
        # continuous A: x ranges with y, so extremise on an (x - y) lattice
        if unbounded:
            C2 = math.inf
        else:
            hi = model.space.bounds[1]
            xs = np.linspace(-hi, hi, 401)
            C2 = _extremum(abs_g, xs, M, step, True)
        ys = _grid(M + 1, step)
        offs = model.scale * np.linspace(-10.0, 10.0, 81)
        vals = abs_g2(ys[None, :] + offs[:, None], ys[None, :])
        C3, C4 = float(vals.max()), float(vals.min())
    if with_c5 is None:
        with_c5 = unbounded
    C5 = sub_gaussian_norm(model, M, step=c5_step) if with_c5 else None
    return ConstantsBundle(float(C1), float(C2), float(C3), float(C4), C5, M, unbounded, meta)


# -- sub-gaussian norm --------------------------------------------------------

def _log_mgf_sq(model: LinkModel, y: float, t: float) -> float:
    """``log E exp(g(X_y, y)^2 / t^2)``; ``inf`` when the expectation diverges."""
    if model.space.is_finite:
        xs = np.asarray(model.space.values)
        yy = np.full(xs.shape, y)
        return float(logsumexp(model.logpdf(xs, yy) + model.score(xs, yy) ** 2 / t ** 2))

    def h(x):
        return float(model.logpdf(x, y) + model.score(x, y) ** 2 / t ** 2)

    s = model.scale
    lo, hi = model.space.bounds
    if not math.isfinite(hi):
        # a log-integrand still rising far out means a divergent integral
        for side in (-1.0, 1.0):
            if h(y + side * 60 * s) >= h(y + side * 30 * s):
                return math.inf
    peak = h(y)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(lambda x: math.exp(h(x) - peak), lo, hi,
                                epsabs=1e-13, epsrel=1e-12, limit=400)
    return peak + math.log(val) if val > 0 else -math.inf


def _psi2_at(model: LinkModel, y: float) -> float:
    if model.space.is_finite:
        xs = np.asarray(model.space.values)
        yy = np.full(xs.shape, y)
        g2 = model.score(xs, yy) ** 2
        second = float(np.sum(model.pdf(xs, yy) * g2))
        t_hi = math.sqrt(float(g2.max()) / _LOG2)
    else:
        second = float(integrate.quad(lambda x: float(model.pdf(x, y) * model.score(x, y) ** 2),
                                      *model.space.bounds, epsabs=1e-12)[0])
        t_hi = None
    if second <= 0:
        return 0.0
    # Jensen: E exp(g^2/t^2) >= exp(E g^2 / t^2), so the root is at least t_lo
    t_lo = math.sqrt(second / _LOG2)
    def fun(t):
        # divergent moments sit left of the root; keep the bracket finite
        return min(_log_mgf_sq(model, y, t), 1e6) - _LOG2

    if t_hi is None:
        t_hi = 2.0 * t_lo
        for _ in range(60):
            if fun(t_hi) < 0:
                break
            t_hi *= 2.0
        else:
            return math.inf
    if t_hi <= t_lo or fun(t_hi) >= 0:
        return t_hi
    if fun(t_lo) <= 0:
        return t_lo
    return float(optimize.brentq(fun, t_lo, t_hi, xtol=1e-13, rtol=4 * np.finfo(float).eps))


def sub_gaussian_norm(model: LinkModel, M: float, *, step: float = C5_STEP) -> float:
    """C5: the largest psi_2 norm of ``g(X_y, y)`` over ``|y| <= M``.

    Symmetry makes ``g(X_{-y}, -y)`` equal in law to ``-g(X_y, y)``, so only
    ``y >= 0`` is scanned.  Each norm solves ``E exp(g^2/t^2) = 2`` by a
    bracketed root search; ``inf`` means no bracket was found.
    """
    M = _check_M(M)
    ys = np.linspace(0.0, M, int(math.ceil(M / step)) + 1) if M > 0 else np.zeros(1)
    return float(max(_psi2_at(model, float(y)) for y in ys))


# -- rates ----------------------------------------------------------------------

def delta_n(bundle: ConstantsBundle, n: int, p: float) -> float:
    """Uniform error rate ``K * sqrt(log n / np) * log n / log np``.

    ``K = C2 C3 / C4^2``, or ``C5 C3 / C4^2`` when C2 is unbounded.
    """
    if n < 3:
        raise ValueError("delta_n needs n >= 3")
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    np_ = n * p
    if np_ <= 1:
        raise ValueError("delta_n is undefined for np <= 1")
    if bundle.C4 <= 0:
        raise ValueError("C4 must be positive")
    ln = math.log(n)
    K = bundle.leading * bundle.C3 / bundle.C4 ** 2
    return K * math.sqrt(ln / np_) * ln / math.log(np_)


def existence_rate_term(n: int, p: float, C1: float) -> float:
    """``log n / (np |log C1|)``; infinite when ``C1 = 1``."""
    if n < 2:
        raise ValueError("need n >= 2")
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    if not 0.5 <= C1 <= 1:
        raise ValueError("C1 must lie in [1/2, 1]")
    if C1 == 1:
        return math.inf
    return math.log(n) / (n * p * abs(math.log(C1)))


def bt_closed_form(M: float) -> tuple[float, float, float]:
    """Logistic closed forms of (C2, C3, C4) for Bradley-Terry."""
    from scipy.special import expit
    M = _check_M(M)
    s = expit(M + 1)
    return float(expit(M)), 0.25, float(s * (1 - s))


__all__ = [
    "ConstantsBundle", "Schedule", "schedule", "global_discrepancy", "constants",
    "sub_gaussian_norm", "delta_n", "existence_rate_term", "bt_closed_form", "ModelError",
]
