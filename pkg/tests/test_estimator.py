import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from paircomp.dataset import ComparisonDataset
from paircomp.estimator import (
    BLOCKED,
    CONVERGED,
    DIVERGED,
    FitOptions,
    fit,
    fit_mm_bt,
    fit_newton,
    gradient,
    hessian,
    linf_error,
    log_likelihood,
    reduced_hessian,
)
from paircomp.existence import check_condition1
from paircomp.models import BUILTIN_MODELS, make_model
from paircomp.simulate import simulate, stream

BT = make_model("bt")


def connected_instance(name, n, p, seed, M=1.0, T=1):
    model = make_model(name)
    for k in range(1000):
        _, ds = simulate(n, p, model, M=M, T=T, seed=seed * 1000 + k)
        if len(ds) and check_condition1(ds, model=model).holds:
            return model, ds
    raise RuntimeError("no connected instance found")


# -- likelihood pieces --------------------------------------------------------

def test_log_likelihood_examples():
    assert log_likelihood(ComparisonDataset.from_records(3, []), BT, np.zeros(3)) == 0.0
    ds = ComparisonDataset.from_records(2, [(0, 1, 1)])
    assert log_likelihood(ds, BT, np.zeros(2)) == pytest.approx(math.log(0.5), abs=1e-15)
    with pytest.raises(ValueError):
        log_likelihood(ds, BT, np.zeros(3))


@pytest.mark.parametrize("name", BUILTIN_MODELS)
def test_translation_invariance(name):
    model, ds = connected_instance(name, 20, 0.4, 1)
    rng = stream(2, BUILTIN_MODELS.index(name))
    v = rng.normal(size=20)
    base = log_likelihood(ds, model, v)
    for c in rng.uniform(-5, 5, 5):
        assert log_likelihood(ds, model, v + c) == pytest.approx(base, rel=1e-12)


@pytest.mark.parametrize("name", BUILTIN_MODELS)
def test_gradient_matches_finite_differences(name):
    model, ds = connected_instance(name, 20, 0.4, 2)
    v = stream(3).normal(size=20)
    g = gradient(ds, model, v)
    h = 1e-6
    for k in range(20):
        e = np.zeros(20)
        e[k] = h
        fd = (log_likelihood(ds, model, v + e) - log_likelihood(ds, model, v - e)) / (2 * h)
        assert abs(g[k] - fd) <= 1e-6 * max(1.0, abs(g[k]))


@pytest.mark.parametrize("name", BUILTIN_MODELS)
def test_hessian_structure(name):
    model, ds = connected_instance(name, 15, 0.5, 3)
    v = stream(4).normal(0, 0.5, size=15)
    H = hessian(ds, model, v).toarray()
    np.testing.assert_allclose(H, H.T, atol=1e-14)
    assert np.max(np.abs(H.sum(axis=1))) <= 1e-10
    eig = np.linalg.eigvalsh(H)
    assert eig.max() <= 1e-10
    assert eig[-2] < 0
    R = reduced_hessian(ds, model, v).toarray()
    np.testing.assert_allclose(R, H[1:, 1:], atol=1e-14)
    # the Hessian is the derivative of the gradient
    h = 1e-6
    e = np.zeros(15)
    e[3] = h
    fd = (gradient(ds, model, v + e) - gradient(ds, model, v - e)) / (2 * h)
    np.testing.assert_allclose(H[:, 3], fd, atol=1e-5)


# -- fitting -------------------------------------------------------------------

def test_two_subject_binomial_closed_form():
    ds = ComparisonDataset.from_records(2, [(0, 1, 1), (1, 0, 1), (1, 0, 1), (1, 0, 1)])
    res = fit_newton(ds, BT)
    assert res.status == CONVERGED
    assert res.estimate[0] == 0.0
    assert abs(res.estimate[1] - math.log(3)) <= 1e-8
    mm = fit_mm_bt(ds)
    assert abs(mm.estimate[1] - math.log(3)) <= 1e-6


def test_normal_single_record():
    ds = ComparisonDataset.from_records(2, [(0, 1, 0.7)])
    res = fit_newton(ds, make_model("normal", {"sigma": 1.0}))
    assert res.status == CONVERGED
    assert abs(res.estimate[1] + 0.7) <= 1e-8


def test_symmetric_cycle_is_zero():
    ds = ComparisonDataset.from_records(3, [(0, 1, 1), (1, 2, 1), (2, 0, 1)])
    np.testing.assert_allclose(fit_newton(ds, BT).estimate, 0.0, atol=1e-12)
    np.testing.assert_allclose(fit_mm_bt(ds).estimate, 0.0, atol=1e-12)


def test_star_diverges_or_is_blocked():
    ds = ComparisonDataset.from_records(3, [(0, 1, 1), (0, 2, 1)])
    assert fit_newton(ds, BT).status == BLOCKED
    assert fit_newton(ds, BT, FitOptions(precheck=False)).status == DIVERGED
    assert fit_mm_bt(ds, FitOptions(precheck=False)).status == DIVERGED


def test_errors():
    with pytest.raises(ValueError):
        fit_newton(ComparisonDataset.from_records(2, []), BT)
    ds = ComparisonDataset.from_records(2, [(0, 1, 2)])
    with pytest.raises(ValueError):
        fit_mm_bt(ds)
    with pytest.raises(ValueError):
        fit(ds, BT, solver="lbfgs")
    with pytest.raises(ValueError):
        FitOptions(tol=0)
    with pytest.raises(ValueError):
        FitOptions(backtrack=1.0)


@pytest.mark.parametrize("name", BUILTIN_MODELS)
def test_convergence_and_monotone_ascent(name):
    rng = stream(10, BUILTIN_MODELS.index(name))
    for r in range(15):
        n = int(rng.integers(3, 51))
        p = float(rng.uniform(0.2, 0.9))
        model, ds = connected_instance(name, n, p, 100 + r, M=2.0)
        res = fit_newton(ds, model)
        assert res.status == CONVERGED, (name, r)
        assert res.grad_inf_norm <= 1e-8
        assert res.estimate[0] == 0.0
        assert np.all(np.diff(res.history) >= -1e-9)
        if n <= 15:
            assert np.linalg.eigvalsh(reduced_hessian(ds, model, res.estimate).toarray()).max() < 0


def test_flip_equivariance():
    for name in ("bt", "davidson", "clm4", "normal"):
        model, ds = connected_instance(name, 25, 0.4, 5)
        a = fit_newton(ds, model).estimate
        b = fit_newton(ds.flipped(), model).estimate
        np.testing.assert_allclose(b, -a, atol=1e-8)


def test_permutation_equivariance():
    model, ds = connected_instance("davidson", 25, 0.4, 6)
    perm = np.r_[0, 1 + stream(7).permutation(24)]
    a = fit_newton(ds, model).estimate
    b = fit_newton(ds.relabeled(perm), model).estimate
    np.testing.assert_allclose(b[perm], a, atol=1e-8)


def test_doubling_leaves_estimate_unchanged():
    model, ds = connected_instance("rao_kupper", 25, 0.4, 8)
    a = fit_newton(ds, model).estimate
    b = fit_newton(ds.repeated(2), model).estimate
    np.testing.assert_allclose(a, b, atol=1e-8)


def _grid_oracle(ds, model):
    # nested grid over (v2, v3) in [-6, 6]^2 down to resolution 1e-4
    c = np.zeros(2)
    half, step = 6.0, 0.05
    while True:
        g1 = np.arange(c[0] - half, c[0] + half + step / 2, step)
        g2 = np.arange(c[1] - half, c[1] + half + step / 2, step)
        A, B = np.meshgrid(g1, g2, indexing="ij")
        V = np.stack([np.zeros(A.size), A.ravel(), B.ravel()], axis=1)
        y = V[:, ds.i] - V[:, ds.j]
        ll = model.logpdf(np.broadcast_to(ds.x, y.shape), y).sum(axis=1)
        k = int(np.argmax(ll))
        c = V[k, 1:]
        if step <= 1e-4:
            return np.r_[0.0, c]
        half, step = 4 * step, step / 10


@pytest.mark.parametrize("name", ["bt", "davidson"])
def test_three_subject_grid_oracle(name):
    model = make_model(name)
    done = 0
    for seed in range(200):
        rng = stream(40, seed)
        m = int(rng.integers(4, 12))
        a = rng.integers(0, 3, m)
        b = (a + rng.integers(1, 3, m)) % 3
        ds = ComparisonDataset.from_arrays(3, a, b, model.sample(rng.normal(0, 1, m), rng))
        if not check_condition1(ds, model=model).holds:
            continue
        res = fit_newton(ds, model)
        if np.max(np.abs(res.estimate)) > 5.5:
            continue
        assert np.max(np.abs(res.estimate - _grid_oracle(ds, model))) <= 1e-3
        done += 1
        if done == 20:
            break
    assert done == 20


def test_mm_and_newton_agree():
    for r in range(100):
        _, ds = connected_instance("bt", 50, 0.3, 200 + r)
        a = fit_newton(ds, BT)
        b = fit_mm_bt(ds)
        assert a.converged and b.converged
        assert np.max(np.abs(a.estimate - b.estimate)) <= 1e-6


def test_mm_ascent_is_monotone():
    _, ds = connected_instance("bt", 40, 0.3, 9, M=3.0)
    res = fit_mm_bt(ds)
    assert np.all(np.diff(res.history) >= -1e-12)


def test_warm_start_and_weights():
    model, ds = connected_instance("clm4", 30, 0.4, 11)
    cold = fit_newton(ds, model)
    warm = fit_newton(ds, model, v0=cold.estimate + 3.0)
    np.testing.assert_allclose(warm.estimate, cold.estimate, atol=1e-8)
    w = np.ones(len(ds))
    w[0] = 0.0
    sub = fit_newton(ds.subset(w > 0), model, FitOptions(precheck=False))
    zero = fit_newton(ds, model, FitOptions(precheck=False), weights=w)
    np.testing.assert_allclose(zero.estimate, sub.estimate, atol=1e-8)


def test_large_sparse_fit_uses_iterative_path():
    model, ds = connected_instance("bt", 900, 0.02, 12)
    res = fit_newton(ds, model)
    assert res.converged and res.grad_inf_norm <= 1e-8


def test_fit_result_serialises():
    _, ds = connected_instance("bt", 10, 0.8, 13)
    d = fit(ds, BT).to_dict()
    assert d["status"] == "converged" and len(d["estimate"]) == 10


def test_linf_error_examples():
    assert linf_error(np.zeros(3), np.zeros(3)) == 0.0
    assert linf_error([0, 1.2, -0.3], [0, 1.0, 0.1]) == pytest.approx(0.4)
    with pytest.raises(ValueError):
        linf_error([1.0, 0.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        linf_error([0.0], [0.0, 0.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4), st.lists(st.floats(-5, 5), min_size=4, max_size=4),
       st.permutations([1, 2, 3]))
def test_linf_error_relabeling_invariant(a, b, perm):
    a = np.r_[0.0, a[1:]]
    b = np.r_[0.0, b[1:]]
    idx = np.r_[0, perm]
    assert linf_error(a[idx], b[idx]) == linf_error(a, b)
