import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from dynpanel.dgp import DgpConfig, EtaLaw, InitRegime, simulate
from dynpanel.kernels import InvariantStats, conditional_invariant, maximal_invariant, sample_orthogonal
from dynpanel.likelihoods import (
    DegenerateDataError,
    RhoForms,
    Theta,
    Theta1,
    conditional_delta,
    conditional_full_profile,
    conditional_profile,
    hessian_lancaster,
    hessian_mile,
    hessian_mile_conditional,
    lancaster_sigma2,
    mile_profile,
    ones_f,
    q_lancaster,
    q_lancaster_concentrated,
    q_mile,
    q_mile_concentrated,
    q_mile_conditional,
    q_mile_conditional_2d,
    q_mile_conditional_concentrated,
    q_ml_concentrated,
    score_components,
    score_l,
    score_l_deriv,
    score_lancaster_2d,
    score_m,
    score_m_deriv,
    score_mile,
    score_mile_conditional,
    score_mile_conditional_2d,
    score_mile_conditional_concentrated,
    score_mile_conditional_concentrated_deriv,
    score_ml,
    score_ml_deriv,
)

H = 1e-5


def fd_grad(f, x, h=H):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def fd_hess(grad, x, h=H):
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((grad(x + e) - grad(x - e)) / (2 * h))
    M = np.array(cols).T
    return 0.5 * (M + M.T)


def rel_close(a, b, rtol=1e-5, atol=1e-7):
    a, b = np.asarray(a), np.asarray(b)
    return np.all(np.abs(a - b) <= rtol * np.maximum(np.abs(a), np.abs(b)) + atol)


def zero_stats(seed, N=60, T=4, rho=0.5, w=1.0):
    d = simulate(DgpConfig(rho, 1.0, N, T, EtaLaw(omega2=w), seed=seed))
    return maximal_invariant(d.Y)


def cond_stats(seed, N=60, T=4):
    d = simulate(DgpConfig(0.5, 1.0, N, T, EtaLaw(kind="iid-normal", mean=0.7),
                           InitRegime(kind="iid-normal"), seed=seed))
    return conditional_invariant(d.Y, d.y1)


def test_rhoforms_match_direct_traces():
    s = zero_stats(1)
    f = RhoForms.from_stats(s)
    from dynpanel.kernels import build_model_matrices, centering_matrix

    for rho in (-0.7, 0.2, 1.3):
        D = build_model_matrices(rho, 4).D
        S = D @ s.W @ D.T
        assert f.tr(rho) == pytest.approx(np.trace(S), rel=1e-12)
        assert f.trH(rho) == pytest.approx(np.trace(S @ centering_matrix(4)), rel=1e-12)
        assert f.q1(rho) == pytest.approx(S.sum(), rel=1e-12)


def test_ones_f_matches_matrices():
    from dynpanel.kernels import build_f_matrices

    for rho in (-0.5, 0.3, 0.9):
        F = build_f_matrices(rho, 5)
        assert ones_f(rho, 5, 0) == pytest.approx(F.F0.sum())
        assert ones_f(rho, 5, 1) == pytest.approx(F.F1.sum())
        assert ones_f(rho, 5, 2) == pytest.approx(F.F2.sum())
    with pytest.raises(ValueError):
        ones_f(0.1, 3, 3)


@pytest.mark.parametrize("seed", range(6))
def test_mile_derivatives(seed):
    rng = np.random.default_rng(seed)
    f = RhoForms.from_stats(zero_stats(seed))
    x = np.array([rng.uniform(-0.5, 0.9), rng.uniform(0.5, 2.0), rng.uniform(0.2, 3.0)])
    q = lambda v: q_mile(Theta(*v), f)
    g = lambda v: score_mile(Theta(*v), f)
    assert rel_close(g(x), fd_grad(q, x))
    assert rel_close(hessian_mile(Theta(*x), f), fd_hess(g, x))


@pytest.mark.parametrize("seed", range(6))
def test_lancaster_derivatives(seed):
    rng = np.random.default_rng(100 + seed)
    f = RhoForms.from_stats(zero_stats(seed))
    x = np.array([rng.uniform(-0.5, 0.9), rng.uniform(0.5, 2.0)])
    q = lambda v: q_lancaster(v[0], v[1], f)
    g = lambda v: score_lancaster_2d(v[0], v[1], f)
    assert rel_close(g(x), fd_grad(q, x))
    assert rel_close(hessian_lancaster(*x, f), fd_hess(g, x))


@pytest.mark.parametrize("seed", range(6))
def test_conditional_derivatives(seed):
    rng = np.random.default_rng(200 + seed)
    f = RhoForms.from_stats(cond_stats(seed))
    x = np.array([rng.uniform(-0.5, 0.9), rng.uniform(0.5, 2.0), rng.uniform(-1, 1), rng.uniform(0.2, 3.0)])
    q = lambda v: q_mile_conditional(Theta1(*v), f)
    g = lambda v: score_mile_conditional(Theta1(*v), f)
    assert rel_close(g(x), fd_grad(q, x))
    assert rel_close(hessian_mile_conditional(Theta1(*x), f), fd_hess(g, x))


@pytest.mark.parametrize("seed", range(4))
def test_concentrated_scores(seed):
    f = RhoForms.from_stats(zero_stats(seed))
    fc = RhoForms.from_stats(cond_stats(seed))
    for rho in (-0.4, 0.1, 0.6, 1.1):
        d = lambda fn, st_: (fn(rho + H, st_) - fn(rho - H, st_)) / (2 * H)
        assert rel_close(score_l(rho, f), d(q_lancaster_concentrated, f))
        assert rel_close(score_ml(rho, f), d(q_ml_concentrated, f))
        assert rel_close(score_m(rho, f), d(q_mile_concentrated, f))
        assert rel_close(score_l_deriv(rho, f), d(score_l, f))
        assert rel_close(score_ml_deriv(rho, f), d(score_ml, f))
        assert rel_close(score_m_deriv(rho, f), d(score_m, f))
        assert rel_close(score_mile_conditional_concentrated(rho, fc), d(q_mile_conditional_concentrated, fc))
        assert rel_close(score_mile_conditional_concentrated_deriv(rho, fc),
                         d(score_mile_conditional_concentrated, fc))


def test_conditional_2d_envelope():
    f = RhoForms.from_stats(cond_stats(3))
    x = np.array([0.45, 1.1])
    g = fd_grad(lambda v: q_mile_conditional_2d(v[0], v[1], f), x)
    assert rel_close(score_mile_conditional_2d(*x, f), g)


@given(st.integers(0, 10_000), st.integers(3, 6), st.floats(-0.9, 1.2))
@settings(max_examples=40, deadline=None)
def test_score_decomposition_identity(seed, T, rho):
    f = RhoForms.from_stats(zero_stats(seed, N=30, T=T))
    s_m, s_l, s_ml = score_components(rho, f)
    assert abs(s_m - ((T - 1) / T * s_l + s_ml)) < 1e-12
    # and the decomposition agrees with the independently coded concentrated score
    fd = (q_mile_concentrated(rho + H, f) - q_mile_concentrated(rho - H, f)) / (2 * H)
    assert s_m == pytest.approx(fd, rel=1e-5, abs=1e-8)


@pytest.mark.parametrize("seed", range(4))
def test_mile_profile_matches_numeric_optimum(seed):
    f = RhoForms.from_stats(zero_stats(seed))
    for rho in (0.2, 0.5, 0.8):
        th = mile_profile(rho, f)
        res = minimize(lambda v: -q_mile(Theta(rho, math.exp(v[0]), math.exp(v[1])), f),
                       [0.0, 0.0], method="Nelder-Mead", options=dict(xatol=1e-10, fatol=1e-14, maxiter=4000))
        assert th.sigma2 == pytest.approx(math.exp(res.x[0]), rel=1e-4)
        assert th.omega2 == pytest.approx(math.exp(res.x[1]), rel=1e-4)
        # concentrated objective equals the profile up to the documented constant
        T = f.T
        const = -(T - 1) / (2 * T) - math.log(2) / (2 * T)
        assert q_mile(th, f) == pytest.approx(q_mile_concentrated(rho, f) + const, abs=1e-10)


def test_mile_profile_boundary_branch():
    # no effects at all: the profiled omega2 should sit at zero for some rho
    s = zero_stats(5, N=200, w=0.0)
    f = RhoForms.from_stats(s)
    th = mile_profile(0.5, f)
    if th.omega2 == 0.0:
        res = minimize(lambda v: -q_mile(Theta(0.5, math.exp(v[0]), 0.0), f), [0.0], method="Nelder-Mead",
                       options=dict(xatol=1e-10, fatol=1e-14))
        assert th.sigma2 == pytest.approx(math.exp(res.x[0]), rel=1e-5)
        eps = 1e-4
        assert q_mile(th, f) >= q_mile(Theta(0.5, th.sigma2, eps), f)


def test_lancaster_sigma2_is_profile():
    f = RhoForms.from_stats(zero_stats(7))
    s2 = lancaster_sigma2(0.4, f)
    assert score_lancaster_2d(0.4, s2, f)[1] == pytest.approx(0.0, abs=1e-12)
    assert q_lancaster(0.4, s2, f) == pytest.approx(q_lancaster_concentrated(0.4, f) - 0.5, abs=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_conditional_profiles(seed):
    f = RhoForms.from_stats(cond_stats(seed))
    th = conditional_profile(0.5, 1.2, f)
    g = score_mile_conditional(th, f)
    assert abs(g[2]) < 1e-10
    if th.omega2 > 0:
        assert abs(g[3]) < 1e-10
    full = conditional_full_profile(0.5, f)
    assert np.abs(score_mile_conditional(full, f)[1:]).max() < 1e-10
    res = minimize(lambda v: -q_mile_conditional(Theta1(0.5, math.exp(v[0]), v[1], math.exp(v[2])), f),
                   [0.0, 0.0, 0.0], method="Nelder-Mead",
                   options=dict(xatol=1e-10, fatol=1e-14, maxiter=8000))
    assert q_mile_conditional(full, f) >= -res.fun - 1e-10
    assert q_mile_conditional(full, f) == pytest.approx(q_mile_conditional_concentrated(0.5, f), abs=1e-10)
    assert full.delta == pytest.approx(conditional_delta(0.5, f))


def test_invariance_of_objectives():
    d = simulate(DgpConfig(0.5, 1.0, 40, 3, EtaLaw(kind="iid-normal"), InitRegime(kind="iid-normal"), seed=8))
    g = sample_orthogonal(40, seed=1, fix=d.y1)
    a = conditional_invariant(d.Y, d.y1)
    b = conditional_invariant(g @ d.Y, g @ d.y1)
    th = Theta1(0.4, 1.1, 0.3, 0.7)
    assert q_mile_conditional(th, a) == pytest.approx(q_mile_conditional(th, b), abs=1e-12)
    h = sample_orthogonal(40, seed=2)
    assert q_mile(Theta(0.4, 1.1, 0.7), maximal_invariant(d.Y)) == pytest.approx(
        q_mile(Theta(0.4, 1.1, 0.7), maximal_invariant(h @ d.Y)), abs=1e-12)


def test_theta_validation():
    with pytest.raises(ValueError):
        Theta(0.5, 0.0, 1.0)
    with pytest.raises(ValueError):
        Theta(0.5, 1.0, -0.1)
    with pytest.raises(ValueError):
        Theta1(0.5, 1.0, 0.0, -1.0)


def test_conditional_requires_z1():
    f = RhoForms.from_stats(zero_stats(1))
    with pytest.raises(ValueError, match="Z1"):
        q_mile_conditional(Theta1(0.5, 1.0, 0.0, 1.0), f)


def test_degenerate_data_raise():
    s = InvariantStats(W=np.zeros((3, 3)), N=10)
    with pytest.raises(DegenerateDataError):
        q_mile_concentrated(0.5, s)
    with pytest.raises(DegenerateDataError):
        score_l(0.5, s)


@pytest.mark.parametrize("w", [0.0, 1.0])
def test_exact_profiles_agree_with_back_solved_points(w):
    from dynpanel.likelihoods import (
        q_mile_conditional_profile,
        q_mile_profile,
        score_mile_conditional_profile,
        score_mile_profile,
    )

    f = RhoForms.from_stats(zero_stats(5, N=80, w=w))
    fc = RhoForms.from_stats(cond_stats(5))
    grid = np.linspace(-0.9, 1.4, 47)
    branches = set()
    for rho in grid:
        th = mile_profile(rho, f)
        branches.add(th.omega2 == 0.0)
        assert q_mile_profile(rho, f) == pytest.approx(q_mile(th, f), abs=1e-12)
        assert q_mile_conditional_profile(rho, fc) == pytest.approx(
            q_mile_conditional(conditional_full_profile(rho, fc), fc), abs=1e-12)
        d = (q_mile_profile(rho + H, f) - q_mile_profile(rho - H, f)) / (2 * H)
        assert score_mile_profile(rho, f) == pytest.approx(d, rel=1e-5, abs=1e-8)
        dc = (q_mile_conditional_profile(rho + H, fc) - q_mile_conditional_profile(rho - H, fc)) / (2 * H)
        assert score_mile_conditional_profile(rho, fc) == pytest.approx(dc, rel=1e-5, abs=1e-8)
    if w == 0.0:
        assert True in branches  # the omega2 = 0 branch is exercised
