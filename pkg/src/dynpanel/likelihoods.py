"""Objective functions, profiles and scores as functions of invariant statistics.

Because D = I - rho*J, every trace and quadratic form of D W D' that the
objectives need is a quadratic polynomial in rho. :class:`RhoForms` stores
those coefficients once per dataset, which makes dense rho grids cheap and
gives exact derivatives.

Nothing here looks at raw outcomes, only at :class:`~dynpanel.kernels.InvariantStats`,
so every objective is invariant to the relevant rotation group by construction.
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass
from typing import Union

import numpy as np
from numpy.typing import NDArray

from .kernels import InvariantStats, centering_matrix, shift_matrix

Array = NDArray[np.float64]
ArrayLike = Union[float, Array]

LN2 = math.log(2.0)


class DegenerateDataError(ValueError):
    """A trace or quadratic form that must be positive is not."""


@dataclass(frozen=True)
class Theta:
    rho: float
    sigma2: float
    omega2: float

    def __post_init__(self) -> None:
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be > 0, got {self.sigma2}")
        if not self.omega2 >= 0:
            raise ValueError(f"omega2 must be >= 0, got {self.omega2}")

    def as_array(self) -> Array:
        return np.array(astuple(self), dtype=float)


@dataclass(frozen=True)
class Theta1:
    rho: float
    sigma2: float
    delta: float
    omega2: float

    def __post_init__(self) -> None:
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be > 0, got {self.sigma2}")
        if not self.omega2 >= 0:
            raise ValueError(f"omega2 must be >= 0, got {self.omega2}")

    def as_array(self) -> Array:
        return np.array(astuple(self), dtype=float)


# -- polynomial pieces ----------------------------------------------------


def ones_f(rho: ArrayLike, T: int, order: int = 0) -> ArrayLike:
    """1'F_order 1 as a polynomial in rho (order 0, 1 or 2)."""
    rho = np.asarray(rho, dtype=float)
    out = np.zeros_like(rho)
    for k in range(1, T):
        if order == 0:
            out = out + (T - k) * rho**k / k
        elif order == 1:
            out = out + (T - k) * rho ** (k - 1)
        elif order == 2:
            if k >= 2:
                out = out + (T - k) * (k - 1) * rho ** (k - 2)
        else:
            raise ValueError("order must be 0, 1 or 2")
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class Quadratic:
    c0: float
    c1: float
    c2: float

    def __call__(self, rho: ArrayLike) -> ArrayLike:
        return self.c0 + rho * (self.c1 + rho * self.c2)

    def d1(self, rho: ArrayLike) -> ArrayLike:
        return self.c1 + 2.0 * self.c2 * rho

    def d2(self, rho: ArrayLike = 0.0) -> float:
        return 2.0 * self.c2


@dataclass(frozen=True)
class RhoForms:
    """tr(DWD'), tr(DWD'H), 1'DWD'1 (and the conditional residual) as quadratics in rho.

    ``resid`` is ||(Z1 D' - ||x|| rho e1') H||^2, the Z1 residual left after
    the best intercept delta has been fitted; ``a0``/``a1`` give the row
    vector Z1 D' - ||x|| rho e1' = a0 + rho a1.
    """

    N: int
    T: int
    tr: Quadratic
    trH: Quadratic
    q1: Quadratic
    resid: Quadratic | None = None
    a0: Array | None = None
    a1: Array | None = None
    x_norm: float | None = None

    @classmethod
    def from_stats(cls, stats: InvariantStats) -> "RhoForms":
        W = stats.W
        T = stats.T
        J = shift_matrix(T)
        H = centering_matrix(T)
        JW = J @ W
        JWJ = JW @ J.T
        tr = Quadratic(float(np.trace(W)), -2.0 * float(np.trace(JW)), float(np.trace(JWJ)))
        trH = Quadratic(
            float(np.trace(W @ H)), -2.0 * float(np.trace(JW @ H)), float(np.trace(JWJ @ H))
        )
        q1 = Quadratic(float(W.sum()), -2.0 * float(JW.sum()), float(JWJ.sum()))
        if stats.Z1 is None:
            return cls(N=stats.N, T=T, tr=tr, trH=trH, q1=q1)
        z = stats.Z1.ravel()
        e1 = np.zeros(T)
        e1[0] = 1.0
        a0 = z.copy()
        a1 = -(J @ z + stats.x_norm * e1)
        a0h, a1h = a0 @ H, a1 @ H
        resid = Quadratic(float(a0h @ a0h), 2.0 * float(a0h @ a1h), float(a1h @ a1h))
        return cls(
            N=stats.N, T=T, tr=tr, trH=trH, q1=q1, resid=resid, a0=a0, a1=a1,
            x_norm=float(stats.x_norm),
        )


def _forms(stats: Union[InvariantStats, RhoForms]) -> RhoForms:
    return stats if isinstance(stats, RhoForms) else RhoForms.from_stats(stats)


def _check_positive(name: str, v: ArrayLike) -> None:
    if np.any(~(np.asarray(v) > 0)):
        raise DegenerateDataError(f"{name} must be positive; data are degenerate at this rho")


# -- Bessel-type terms --------------------------------------------------------


def _bessel_terms(u: float) -> tuple[float, float, float]:
    """G(u) = sqrt(1+u) - ln(1 + sqrt(1+u)) with u = A^2, and its first two u-derivatives."""
    if u < 1e300:
        s = math.sqrt(1.0 + u)
        G = s - math.log1p(s)
    else:
        A = math.sqrt(u)
        s = A * math.sqrt(1.0 + 1.0 / u)
        G = s - (math.log(A) + math.log(1.0 / A + math.sqrt(1.0 / u + 1.0)))
    g1 = 0.5 / (1.0 + s)
    g2 = -0.25 / (s * (1.0 + s) ** 2)
    return G, g1, g2


# -- invariant objective ------------------------------------------------------


def _mile_parts(rho, sigma2, omega2, f: RhoForms, order: int):
    """Value, gradient and Hessian of the invariant objective in (rho, sigma2, omega2)."""
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be > 0, got {sigma2}")
    N, T = f.N, f.T
    NT = N * T
    trS, trS1, trS2 = f.tr(rho), f.tr.d1(rho), f.tr.d2()
    q1, q11, q12 = f.q1(rho), f.q1.d1(rho), f.q1.d2()
    k = 4.0 / (sigma2 * N)
    u = omega2 * q1 * k
    G, g1, g2 = _bessel_terms(u)
    val = -0.5 * math.log(sigma2) - trS / (2 * sigma2 * NT) - 0.5 * omega2 + G / (2 * T)
    if order == 0:
        return val, None, None
    du = np.array([omega2 * q11 * k, -u / sigma2, q1 * k])
    grad = np.array([
        -trS1 / (2 * sigma2 * NT),
        -0.5 / sigma2 + trS / (2 * sigma2**2 * NT),
        -0.5,
    ]) + g1 * du / (2 * T)
    if order == 1:
        return val, grad, None
    d2u = np.array([
        [omega2 * q12 * k, -omega2 * q11 * k / sigma2, q11 * k],
        [0.0, 2 * u / sigma2**2, -q1 * k / sigma2],
        [0.0, 0.0, 0.0],
    ])
    d2u = np.triu(d2u) + np.triu(d2u, 1).T
    hess = np.zeros((3, 3))
    hess[0, 0] = -trS2 / (2 * sigma2 * NT)
    hess[0, 1] = hess[1, 0] = trS1 / (2 * sigma2**2 * NT)
    hess[1, 1] = 0.5 / sigma2**2 - trS / (sigma2**3 * NT)
    hess += (g2 * np.outer(du, du) + g1 * d2u) / (2 * T)
    return val, grad, hess


def q_mile(theta: Theta, stats: Union[InvariantStats, RhoForms]) -> float:
    """Invariant log-likelihood approximation the invariant objective(rho, sigma2, omega2)."""
    return _mile_parts(theta.rho, theta.sigma2, theta.omega2, _forms(stats), 0)[0]


def score_mile(theta: Theta, stats: Union[InvariantStats, RhoForms]) -> Array:
    return _mile_parts(theta.rho, theta.sigma2, theta.omega2, _forms(stats), 1)[1]


def hessian_mile(theta: Theta, stats: Union[InvariantStats, RhoForms]) -> Array:
    return _mile_parts(theta.rho, theta.sigma2, theta.omega2, _forms(stats), 2)[2]


def q_mile_concentrated(rho: ArrayLike, stats: Union[InvariantStats, RhoForms]) -> ArrayLike:
    """the invariant objective with sigma2 and omega2 profiled out (up to an additive constant).

    Differs from the exact profile of :func:`q_mile` by the constant
    -(T-1)/(2T) - ln 2/(2T) whenever the profiled omega2 is interior.
    """
    f = _forms(stats)
    N, T = f.N, f.T
    a = f.trH(rho)
    b = f.q1(rho)
    _check_positive("tr(DWD'H)", a)
    _check_positive("1'DWD'1", b)
    return -0.5 * (T - 1) / T * np.log(a / (N * (T - 1))) - np.log(b / (N * T)) / (2 * T)


def mile_profile(rho: float, stats: Union[InvariantStats, RhoForms]) -> Theta:
    """Maximizer of the invariant objective over (sigma2, omega2) at fixed rho.

    Interior solution sigma2 = tr(DWD'H)/(N(T-1)), omega2 = (b/sigma2 - 1)/T
    with b = 1'DWD'1/(NT); falls back to omega2 = 0 when b <= sigma2.
    """
    f = _forms(stats)
    sigma2, omega2, _ = _profile_sigma_omega(f.trH(rho), f.q1(rho), 0.0, f)
    return Theta(float(rho), sigma2, omega2)


def _profile_sigma_omega(trH: float, q1: float, extra: float, f: RhoForms):
    """Joint maximizer over (sigma2, omega2) of the invariant-type objective.

    ``extra`` is a nonnegative residual sum added to tr(DWD') (the conditional
    Z1 residual; 0 for the unconditional objective). Returns (sigma2, omega2,
    boundary) with boundary=True when omega2 sits at 0.
    """
    N, T = f.N, f.T
    if not (trH + extra > 0 and q1 > 0):
        raise DegenerateDataError("nonpositive trace or quadratic form in profile")
    b = q1 / (N * T)
    s_int = (trH + extra) / (N * (T - 1))
    cands = []
    if b >= s_int:
        omega2 = (b / s_int - 1.0) / T
        val = -0.5 * (T - 1) / T * math.log(s_int) - (T - 1) / (2 * T) - math.log(2 * b) / (2 * T)
        cands.append((val, s_int, omega2, False))
    s_bd = (trH + q1 / T + extra) / (N * T)
    if b <= s_bd:
        val = -0.5 * math.log(s_bd) - 0.5 + (1.0 - LN2) / (2 * T)
        cands.append((val, s_bd, 0.0, True))
    if not cands:  # pragma: no cover - the profile is continuous so one branch is valid
        raise DegenerateDataError("no valid profile branch")
    best = max(cands, key=lambda c: c[0])
    return best[1], best[2], best[3]


def _profile_pieces(rho, trH: Quadratic, q1: Quadratic, extra: Quadratic | None, N: int, T: int):
    rho = np.asarray(rho, dtype=float)
    zero = Quadratic(0.0, 0.0, 0.0)
    ex = extra if extra is not None else zero
    a, da = trH(rho) + ex(rho), trH.d1(rho) + ex.d1(rho)
    q, dq = q1(rho), q1.d1(rho)
    _check_positive("tr(DWD'H)", a)
    _check_positive("1'DWD'1", q)
    b = q / (N * T)
    s_int = a / (N * (T - 1))
    s_bd = (a + q / T) / (N * T)
    v_int = np.where(
        b >= s_int,
        -0.5 * (T - 1) / T * np.log(s_int) - (T - 1) / (2 * T) - np.log(2 * b) / (2 * T),
        -np.inf,
    )
    v_bd = np.where(b <= s_bd, -0.5 * np.log(s_bd) - 0.5 + (1.0 - LN2) / (2 * T), -np.inf)
    interior = v_int >= v_bd
    val = np.where(interior, v_int, v_bd)
    d_int = -0.5 * (T - 1) / T * da / a - dq / (2 * T * q)
    d_bd = -0.5 * (da + dq / T) / (a + q / T)
    der = np.where(interior, d_int, d_bd)
    if val.ndim == 0:
        return float(val), float(der)
    return val, der


def q_mile_profile(rho: ArrayLike, stats: Union[InvariantStats, RhoForms]) -> ArrayLike:
    """Exact profile max over (sigma2, omega2 >= 0) of the invariant objective at each rho.

    Equals :func:`q_mile_concentrated` plus -(T-1)/(2T) - ln 2/(2T) wherever
    the profiled omega2 is positive, and uses the omega2 = 0 branch elsewhere.
    """
    f = _forms(stats)
    return _profile_pieces(rho, f.trH, f.q1, None, f.N, f.T)[0]


def score_mile_profile(rho: ArrayLike, stats: Union[InvariantStats, RhoForms]) -> ArrayLike:
    f = _forms(stats)
    return _profile_pieces(rho, f.trH, f.q1, None, f.N, f.T)[1]


# -- bias-adjusted objective --------------------------------------------------


def _lancaster_parts(rho, sigma2, f: RhoForms, order: int):
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be > 0, got {sigma2}")
    N, T = f.N, f.T
    c = N * (T - 1)
    a, a1, a2 = f.trH(rho), f.trH.d1(rho), f.trH.d2()
    val = -0.5 * math.log(sigma2) + ones_f(rho, T, 0) / (T * (T - 1)) - a / (2 * sigma2 * c)
    if order == 0:
        return val, None, None
    grad = np.array([
        ones_f(rho, T, 1) / (T * (T - 1)) - a1 / (2 * sigma2 * c),
        -0.5 / sigma2 + a / (2 * sigma2**2 * c),
    ])
    if order == 1:
        return val, grad, None
    hess = np.array([
        [ones_f(rho, T, 2) / (T * (T - 1)) - a2 / (2 * sigma2 * c), a1 / (2 * sigma2**2 * c)],
        [a1 / (2 * sigma2**2 * c), 0.5 / sigma2**2 - a / (sigma2**3 * c)],
    ])
    return val, grad, hess


def q_lancaster(rho: float, sigma2: float, stats: Union[InvariantStats, RhoForms]) -> float:
    return _lancaster_parts(rho, sigma2, _forms(stats), 0)[0]


def score_lancaster_2d(rho: float, sigma2: float, stats: Union[InvariantStats, RhoForms]) -> Array:
    return _lancaster_parts(rho, sigma2, _forms(stats), 1)[1]


def hessian_lancaster(rho: float, sigma2: float, stats: Union[InvariantStats, RhoForms]) -> Array:
    return _lancaster_parts(rho, sigma2, _forms(stats), 2)[2]


def lancaster_sigma2(rho: ArrayLike, stats: Union[InvariantStats, RhoForms]) -> ArrayLike:
    f = _forms(stats)
    return f.trH(rho) / (f.N * (f.T - 1))


def q_lancaster_concentrated(rho: ArrayLike, stats: Union[InvariantStats, RhoForms]) -> ArrayLike:
    """the bias-adjusted objective with sigma2 profiled out, dropping the constant -1/2."""
    f = _forms(stats)
    T = f.T
    a = f.trH(rho)
    _check_positive("tr(DWD'H)", a)
    return ones_f(rho, T, 0) / (T * (T - 1)) - 0.5 * np.log(a / (f.N * (T - 1)))


def q_ml_concentrated(rho: ArrayLike, stats: Union[InvariantStats, RhoForms]) -> ArrayLike:
    """the invariant-minus-adjusted term: the part of the concentrated the invariant objective that Lancaster's objective leaves out."""
    f = _forms(stats)
    T = f.T
    b = f.q1(rho)
    _check_positive("1'DWD'1", b)
    return -ones_f(rho, T, 0) / T**2 - np.log(b / (f.N * T)) / (2 * T)


# -- concentrated scores ----------------------------------------------------


def score_l(rho: ArrayLike, stats: Union[InvariantStats, RhoForms]) -> ArrayLike:
    f = _forms(stats)
    T = f.T
    d = f.trH(rho)
    _check_positive("tr(DWD'H)", d)
    n = -0.5 * f.trH.d1(rho)  # tr(J W D' H)
    return ones_f(rho, T, 1) / (T * (T - 1)) + n / d


def score_ml(rho: ArrayLike, stats: Union[InvariantStats, RhoForms]) -> ArrayLike:
    f = _forms(stats)
    T = f.T
    q = f.q1(rho)
    _check_positive("1'DWD'1", q)
    m = -0.5 * f.q1.d1(rho)  # 1'J W D' 1
    return -ones_f(rho, T, 1) / T**2 + m / (T * q)


def score_components(rho: ArrayLike, stats: Union[InvariantStats, RhoForms]):
    """(s_m, s_l, s_ml) with s_m = (T-1)/T * s_l + s_ml."""
    f = _forms(stats)
    s_l = score_l(rho, f)
    s_ml = score_ml(rho, f)
    s_m = (f.T - 1) / f.T * s_l + s_ml
    return s_m, s_l, s_ml


def score_m(rho: ArrayLike, stats: Union[InvariantStats, RhoForms]) -> ArrayLike:
    return score_components(rho, stats)[0]


def score_l_deriv(rho: ArrayLike, stats: Union[InvariantStats, RhoForms]) -> ArrayLike:
    f = _forms(stats)
    T = f.T
    d = f.trH(rho)
    n = -0.5 * f.trH.d1(rho)
    return ones_f(rho, T, 2) / (T * (T - 1)) + (2 * n * n - f.trH.c2 * d) / d**2


def score_ml_deriv(rho: ArrayLike, stats: Union[InvariantStats, RhoForms]) -> ArrayLike:
    f = _forms(stats)
    T = f.T
    q = f.q1(rho)
    m = -0.5 * f.q1.d1(rho)
    return -ones_f(rho, T, 2) / T**2 + (2 * m * m - f.q1.c2 * q) / (T * q**2)


def score_m_deriv(rho: ArrayLike, stats: Union[InvariantStats, RhoForms]) -> ArrayLike:
    f = _forms(stats)
    return (f.T - 1) / f.T * score_l_deriv(rho, f) + score_ml_deriv(rho, f)


# -- invariant objective conditional on y1 --------------------------------------


def _require_conditional(f: RhoForms) -> None:
    if f.resid is None:
        raise ValueError("conditional objective needs stats from conditional_invariant (Z1 missing)")


def _conditional_parts(theta1: Theta1, f: RhoForms, order: int):
    _require_conditional(f)
    rho, sigma2, delta, omega2 = theta1.rho, theta1.sigma2, theta1.delta, theta1.omega2
    N, T = f.N, f.T
    c = 2 * sigma2 * N * T
    xn = f.x_norm
    r = f.a0 + rho * f.a1 - xn * delta
    R = float(r @ r)
    val_m, g_m, h_m = _mile_parts(rho, sigma2, omega2, f, order)
    val = val_m - R / c
    if order == 0:
        return val, None, None
    R_r = 2.0 * float(r @ f.a1)
    R_d = -2.0 * xn * float(r.sum())
    grad = np.empty(4)
    grad[[0, 1, 3]] = g_m
    grad[0] -= R_r / c
    grad[1] += R / (c * sigma2)
    grad[2] = -R_d / c
    if order == 1:
        return val, grad, None
    R_rr = 2.0 * float(f.a1 @ f.a1)
    R_rd = -2.0 * xn * float(f.a1.sum())
    R_dd = 2.0 * xn * xn * T
    hess = np.zeros((4, 4))
    idx = np.ix_([0, 1, 3], [0, 1, 3])
    hess[idx] = h_m
    hess[0, 0] -= R_rr / c
    hess[0, 1] += R_r / (c * sigma2)
    hess[1, 0] = hess[0, 1]
    hess[1, 1] -= 2 * R / (c * sigma2**2)
    hess[0, 2] = hess[2, 0] = -R_rd / c
    hess[1, 2] = hess[2, 1] = R_d / (c * sigma2)
    hess[2, 2] = -R_dd / c
    return val, grad, hess


def q_mile_conditional(theta1: Theta1, stats: Union[InvariantStats, RhoForms]) -> float:
    """the conditional invariant objective(rho, sigma2, delta, omega2), the invariant likelihood given y1."""
    return _conditional_parts(theta1, _forms(stats), 0)[0]


def score_mile_conditional(theta1: Theta1, stats: Union[InvariantStats, RhoForms]) -> Array:
    return _conditional_parts(theta1, _forms(stats), 1)[1]


def hessian_mile_conditional(theta1: Theta1, stats: Union[InvariantStats, RhoForms]) -> Array:
    return _conditional_parts(theta1, _forms(stats), 2)[2]


def conditional_delta(rho: ArrayLike, stats: Union[InvariantStats, RhoForms]) -> ArrayLike:
    """Exact maximizer of the conditional invariant objective over delta at fixed rho."""
    f = _forms(stats)
    _require_conditional(f)
    return (f.a0.sum() + rho * f.a1.sum()) / (f.x_norm * f.T)


def conditional_profile(rho: float, sigma2: float, stats: Union[InvariantStats, RhoForms]) -> Theta1:
    """Maximizer of the conditional invariant objective over (delta, omega2) at fixed (rho, sigma2).

    delta solves a quadratic; omega2 = (b/sigma2 - 1)/T with
    b = 1'DWD'1/(NT), clipped at zero.
    """
    f = _forms(stats)
    _require_conditional(f)
    b = f.q1(rho) / (f.N * f.T)
    omega2 = max((b / sigma2 - 1.0) / f.T, 0.0)
    return Theta1(float(rho), float(sigma2), float(conditional_delta(rho, f)), omega2)


def q_mile_conditional_2d(rho: float, sigma2: float, stats: Union[InvariantStats, RhoForms]) -> float:
    """the conditional invariant objective concentrated in (delta, omega2), a function of (rho, sigma2)."""
    f = _forms(stats)
    return q_mile_conditional(conditional_profile(rho, sigma2, f), f)


def score_mile_conditional_2d(rho: float, sigma2: float, stats: Union[InvariantStats, RhoForms]) -> Array:
    """Gradient of :func:`q_mile_conditional_2d` (envelope theorem)."""
    f = _forms(stats)
    return score_mile_conditional(conditional_profile(rho, sigma2, f), f)[:2]


def conditional_full_profile(rho: float, stats: Union[InvariantStats, RhoForms]) -> Theta1:
    """Maximizer of the conditional invariant objective over (sigma2, delta, omega2) at fixed rho."""
    f = _forms(stats)
    _require_conditional(f)
    sigma2, omega2, _ = _profile_sigma_omega(f.trH(rho), f.q1(rho), f.resid(rho), f)
    return Theta1(float(rho), sigma2, float(conditional_delta(rho, f)), omega2)


def q_mile_conditional_concentrated(rho: ArrayLike, stats: Union[InvariantStats, RhoForms]) -> ArrayLike:
    """the conditional invariant objective profiled over (sigma2, delta, omega2), interior branch.

    Same shape as the unconditional profile with tr(DWD'H) replaced by
    tr(DWD'H) plus the Z1 residual. The level equals the exact profile
    value whenever the profiled omega2 is positive.
    """
    f = _forms(stats)
    _require_conditional(f)
    N, T = f.N, f.T
    s = (f.trH(rho) + f.resid(rho)) / (N * (T - 1))
    b = f.q1(rho) / (N * T)
    _check_positive("sigma2 profile", s)
    _check_positive("1'DWD'1", b)
    return -0.5 * (T - 1) / T * np.log(s) - (T - 1) / (2 * T) - np.log(2 * b) / (2 * T)


def q_mile_conditional_profile(rho: ArrayLike, stats: Union[InvariantStats, RhoForms]) -> ArrayLike:
    """Exact profile of the conditional invariant objective over (sigma2, delta, omega2 >= 0) at each rho."""
    f = _forms(stats)
    _require_conditional(f)
    return _profile_pieces(rho, f.trH, f.q1, f.resid, f.N, f.T)[0]


def score_mile_conditional_profile(rho: ArrayLike, stats: Union[InvariantStats, RhoForms]) -> ArrayLike:
    f = _forms(stats)
    _require_conditional(f)
    return _profile_pieces(rho, f.trH, f.q1, f.resid, f.N, f.T)[1]


def score_mile_conditional_concentrated(rho: ArrayLike, stats: Union[InvariantStats, RhoForms]) -> ArrayLike:
    f = _forms(stats)
    _require_conditional(f)
    T = f.T
    s = f.trH(rho) + f.resid(rho)
    ds = f.trH.d1(rho) + f.resid.d1(rho)
    b = f.q1(rho)
    return -0.5 * (T - 1) / T * ds / s - f.q1.d1(rho) / (2 * T * b)


def score_mile_conditional_concentrated_deriv(rho: ArrayLike, stats: Union[InvariantStats, RhoForms]) -> ArrayLike:
    f = _forms(stats)
    _require_conditional(f)
    T = f.T
    s = f.trH(rho) + f.resid(rho)
    ds = f.trH.d1(rho) + f.resid.d1(rho)
    dds = f.trH.d2() + f.resid.d2()
    b, db, ddb = f.q1(rho), f.q1.d1(rho), f.q1.d2()
    return -0.5 * (T - 1) / T * (dds * s - ds * ds) / s**2 - (ddb * b - db * db) / (2 * T * b**2)
