"""Predicted and empirical first/second moments of the invariant statistics.

Moment sets are vectorized in one canonical order: any first-moment block
comes first, then the upper triangle of the symmetric second-moment block
read row by row. Residual norms compare predicted and empirical vectors in
that order.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Any, Callable, Optional, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import minimize

from .dgp import PanelData
from .kernels import build_model_matrices
from .likelihoods import Theta, Theta1

Array = NDArray[np.float64]

FAMILIES = ("conditional", "differenced", "incidental-initial", "cre", "blundell-bond")
N_PARAMS = {"conditional": 4, "differenced": 3, "incidental-initial": 5, "cre": 7, "blundell-bond": 4}


def moment_count(family: str, T: int) -> int:
    if family == "conditional":
        return T + T * (T + 1) // 2
    if family == "differenced":
        return T * (T + 1) // 2
    if family in ("incidental-initial", "blundell-bond"):
        return (T + 1) * (T + 2) // 2
    if family == "cre":
        return (T + 1) + (T + 1) * (T + 2) // 2
    raise ValueError(f"unknown moment family {family!r}")


def vech(M: Array) -> Array:
    """Upper triangle of a symmetric matrix, row-major."""
    return M[np.triu_indices(M.shape[0])]


def stack(first: Optional[Array], second: Array) -> Array:
    parts = [] if first is None else [np.ravel(first)]
    parts.append(vech(second))
    return np.concatenate(parts)


@dataclass
class MomentReport:
    family: str
    predicted: Array
    empirical: Array
    n_params: int
    T: int

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        self.predicted = np.asarray(self.predicted, dtype=float)
        self.empirical = np.asarray(self.empirical, dtype=float)
        n = moment_count(self.family, self.T)
        if self.predicted.shape != (n,) or self.empirical.shape != (n,):
            raise ValueError(f"{self.family} moments must have length {n}")

    @property
    def n_moments(self) -> int:
        return self.predicted.shape[0]

    @property
    def residual(self) -> Array:
        return self.empirical - self.predicted

    @property
    def residual_norm(self) -> float:
        return float(np.linalg.norm(self.residual))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["family", "moment_index", "predicted", "empirical", "residual"])
        for i, (p, e) in enumerate(zip(self.predicted, self.empirical)):
            w.writerow([self.family, i, format(p, ".17g"), format(e, ".17g"), format(e - p, ".17g")])
        return buf.getvalue()


def _check_psd(name: str, M: Array) -> Array:
    M = np.asarray(M, dtype=float)
    if M.shape != (2, 2) or not np.allclose(M, M.T, atol=1e-12):
        raise ValueError(f"{name} must be a symmetric 2 x 2 matrix")
    if np.linalg.eigvalsh(M).min() < -1e-12 * max(1.0, abs(np.trace(M))):
        raise ValueError(f"{name} must be positive semidefinite")
    return M


def _e1(n: int) -> Array:
    e = np.zeros(n)
    e[0] = 1.0
    return e


# -- predictions ----------------------------------------------------------------


def conditional_moments(theta1: Theta1, y1: Array, T: int) -> tuple[Array, Array]:
    """E[(y1'y1)^{-1} y1'Y | y1] (length T) and E[Y'Y/N | y1] (T x T)."""
    y1 = np.asarray(y1, dtype=float).ravel()
    yy = float(y1 @ y1)
    if yy == 0.0:
        raise ValueError("y1 is identically zero")
    N = y1.shape[0]
    B = build_model_matrices(theta1.rho, T).B
    s2 = theta1.sigma2
    one = np.ones(T)
    pi = theta1.rho * (B @ _e1(T)) + theta1.delta * (B @ one)
    omega_y1 = yy / (s2 * N)
    second = s2 * B @ (theta1.omega2 * np.outer(one, one) + np.eye(T)) @ B.T
    second = second + s2 * omega_y1 * np.outer(pi, pi)
    return pi, second


def differenced_moments(theta: Theta, T: int) -> Array:
    """E[Y~'Y~/N] for differenced (zero-initial) data."""
    B = build_model_matrices(theta.rho, T).B
    one = np.ones(T)
    return theta.sigma2 * B @ (theta.omega2 * np.outer(one, one) + np.eye(T)) @ B.T


@dataclass(frozen=True)
class IncidentalInitialParams:
    rho: float
    sigma2: float
    omega_tau: Any  # 2x2, standardized second moments of (y0, eta)


@dataclass(frozen=True)
class CreParams:
    rho: float
    sigma2: float
    iota: Any  # length 2: means of (y0, eta)
    phi: Any  # 2x2 covariance of (y0, eta)


@dataclass(frozen=True)
class BlundellBondParams:
    rho: float
    sigma2: float
    omega2: float
    sigma0_2: float


def _loading(rho: float, T1: int) -> Array:
    """[rho e1, 1] as a T1 x 2 matrix."""
    return np.column_stack([rho * _e1(T1), np.ones(T1)])


def random_effects_moments(variant: str, params, T: int) -> tuple[Optional[Array], Array]:
    """Predicted (first, second) moments of Y_{T+1} = [y1 ... y_{T+1}] under each random-effects view.

    ``first`` is E[1'Y/N] for ``cre`` and None otherwise; ``second`` is the
    (T+1) x (T+1) matrix E[Y'Y/N].
    """
    T1 = T + 1
    if variant == "incidental-initial":
        Om = _check_psd("omega_tau", params.omega_tau)
        B = build_model_matrices(params.rho, T1).B
        L = _loading(params.rho, T1)
        return None, params.sigma2 * B @ (L @ Om @ L.T + np.eye(T1)) @ B.T
    if variant == "cre":
        Phi = _check_psd("phi", params.phi)
        iota = np.asarray(params.iota, dtype=float).ravel()
        if iota.shape != (2,):
            raise ValueError("iota must have length 2")
        B = build_model_matrices(params.rho, T1).B
        L = _loading(params.rho, T1)
        first = B @ L @ iota
        second = B @ (L @ (Phi + np.outer(iota, iota)) @ L.T + params.sigma2 * np.eye(T1)) @ B.T
        return first, second
    if variant == "blundell-bond":
        rho = params.rho
        if not abs(rho) < 1:
            raise ValueError("blundell-bond moments require |rho| < 1")
        if params.sigma0_2 < 0 or params.omega2 < 0:
            raise ValueError("sigma0_2 and omega2 must be >= 0")
        B = build_model_matrices(rho, T1).B
        e1 = _e1(T1)
        one = np.ones(T1)
        k = rho / (1.0 - rho)
        base = B @ (params.sigma0_2 * rho**2 * np.outer(e1, e1) + params.sigma2 * np.eye(T1)) @ B.T
        eff = np.outer(one, one) + k * (np.outer(e1, one) + np.outer(one, e1)) + k**2 * np.outer(e1, e1)
        return None, base + params.sigma2 * params.omega2 * B @ eff @ B.T
    raise ValueError(f"unknown random-effects variant {variant!r}")


# -- sample analogues ---------------------------------------------------------------


def empirical_conditional_moments(y1: Array, Y: Array) -> tuple[Array, Array]:
    y1 = np.asarray(y1, dtype=float).ravel()
    Y = np.asarray(Y, dtype=float)
    return (y1 @ Y) / float(y1 @ y1), Y.T @ Y / Y.shape[0]


def empirical_second_moment(Y: Array) -> Array:
    Y = np.asarray(Y, dtype=float)
    return Y.T @ Y / Y.shape[0]


def empirical_first_moment(Y: Array) -> Array:
    Y = np.asarray(Y, dtype=float)
    return Y.mean(axis=0)


def report(family: str, predicted: tuple, empirical: tuple, T: int) -> MomentReport:
    """Build a MomentReport from (first, second) pairs; ``first`` may be None."""
    return MomentReport(
        family=family,
        predicted=stack(*predicted),
        empirical=stack(*empirical),
        n_params=N_PARAMS[family],
        T=T,
    )


# -- Blundell-Bond moment and the Lindeberg ratio ---------------------------------------


def bb98_terms(data: PanelData, rho: float) -> Array:
    if data.T < 2:
        raise ValueError("need T >= 2 (three observed periods)")
    y1, y2, y3 = data.Y_full[:, 0], data.Y_full[:, 1], data.Y_full[:, 2]
    return (y2 - y1) * (y3 - rho * y2)


def bb98_moment(data: PanelData, rho: float) -> float:
    """N^{-1} sum_i (y_i2 - y_i1)(y_i3 - rho y_i2)."""
    return float(np.mean(bb98_terms(data, rho)))


def bb98_statistic(data: PanelData, rho: float) -> tuple[float, float]:
    """(moment, standard error) with the standard error sd/sqrt(N)."""
    t = bb98_terms(data, rho)
    return float(t.mean()), float(t.std(ddof=1) / math.sqrt(t.shape[0]))


def lindeberg_ratio(y0: Array, sigma2: float = 1.0) -> float:
    """max_j Var(y_j0 u_jt) / sum_i Var(y_i0 u_it); sigma2 cancels."""
    if not sigma2 > 0:
        raise ValueError("sigma2 must be > 0")
    v = np.asarray(y0, dtype=float) ** 2 * sigma2
    tot = float(v.sum())
    if tot == 0.0:
        raise ValueError("all y0 are zero")
    return float(v.max() / tot)


# -- minimum distance ---------------------------------------------------------------


def md_estimate(
    empirical: Array,
    predict: Callable[[Array], Array],
    x0: Sequence[float],
    bounds: Optional[Sequence[tuple[Optional[float], Optional[float]]]] = None,
):
    """Identity-weighted minimum distance: argmin ||empirical - predict(x)||^2.

    Returns the scipy OptimizeResult.
    """
    empirical = np.asarray(empirical, dtype=float)

    def loss(x):
        r = empirical - predict(np.asarray(x))
        return float(r @ r)

    return minimize(loss, np.asarray(x0, dtype=float), method="L-BFGS-B" if bounds else "BFGS", bounds=bounds)
