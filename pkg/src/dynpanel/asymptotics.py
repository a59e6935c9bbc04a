"""Closed-form information matrices, score variances and AVar comparisons.

All functions evaluate the displayed large-N, fixed-T formulas at a true
parameter point; nothing here simulates. Singular or ill-conditioned
matrices are reported through ``flags`` rather than raised.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
from numpy.typing import NDArray

from .kernels import build_f_matrices
from .likelihoods import Theta, Theta1

Array = NDArray[np.float64]

COND_LIMIT = 1e10
ESTIMATORS = ("mile", "lancaster", "conditional")


@dataclass(frozen=True)
class FConstants:
    """Scalar functionals of the limiting lag kernels used by every formula (each divided by T)."""

    T: int
    f1: float  # 1'F1 1 / T
    f2: float  # 1'F2 1
    trFF: float  # tr(F1 F1') / T
    fFt: float  # 1'F1 F1' 1 / T
    fTf: float  # 1'F1' F1 1 / T


def f_constants(rho: float, T: int) -> FConstants:
    F = build_f_matrices(rho, T)
    F1 = F.F1
    one = np.ones(T)
    return FConstants(
        T=T,
        f1=float(F1.sum()) / T,
        f2=float(F.F2.sum()),
        trFF=float(np.trace(F1 @ F1.T)) / T,
        fFt=float(one @ F1 @ F1.T @ one) / T,
        fTf=float(one @ F1.T @ F1 @ one) / T,
    )


def _rel_cond(M: Array) -> float:
    try:
        return float(np.linalg.cond(M))
    except np.linalg.LinAlgError:  # pragma: no cover
        return math.inf


def info_mile(theta_star: Theta, T: int) -> Array:
    """3 x 3 information of the invariant likelihood at (rho, sigma2, omega2)."""
    if not theta_star.omega2 > 0:
        raise ValueError("info_mile requires omega2 > 0")
    c = f_constants(theta_star.rho, T)
    s2 = theta_star.sigma2
    w = theta_star.omega2
    w2 = w * w
    g = 1.0 + 2.0 * w * T
    r = (1.0 + w * T) / g
    F1sum = c.f1 * T
    h = c.trFF + w2 * T / (1.0 + w * T) * (c.fFt + c.f1**2 / g)
    I = np.empty((3, 3))
    I[0, 0] = h
    I[0, 1] = I[1, 0] = w2 / s2 * F1sum / g
    I[0, 2] = I[2, 0] = r * c.f1
    I[1, 1] = 1.0 / (2.0 * s2**2) * (1.0 + w2 * T / g)
    I[1, 2] = I[2, 1] = 1.0 / (2.0 * s2) * r
    I[2, 2] = T / (2.0 * g)
    return I


def _lancaster_h(c: FConstants, w: float) -> float:
    T = c.T
    return (
        -c.f2 / (T * (T - 1))
        + c.trFF * T / (T - 1)
        + c.fTf * (w * T - 1.0) / (T - 1)
        - w * T / (T - 1) * c.f1**2
    )


def lancaster_a(theta_star: Theta, T: int) -> float:
    c = f_constants(theta_star.rho, T)
    return 2.0 * _lancaster_h(c, theta_star.omega2) + 2.0 * c.f2 / (T * (T - 1))


def info_lancaster(theta_star: Theta, T: int) -> tuple[Array, Array, list[str]]:
    """(bias-adjusted information, score variance, flags): limiting minus-Hessian and score variance of the bias-adjusted objective."""
    if T < 2:
        raise ValueError("T must be >= 2")
    c = f_constants(theta_star.rho, T)
    s2 = theta_star.sigma2
    I = np.empty((2, 2))
    I[0, 0] = _lancaster_h(c, theta_star.omega2)
    I[0, 1] = I[1, 0] = -c.f1 * T / (s2 * T * (T - 1))
    I[1, 1] = 1.0 / (2.0 * s2**2)
    a = 2.0 * I[0, 0] + 2.0 * c.f2 / (T * (T - 1))
    Sigma = T / (T - 1) * np.array([[a, I[0, 1]], [I[0, 1], I[1, 1]]])
    flags = []
    if T == 2:
        flags.append("lancaster: bias-adjusted information singular at T=2")
    if theta_star.rho == 1.0:
        flags.append("lancaster: bias-adjusted information singular at rho*=1")
    cond = _rel_cond(I)
    if cond > COND_LIMIT and not flags:
        flags.append(f"lancaster: bias-adjusted information ill-conditioned (cond={cond:.3g})")
    return I, Sigma, flags


def score_component_variances(theta_star: Theta, T: int) -> tuple[float, float]:
    """(b_T, c_T): limiting variances of sqrt(NT) the adjusted score(rho*) and sqrt(NT) the invariant-minus-adjusted score(rho*)."""
    c = f_constants(theta_star.rho, T)
    a = 2.0 * _lancaster_h(c, theta_star.omega2) + 2.0 * c.f2 / (T * (T - 1))
    b_T = a - 2.0 * T / (T - 1) ** 3 * c.f1**2
    c_T = 2.0 * T / (1.0 + theta_star.omega2 * T) * (c.fTf - c.f1**2)
    return b_T, c_T


def score_covariance_direct(theta_star: Theta, T: int) -> dict[str, Array]:
    """Limiting covariances of the Lancaster-side scores from Gaussian moments.

    Each score at the truth is, to first order, an average over individuals of
    (eta_i / sigma) u_i'l + u_i'Q u_i - E[.]; for two such scores the limiting
    covariance of sqrt(NT) times them is T s_j s_k (omega2 l_j'l_k + 2 tr(Q_j Q_k)).
    Returns ``lancaster_2d`` (covariance of the (rho, sigma2) score of the bias-adjusted objective) and
    ``concentrated`` (covariance of the concentrated the adjusted score and the invariant-minus-adjusted score).
    Used to cross-check the closed forms above against simulation.
    """
    rho, s2, w = theta_star.rho, theta_star.sigma2, theta_star.omega2
    F1 = build_f_matrices(rho, T).F1
    one = np.ones(T)
    H = np.eye(T) - np.full((T, T), 1.0 / T)
    f = float(F1.sum())
    c = F1.T @ one
    q = c - f / T * one

    def sym(M):
        return 0.5 * (M + M.T)

    # (scale, l, Q) per score component
    rho_l = (1.0 / (T - 1), H @ F1 @ one, sym(H @ F1))
    sig_l = (1.0 / (2.0 * s2 * (T - 1)), np.zeros(T), H)
    conc_l = (1.0 / (T - 1), H @ F1 @ one, sym(H @ F1) + f / (T * (T - 1)) * H)
    conc_ml = (1.0 / (T**2 * (1.0 + w * T)), T * c - f * one, sym(np.outer(one, q)))

    def cov(parts):
        n = len(parts)
        out = np.empty((n, n))
        for j, (sj, lj, Qj) in enumerate(parts):
            for k, (sk, lk, Qk) in enumerate(parts):
                out[j, k] = T * sj * sk * (w * float(lj @ lk) + 2.0 * float(np.trace(Qj @ Qk)))
        return out

    return {"lancaster_2d": cov([rho_l, sig_l]), "concentrated": cov([conc_l, conc_ml])}


def lancaster_sandwich_direct(theta_star: Theta, T: int) -> Array:
    """Sandwich variance with Sigma from :func:`score_covariance_direct`."""
    I, _, _ = info_lancaster(theta_star, T)
    return sandwich(I, score_covariance_direct(theta_star, T)["lancaster_2d"])


def info_conditional(theta1_star: Theta1, T: int, y1_norm_bar2: float) -> Array:
    """2 x 2 information for (rho, sigma2) of the likelihood conditional on y1."""
    if not y1_norm_bar2 > 0:
        raise ValueError("y1_norm_bar2 must be > 0")
    if not theta1_star.omega2 > 0:
        raise ValueError("info_conditional requires omega2 > 0")
    c = f_constants(theta1_star.rho, T)
    s2 = theta1_star.sigma2
    w = theta1_star.omega2
    gap = theta1_star.delta + theta1_star.rho - 1.0
    d = (
        (c.fTf + w * T * c.f1**2) / (T * (1.0 + w * T))
        - 2.0 / T * c.f1**2
        + (w + y1_norm_bar2 / s2 * gap**2) * (c.fTf - c.f1**2)
        + c.trFF
        - c.fTf / T
    )
    I = np.empty((2, 2))
    I[0, 0] = d
    I[0, 1] = I[1, 0] = -c.f1 * T / (s2 * T**2)
    I[1, 1] = (T - 1) / (2.0 * s2**2 * T)
    return I


def differenced_omega2(theta1_star: Theta1, y1_norm_bar2: float) -> float:
    """omega2 of the differenced effects eta - (1 - rho) y1 implied by the conditional parameters."""
    gap = theta1_star.delta + theta1_star.rho - 1.0
    return theta1_star.omega2 + y1_norm_bar2 / theta1_star.sigma2 * gap**2


def _inverse(M: Array, label: str, flags: list[str]) -> Array:
    cond = _rel_cond(M)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        flags.append(f"{label}: ill-conditioned (cond={cond:.3g})")
    n = M.shape[0]
    try:
        return np.linalg.solve(M, np.eye(n))
    except np.linalg.LinAlgError:
        flags.append(f"{label}: singular")
        return np.full((n, n), np.nan)


def sandwich(I: Array, Sigma: Array) -> Array:
    """I^{-1} Sigma I^{-1} via linear solves."""
    left = np.linalg.solve(I, Sigma)
    return np.linalg.solve(I, left.T).T


@dataclass
class AsymptoticReport:
    T: int
    theta1_star: Optional[Theta1]
    theta_star_diff: Theta
    y1_norm_bar2: Optional[float]
    info_mile: Array
    info_lanc: Array
    sigma_lanc: Array
    info_cond: Optional[Array]
    b_T: float
    c_T: float
    avar_rho: dict[str, float] = field(default_factory=dict)
    avar_sigma2: dict[str, float] = field(default_factory=dict)
    singular_flags: list[str] = field(default_factory=list)
    conditional_gain_case: Optional[str] = None

    def to_dict(self) -> dict[str, Any]:
        def mat(M):
            return None if M is None else [[float(v) for v in row] for row in M]

        return {
            "T": self.T,
            "theta1_star": None if self.theta1_star is None else vars(self.theta1_star),
            "theta_star_diff": vars(self.theta_star_diff),
            "y1_norm_bar2": self.y1_norm_bar2,
            "info_mile": mat(self.info_mile),
            "info_lanc": mat(self.info_lanc),
            "sigma_lanc": mat(self.sigma_lanc),
            "info_cond": mat(self.info_cond),
            "b_T": self.b_T,
            "c_T": self.c_T,
            "avar_rho": dict(self.avar_rho),
            "avar_sigma2": dict(self.avar_sigma2),
            "singular_flags": list(self.singular_flags),
            "conditional_gain_case": self.conditional_gain_case,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True) + "\n"

    def csv_rows(self, point_id: int = 0) -> list[dict[str, Any]]:
        t = self.theta_star_diff
        t1 = self.theta1_star
        rows = []
        for est in ESTIMATORS:
            if est not in self.avar_rho:
                continue
            rows.append({
                "point": point_id,
                "T": self.T,
                "rho": t.rho,
                "sigma2": t.sigma2,
                "omega2_diff": t.omega2,
                "delta": "" if t1 is None else t1.delta,
                "omega2_cond": "" if t1 is None else t1.omega2,
                "y1_norm_bar2": "" if self.y1_norm_bar2 is None else self.y1_norm_bar2,
                "estimator": est,
                "avar_rho": self.avar_rho[est],
                "avar_sigma2": self.avar_sigma2[est],
                "flags": ";".join(self.singular_flags),
            })
        return rows


CSV_FIELDS = [
    "point", "T", "rho", "sigma2", "omega2_diff", "delta", "omega2_cond",
    "y1_norm_bar2", "estimator", "avar_rho", "avar_sigma2", "flags",
]


def reports_to_csv(reports: list[AsymptoticReport]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for i, rep in enumerate(reports):
        for row in rep.csv_rows(i):
            w.writerow({k: (format(v, ".17g") if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def avar_compare(
    theta1_star: Optional[Theta1],
    T: int,
    y1_norm_bar2: Optional[float] = None,
    theta_star_diff: Optional[Theta] = None,
    rtol: float = 1e-10,
) -> AsymptoticReport:
    """Asymptotic variances of the three estimators at linked parameter points.

    With ``theta1_star`` given, the differenced-model point is derived from it
    (omega2 of eta - (1 - rho) y1); a caller-supplied ``theta_star_diff`` must
    agree with that derivation. Without ``theta1_star`` only the MILE and
    Lancaster entries are filled, at ``theta_star_diff``.
    """
    flags: list[str] = []
    if theta1_star is not None:
        if y1_norm_bar2 is None:
            raise ValueError("y1_norm_bar2 is required with theta1_star")
        implied = Theta(theta1_star.rho, theta1_star.sigma2, differenced_omega2(theta1_star, y1_norm_bar2))
        if theta_star_diff is not None:
            same = (
                theta_star_diff.rho == implied.rho
                and theta_star_diff.sigma2 == implied.sigma2
                and math.isclose(theta_star_diff.omega2, implied.omega2, rel_tol=rtol, abs_tol=rtol)
            )
            if not same:
                raise ValueError(
                    f"theta_star_diff {theta_star_diff} contradicts the differenced point "
                    f"implied by theta1_star, {implied}"
                )
        theta_star_diff = implied
    elif theta_star_diff is None:
        raise ValueError("need theta1_star or theta_star_diff")

    IM = info_mile(theta_star_diff, T)
    IL, Sig, lflags = info_lancaster(theta_star_diff, T)
    flags.extend(lflags)
    b_T, c_T = score_component_variances(theta_star_diff, T)

    avar_rho: dict[str, float] = {}
    avar_s2: dict[str, float] = {}
    IMinv = _inverse(IM, "mile: invariant information", flags)
    avar_rho["mile"] = float(IMinv[0, 0])
    avar_s2["mile"] = float(IMinv[1, 1])
    if lflags:
        avar_rho["lancaster"] = math.nan
        avar_s2["lancaster"] = math.nan
    else:
        sw = sandwich(IL, Sig)
        avar_rho["lancaster"] = float(sw[0, 0])
        avar_s2["lancaster"] = float(sw[1, 1])

    IC = None
    case = None
    if theta1_star is not None:
        IC = info_conditional(theta1_star, T, y1_norm_bar2)
        ICinv = _inverse(IC, "conditional: information", flags)
        avar_rho["conditional"] = float(ICinv[0, 0])
        avar_s2["conditional"] = float(ICinv[1, 1])
        gap = theta1_star.delta + theta1_star.rho - 1.0
        case = "equality" if abs(gap) <= 1e-12 else "strict"

    return AsymptoticReport(
        T=T,
        theta1_star=theta1_star,
        theta_star_diff=theta_star_diff,
        y1_norm_bar2=y1_norm_bar2,
        info_mile=IM,
        info_lanc=IL,
        sigma_lanc=Sig,
        info_cond=IC,
        b_T=b_T,
        c_T=c_T,
        avar_rho=avar_rho,
        avar_sigma2=avar_s2,
        singular_flags=flags,
        conditional_gain_case=case,
    )
