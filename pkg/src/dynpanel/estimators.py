"""Point estimators: MILE, MILE conditional on y1, and Lancaster's root set.

Every objective is one-dimensional in rho after profiling, so each
estimator scans a dense rho grid, takes the global grid maximum, and
refines inside the bracketing cell (golden section on the objective,
then a root polish on the analytic score).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy.optimize import brentq

from .dgp import PanelData
from .kernels import InvariantStats, conditional_invariant, maximal_invariant
from .likelihoods import (
    RhoForms,
    Theta,
    Theta1,
    conditional_full_profile,
    hessian_lancaster,
    lancaster_sigma2,
    mile_profile,
    q_lancaster_concentrated,
    q_mile_conditional,
    q_mile_conditional_profile,
    q_mile_profile,
    score_l,
    score_l_deriv,
    score_lancaster_2d,
    score_mile,
    score_mile_conditional,
    score_mile_conditional_profile,
    score_mile_profile,
    score_ml,
)

SELECTION_RULES = ("dhaene-jochmans", "kruiniger-hessian", "min-abs-sml")
UNIT_ROOT_BAND = 0.05
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class LancasterSingularityWarning(UserWarning):
    """Lancaster's limiting Hessian is singular (T = 2 or rho near 1)."""


@dataclass(frozen=True)
class SearchConfig:
    rho_bounds: tuple[float, float] = (-0.95, 1.40)
    grid_points: int = 801
    gradient_tol: float = 1e-9
    max_refine_iters: int = 200
    dj_interval: Optional[float] = None

    def __post_init__(self) -> None:
        lo, hi = self.rho_bounds
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise ValueError(f"rho_bounds must be finite with lower < upper, got {self.rho_bounds}")
        if self.grid_points < 51:
            raise ValueError("grid_points must be >= 51")
        if not self.gradient_tol > 0:
            raise ValueError("gradient_tol must be > 0")
        if self.dj_interval is not None and not self.dj_interval > 0:
            raise ValueError("dj_interval must be > 0")

    def grid(self) -> np.ndarray:
        return np.linspace(self.rho_bounds[0], self.rho_bounds[1], self.grid_points)


@dataclass
class EstimationResult:
    theta_hat: Union[Theta, Theta1]
    objective_at_max: float
    converged: bool
    estimator: str
    gradient_norm: float = math.nan
    boundary: bool = False
    n_local_maxima: Optional[int] = None
    all_roots: Optional[list[tuple[float, float]]] = None
    selection_rule: str = "none"
    reliable: bool = True
    messages: list[str] = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "theta_hat": dict(vars(self.theta_hat)),
            "objective_at_max": self.objective_at_max,
            "converged": self.converged,
            "gradient_norm": self.gradient_norm,
            "boundary": self.boundary,
            "n_local_maxima": self.n_local_maxima,
            "all_roots": None if self.all_roots is None else [list(r) for r in self.all_roots],
            "selection_rule": self.selection_rule,
            "reliable": self.reliable,
            "messages": list(self.messages),
            "details": dict(self.details),
        }


# -- 1-d search helpers -------------------------------------------------------


def golden_section_max(f: Callable[[float], float], lo: float, hi: float, xtol: float, max_iter: int):
    """Maximize a unimodal f on [lo, hi]; returns (x, f(x), iterations)."""
    a, b = lo, hi
    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    it = 0
    while b - a > xtol and it < max_iter:
        it += 1
        if f1 >= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - GOLDEN * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (b - a)
            f2 = f(x2)
    x = 0.5 * (a + b)
    return x, f(x), it


def _maximize_profile(
    obj: Callable, score: Callable, cfg: SearchConfig
) -> tuple[float, float, bool, int]:
    """Global grid argmax then golden-section + score polish.

    Returns (rho_hat, objective, boundary, iterations).
    """
    grid = cfg.grid()
    with np.errstate(all="ignore"):
        vals = obj(grid)
    vals = np.where(np.isfinite(vals), vals, -np.inf)
    k = int(np.argmax(vals))
    if not np.isfinite(vals[k]):
        raise ValueError("objective is not finite anywhere on the rho grid")
    if k == 0 or k == len(grid) - 1:
        return float(grid[k]), float(vals[k]), True, 0
    lo, hi = float(grid[k - 1]), float(grid[k + 1])
    x, _, it = golden_section_max(lambda r: float(obj(r)), lo, hi, 1e-10, cfg.max_refine_iters)
    s_lo, s_hi = float(score(lo)), float(score(hi))
    if s_lo > 0 > s_hi:
        x = brentq(lambda r: float(score(r)), lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                   maxiter=cfg.max_refine_iters)
    return float(x), float(obj(x)), False, it


def _stats(data: PanelData, conditional: bool) -> InvariantStats:
    if conditional:
        return conditional_invariant(data.Y, data.y1)
    return maximal_invariant(data.Y)


def _require_zero_initial(data: PanelData, who: str) -> None:
    if not data.zero_initial:
        raise ValueError(
            f"{who} needs a zero first column; difference the panel first (dgp.difference_panel)"
        )


# -- MILE -----------------------------------------------------------------------


def estimate_mile_stats(stats: InvariantStats, cfg: SearchConfig = SearchConfig()) -> EstimationResult:
    f = RhoForms.from_stats(stats)
    rho, obj, boundary, it = _maximize_profile(
        lambda r: q_mile_profile(r, f), lambda r: score_mile_profile(r, f), cfg
    )
    theta = mile_profile(rho, f)
    msgs = []
    if theta.omega2 == 0.0:
        msgs.append("profiled omega2 is at its boundary 0")
    if boundary:
        msgs.append(f"rho maximum at search bound {rho}")
        grad_norm = math.nan
    else:
        g = score_mile(theta, f)
        if theta.omega2 == 0.0:
            g = g[:2]
        grad_norm = float(np.linalg.norm(g))
    converged = (not boundary) and grad_norm < cfg.gradient_tol
    if not converged and not boundary:
        msgs.append(f"gradient norm {grad_norm:.3g} above tolerance")
    return EstimationResult(
        theta_hat=theta,
        objective_at_max=obj,
        converged=converged,
        estimator="mile",
        gradient_norm=grad_norm,
        boundary=boundary,
        messages=msgs,
        details={"refine_iterations": it},
    )


def estimate_mile(data: PanelData, cfg: SearchConfig = SearchConfig()) -> EstimationResult:
    """Maximal invariant likelihood estimator on zero-initial-condition data."""
    _require_zero_initial(data, "estimate_mile")
    if data.N < data.T + 1:
        raise ValueError(f"need N >= T + 1, got N={data.N}, T={data.T}")
    return estimate_mile_stats(_stats(data, False), cfg)


# -- conditional MILE ---------------------------------------------------------------


def estimate_mile_conditional_stats(stats: InvariantStats, cfg: SearchConfig = SearchConfig()) -> EstimationResult:
    f = RhoForms.from_stats(stats)
    rho, _, boundary, it = _maximize_profile(
        lambda r: q_mile_conditional_profile(r, f),
        lambda r: score_mile_conditional_profile(r, f),
        cfg,
    )
    theta = conditional_full_profile(rho, f)
    obj = q_mile_conditional(theta, f)
    msgs = []
    if theta.omega2 == 0.0:
        msgs.append("profiled omega2 is at its boundary 0")
    if boundary:
        msgs.append(f"rho maximum at search bound {rho}")
        grad_norm = math.nan
    else:
        g = score_mile_conditional(theta, f)
        if theta.omega2 == 0.0:
            g = g[:3]
        grad_norm = float(np.linalg.norm(g))
    converged = (not boundary) and grad_norm < cfg.gradient_tol
    if not converged and not boundary:
        msgs.append(f"gradient norm {grad_norm:.3g} above tolerance")
    return EstimationResult(
        theta_hat=theta,
        objective_at_max=obj,
        converged=converged,
        estimator="conditional",
        gradient_norm=grad_norm,
        boundary=boundary,
        messages=msgs,
        details={"refine_iterations": it},
    )


def estimate_mile_conditional(data: PanelData, cfg: SearchConfig = SearchConfig()) -> EstimationResult:
    """MILE conditional on the first observed column y1."""
    if not np.any(data.y1 != 0.0):
        raise ValueError(
            "y1 is identically zero, so there is nothing to condition on; use estimate_mile instead"
        )
    if data.N < data.T + 1:
        raise ValueError(f"need N >= T + 1, got N={data.N}, T={data.T}")
    return estimate_mile_conditional_stats(_stats(data, True), cfg)


# -- Lancaster -------------------------------------------------------------------------


def within_mle(stats: Union[InvariantStats, RhoForms]) -> float:
    """Fixed-effects (within-group) ML estimate of rho: argmin of tr(DWD'H)."""
    f = stats if isinstance(stats, RhoForms) else RhoForms.from_stats(stats)
    return -f.trH.c1 / (2.0 * f.trH.c2)


def _lancaster_local_maxima(f: RhoForms, cfg: SearchConfig) -> list[float]:
    grid = cfg.grid()
    with np.errstate(all="ignore"):
        s = score_l(grid, f)
    roots = []
    for i in range(len(grid) - 1):
        a, b = s[i], s[i + 1]
        if not (np.isfinite(a) and np.isfinite(b)):
            continue
        # + to - crossing of the concentrated score is a local maximum
        if a > 0 and b <= 0:
            lo, hi = float(grid[i]), float(grid[i + 1])
            if b == 0:
                r = hi
            else:
                r = brentq(lambda x: float(score_l(x, f)), lo, hi, xtol=1e-15,
                           rtol=4 * np.finfo(float).eps, maxiter=cfg.max_refine_iters)
            roots.append(float(r))
    return roots


def _second_difference(f: RhoForms, r: float, h: float = 1e-4) -> float:
    return float(
        q_lancaster_concentrated(r + h, f) - 2 * q_lancaster_concentrated(r, f) + q_lancaster_concentrated(r - h, f)
    ) / h**2


def lancaster_roots_stats(
    stats: InvariantStats,
    cfg: SearchConfig = SearchConfig(),
    rule: str = "min-abs-sml",
) -> EstimationResult:
    if rule not in SELECTION_RULES:
        raise ValueError(f"rule must be one of {SELECTION_RULES}, got {rule!r}")
    f = RhoForms.from_stats(stats)
    T = f.T
    msgs: list[str] = []
    reliable = True
    if T == 2:
        reliable = False
        msgs.append("T = 2: Lancaster's limiting Hessian is singular; result unreliable")
        warnings.warn(msgs[-1], LancasterSingularityWarning, stacklevel=3)

    candidates = [r for r in _lancaster_local_maxima(f, cfg) if _second_difference(f, r) < 0]
    candidates.sort()
    all_roots = [(r, abs(float(score_ml(r, f)))) for r in candidates]
    details: dict = {}

    if not candidates:
        msgs.append("no local maximum of Lancaster's objective in the search range; returning rho = 0")
        s2 = float(lancaster_sigma2(0.0, f))
        return EstimationResult(
            theta_hat=Theta(0.0, s2, 0.0),
            objective_at_max=float(q_lancaster_concentrated(0.0, f)),
            converged=False,
            estimator="lancaster",
            n_local_maxima=0,
            all_roots=[],
            selection_rule=rule,
            reliable=False,
            messages=msgs,
        )

    if rule == "min-abs-sml":
        k = min(range(len(candidates)), key=lambda i: (all_roots[i][1], candidates[i]))
    elif rule == "dhaene-jochmans":
        mle = within_mle(f)
        details["within_mle"] = mle
        pool = list(range(len(candidates)))
        if cfg.dj_interval is not None:
            details["dj_interval"] = [mle - cfg.dj_interval, mle + cfg.dj_interval]
            inside = [i for i in pool if abs(candidates[i] - mle) <= cfg.dj_interval]
            if inside:
                pool = inside
            else:
                msgs.append("no root inside the Dhaene-Jochmans interval; using the nearest root")
        k = min(pool, key=lambda i: (abs(candidates[i] - mle), candidates[i]))
    else:
        qf = []
        for r in candidates:
            s2 = float(lancaster_sigma2(r, f))
            g = score_lancaster_2d(r, s2, f)
            Hs = hessian_lancaster(r, s2, f)
            negdef = bool(np.all(np.linalg.eigvalsh(Hs) < 0))
            qf.append((float(g @ g), negdef))
        pool = [i for i in range(len(candidates)) if qf[i][1]] or list(range(len(candidates)))
        best = min(qf[i][0] for i in pool)
        tied = [i for i in pool if qf[i][0] <= best + cfg.gradient_tol**2]
        k = min(tied, key=lambda i: (all_roots[i][1], candidates[i]))
        details["score_quadratic_form"] = [q for q, _ in qf]
        details["negative_definite"] = [nd for _, nd in qf]

    rho = candidates[k]
    s2 = float(lancaster_sigma2(rho, f))
    grad = float(abs(score_l(rho, f)))
    if abs(rho - 1.0) < UNIT_ROOT_BAND:
        reliable = False
        msgs.append(f"rho_hat = {rho:.4f} is near 1 where Lancaster's limiting Hessian is singular; result unreliable")
        warnings.warn(msgs[-1], LancasterSingularityWarning, stacklevel=3)
    lo, hi = cfg.rho_bounds
    boundary = not (lo < rho < hi)
    return EstimationResult(
        theta_hat=Theta(rho, s2, 0.0),
        objective_at_max=float(q_lancaster_concentrated(rho, f)),
        converged=grad < cfg.gradient_tol and not boundary,
        estimator="lancaster",
        gradient_norm=grad,
        boundary=boundary,
        n_local_maxima=len(candidates),
        all_roots=all_roots,
        selection_rule=rule,
        reliable=reliable,
        messages=msgs,
        details=details,
    )


def lancaster_roots(
    data: PanelData, cfg: SearchConfig = SearchConfig(), rule: str = "min-abs-sml"
) -> EstimationResult:
    """All local maxima of Lancaster's concentrated objective and the selected root.

    ``theta_hat.omega2`` is not estimated by Lancaster's objective and is
    reported as 0.
    """
    _require_zero_initial(data, "lancaster_roots")
    return lancaster_roots_stats(_stats(data, False), cfg, rule)


def score_l_curvature(rho: float, stats: Union[InvariantStats, RhoForms]) -> float:
    """Analytic derivative of the concentrated Lancaster score (diagnostic)."""
    return float(score_l_deriv(rho, stats))
